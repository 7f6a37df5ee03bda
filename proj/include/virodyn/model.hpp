#pragma once

// Model constants, the virotherapy threshold test, and the smallness
// certificate (eps, delta, K) that underwrites every decay bound used by the
// harness. The transformed unknowns are a = u e^{-v}, b = w e^{-v}; the
// reaction terms f and g below are the transformed ones.

#include <algorithm>
#include <cmath>
#include <optional>
#include <stdexcept>
#include <string>

#include "grid.hpp"

namespace virodyn {

struct ModelParams {
    double mu = 1.0;
    double beta = 1.2;
    double dz = 1.0;

    void validate() const {
        if (!(mu > 0.0) || !std::isfinite(mu))
            throw std::invalid_argument("ModelParams: mu must be positive");
        if (!(beta > 0.0) || !std::isfinite(beta))
            throw std::invalid_argument("ModelParams: beta must be positive");
        if (!(dz > 0.0) || !std::isfinite(dz))
            throw std::invalid_argument("ModelParams: dz must be positive");
    }
};

// Transformed tumor reaction: f = -a z + a (a+b) e^v v + mu a (1 - e^v a).
inline double eval_f(double a, double b, double v, double z, double mu) {
    const double ev = std::exp(v);
    return -a * z + a * (a + b) * ev * v + mu * a * (1.0 - ev * a);
}

// Transformed infected reaction: g = -b + a z + b (a+b) e^v v.
inline double eval_g(double a, double b, double v, double z, double mu) {
    (void)mu;
    const double ev = std::exp(v);
    return -b + a * z + b * (a + b) * ev * v;
}

// Right-hand side of the admissibility threshold: 1 + (1 + 1/u0_min)^{-1}.
inline double threshold_cap(double u0_min) {
    if (!(u0_min > 0.0))
        throw std::invalid_argument("threshold_cap: u0_min must be positive");
    return 1.0 + 1.0 / (1.0 + 1.0 / u0_min);
}

inline bool check_threshold(double beta, double u0_min, double u0_max) {
    if (!(u0_min > 0.0))
        throw std::invalid_argument("check_threshold: u0_min must be positive");
    if (!(u0_max >= u0_min))
        throw std::invalid_argument("check_threshold: u0_max must be >= u0_min");
    if (!(beta > 0.0))
        throw std::invalid_argument("check_threshold: beta must be positive");
    return beta * std::max(1.0, u0_max) < threshold_cap(u0_min);
}

// Midpoint of the admissible K-window.
inline double default_K(double beta, double u0_min, double u0_max) {
    if (!check_threshold(beta, u0_min, u0_max))
        throw std::invalid_argument("default_K: threshold condition fails");
    return 0.5 * (std::max(1.0, u0_max) + threshold_cap(u0_min) / beta);
}

// Left side of the certificate inequality; must stay strictly below K.
inline double cert_bracket_lo(double eps, double delta, double mu, double u0_max) {
    const double se = std::sqrt(eps);
    const double e1 = std::exp(1.0);
    const double ratio = (mu + eps * e1) / (mu - eps * e1);
    return (std::max(ratio, u0_max) + se * e1 * std::max(3.0, u0_max + 1.0)) /
           (1.0 - delta);
}

// Right side of the certificate inequality; must stay strictly above K.
inline double cert_bracket_hi(double eps, double delta, double mu, double beta,
                          double u0_min) {
    const double se = std::sqrt(eps);
    const double inner =
        mu * std::exp(eps) / (mu - se) + std::exp(se / delta + eps) / u0_min;
    return (1.0 + 1.0 / inner - delta) * (1.0 - 1.5 * se) / (beta * std::exp(eps));
}

// Uniform-in-time lower bound on a implied by (eps, delta); tends to
// (1 + 1/u0_min)^{-1} as eps -> 0 at fixed delta.
inline double a_star_of(double eps, double delta, double mu, double u0_min) {
    const double se = std::sqrt(eps);
    return 1.0 / (std::exp(se / delta + eps) / u0_min +
                  mu * std::exp(eps) / (mu - se));
}

struct SmallnessCertificate {
    double beta = 0.0;
    double mu = 0.0;
    double u0_min = 0.0;
    double u0_max = 0.0;
    double eps = 0.0;
    double delta = 0.0;
    double K = 0.0;
    double a_star = 0.0;
    double eta = 0.0;
    double bracket_lo = 0.0;
    double bracket_hi = 0.0;
    bool valid = false;
    std::string note;
};

inline double eps_cap(double beta, double mu) {
    const double e1 = std::exp(1.0);
    return std::min({beta * beta / 4.0, mu / (3.0 * e1), 0.25 * mu * mu});
}

struct CertSearchOptions {
    int delta_points = 64;
    double delta_min = 2e-6;
    double delta_max = 0.5;
    double margin = 1e-12;
    int bisect_iters = 100;
};

namespace detail {

inline bool cert_feasible(double eps, double delta, double K, double mu,
                          double beta, double u0_min, double u0_max,
                          double margin) {
    if (!(eps > 0.0)) return false;
    const double lhs = cert_bracket_lo(eps, delta, mu, u0_max);
    if (!(lhs <= K - margin)) return false;
    const double rhs = cert_bracket_hi(eps, delta, mu, beta, u0_min);
    return rhs >= K + margin;
}

} // namespace detail

// Scan a geometric delta grid, bisect for the largest admissible eps per
// delta, keep the pair with maximal eps (ties to smaller delta).
inline SmallnessCertificate find_certificate(double beta, double mu,
                                             double u0_min, double u0_max,
                                             const CertSearchOptions& opts = {}) {
    SmallnessCertificate c;
    c.beta = beta;
    c.mu = mu;
    c.u0_min = u0_min;
    c.u0_max = u0_max;
    if (!(mu > 0.0) || !std::isfinite(mu))
        throw std::invalid_argument("find_certificate: mu must be positive");
    if (!check_threshold(beta, u0_min, u0_max)) {
        c.note = "threshold";
        return c;
    }
    c.K = default_K(beta, u0_min, u0_max);

    const double cap = eps_cap(beta, mu);
    const double eps_hi = cap * (1.0 - 1e-12);
    const double eps_lo = cap * 1e-15;
    double best_eps = 0.0, best_delta = 0.0;
    bool lhs_blocked = false, rhs_blocked = false;

    for (int k = 0; k < opts.delta_points; ++k) {
        const double frac = (opts.delta_points > 1)
                                ? static_cast<double>(k) / (opts.delta_points - 1)
                                : 0.0;
        const double delta =
            opts.delta_max * std::pow(opts.delta_min / opts.delta_max, frac);
        if (!detail::cert_feasible(eps_lo, delta, c.K, mu, beta, u0_min, u0_max,
                                   opts.margin)) {
            if (!(cert_bracket_lo(eps_lo, delta, mu, u0_max) <= c.K - opts.margin))
                lhs_blocked = true;
            else
                rhs_blocked = true;
            continue;
        }
        double eps_best;
        if (detail::cert_feasible(eps_hi, delta, c.K, mu, beta, u0_min, u0_max,
                                  opts.margin)) {
            eps_best = eps_hi;
        } else {
            double lo = eps_lo, hi = eps_hi;
            for (int it = 0; it < opts.bisect_iters; ++it) {
                const double mid = 0.5 * (lo + hi);
                if (detail::cert_feasible(mid, delta, c.K, mu, beta, u0_min,
                                          u0_max, opts.margin))
                    lo = mid;
                else
                    hi = mid;
            }
            eps_best = lo;
        }
        if (eps_best >= best_eps) {
            best_eps = eps_best;
            best_delta = delta;
        }
    }

    if (!(best_eps > 0.0)) {
        c.note = lhs_blocked && !rhs_blocked ? "bracket_lo"
                 : rhs_blocked && !lhs_blocked ? "bracket_hi"
                                               : "bracket";
        return c;
    }
    c.eps = best_eps;
    c.delta = best_delta;
    c.bracket_lo = cert_bracket_lo(c.eps, c.delta, mu, u0_max);
    c.bracket_hi = cert_bracket_hi(c.eps, c.delta, mu, beta, u0_min);
    c.a_star = a_star_of(c.eps, c.delta, mu, u0_min);
    c.eta = std::min({mu * c.a_star, c.a_star, c.delta / 2.0});
    c.valid = true;
    return c;
}

// Replay the inequality at caller-supplied (eps, delta, K).
inline SmallnessCertificate make_certificate(double beta, double mu,
                                             double u0_min, double u0_max,
                                             double eps, double delta, double K) {
    SmallnessCertificate c;
    c.beta = beta;
    c.mu = mu;
    c.u0_min = u0_min;
    c.u0_max = u0_max;
    c.eps = eps;
    c.delta = delta;
    c.K = K;
    if (!check_threshold(beta, u0_min, u0_max)) {
        c.note = "threshold";
        return c;
    }
    if (!(eps > 0.0) || !(eps < eps_cap(beta, mu))) {
        c.note = "eps_cap";
        return c;
    }
    if (!(delta > 0.0) || !(delta <= 0.5)) {
        c.note = "delta_range";
        return c;
    }
    c.bracket_lo = cert_bracket_lo(eps, delta, mu, u0_max);
    c.bracket_hi = cert_bracket_hi(eps, delta, mu, beta, u0_min);
    if (!(c.bracket_lo < K)) {
        c.note = "bracket_lo";
        return c;
    }
    if (!(c.bracket_hi > K)) {
        c.note = "bracket_hi";
        return c;
    }
    c.a_star = a_star_of(eps, delta, mu, u0_min);
    c.eta = std::min({mu * c.a_star, c.a_star, delta / 2.0});
    c.valid = true;
    return c;
}

struct DecayRates {
    double v = 0.0;          // a_star
    double z = 0.0;          // delta
    double b = 0.0;          // delta
    double u_minus_1 = 0.0;  // eta
    double grad_v_sq = 0.0;  // 2 a_star
};

inline DecayRates predicted_rates(const SmallnessCertificate& c) {
    if (!c.valid)
        throw std::invalid_argument("predicted_rates: certificate not valid");
    DecayRates r;
    r.v = c.a_star;
    r.z = c.delta;
    r.b = c.delta;
    r.u_minus_1 = c.eta;
    r.grad_v_sq = 2.0 * c.a_star;
    return r;
}

struct InitialData {
    ScalarField u0, v0, w0, z0;
    double u0_min = 0.0, u0_max = 0.0;
    double v0_max = 0.0, w0_max = 0.0, z0_max = 0.0;
};

struct InitialProfile {
    enum class Kind { constant, bump, file };
    Kind kind = Kind::bump;
    // base + amp * B(x), B the normalized product-cosine bump in [0, 1].
    double u_base = 1.0, v_base = 0.0, w_base = 0.0, z_base = 0.0;
    double u_amp = 0.0, v_amp = 0.0, w_amp = 0.0, z_amp = 0.0;
    std::string u_path, v_path, w_path, z_path;
};

inline double bump_weight(const GridSpec& g, double x, double y, double z) {
    constexpr double pi = 3.14159265358979323846;
    double b = 0.5 * (1.0 + std::cos(pi * x / g.length[0]));
    if (g.dim > 1) b *= 0.5 * (1.0 + std::cos(pi * y / g.length[1]));
    if (g.dim > 2) b *= 0.5 * (1.0 + std::cos(pi * z / g.length[2]));
    return b;
}

// Build and validate initial data. With a certificate, the matrix, infected
// and virus maxima must sit strictly below eps.
inline InitialData make_initial(const GridSpec& g, const InitialProfile& p,
                                const SmallnessCertificate* cert = nullptr) {
    InitialData d;
    switch (p.kind) {
    case InitialProfile::Kind::constant:
        d.u0 = ScalarField(g, p.u_base);
        d.v0 = ScalarField(g, p.v_base);
        d.w0 = ScalarField(g, p.w_base);
        d.z0 = ScalarField(g, p.z_base);
        break;
    case InitialProfile::Kind::bump: {
        auto mk = [&](double base, double amp) {
            return sample_field(g, [&](double x, double y, double z) {
                return base + amp * bump_weight(g, x, y, z);
            });
        };
        d.u0 = mk(p.u_base, p.u_amp);
        d.v0 = mk(p.v_base, p.v_amp);
        d.w0 = mk(p.w_base, p.w_amp);
        d.z0 = mk(p.z_base, p.z_amp);
        break;
    }
    case InitialProfile::Kind::file:
        d.u0 = read_field(p.u_path);
        d.v0 = read_field(p.v_path);
        d.w0 = read_field(p.w_path);
        d.z0 = read_field(p.z_path);
        if (!d.u0.grid.same_layout(g) || !d.v0.grid.same_layout(g) ||
            !d.w0.grid.same_layout(g) || !d.z0.grid.same_layout(g))
            throw std::invalid_argument("make_initial: file grids do not match");
        break;
    }
    for (const ScalarField* f : {&d.u0, &d.v0, &d.w0, &d.z0})
        for (double x : f->values)
            if (!std::isfinite(x))
                throw std::invalid_argument("make_initial: non-finite value");
    d.u0_min = min_value(d.u0);
    d.u0_max = max_value(d.u0);
    d.v0_max = max_value(d.v0);
    d.w0_max = max_value(d.w0);
    d.z0_max = max_value(d.z0);
    if (!(d.u0_min > 0.0))
        throw std::invalid_argument("make_initial: u0 must be strictly positive");
    if (min_value(d.v0) < 0.0 || min_value(d.w0) < 0.0 || min_value(d.z0) < 0.0)
        throw std::invalid_argument("make_initial: v0, w0, z0 must be nonnegative");
    if (cert) {
        if (!cert->valid)
            throw std::invalid_argument("make_initial: certificate not valid");
        if (!(d.v0_max < cert->eps))
            throw std::invalid_argument("make_initial: v0 max must be < eps");
        if (!(d.w0_max < cert->eps))
            throw std::invalid_argument("make_initial: w0 max must be < eps");
        if (!(d.z0_max < cert->eps))
            throw std::invalid_argument("make_initial: z0 max must be < eps");
    }
    return d;
}

} // namespace virodyn
