#pragma once

// Closed-form decay envelopes attached to a smallness certificate, plus a
// classical RK4 integrator used as an independent oracle for them. The
// Bernoulli lower bound is evaluated in shifted form (all exponents
// differences of P), which stays finite for arbitrarily large t.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <ostream>
#include <stdexcept>
#include <vector>

#include "model.hpp"

namespace virodyn {

namespace detail {

inline double simpson_panel(double a, double fa, double b, double fb,
                            double fm) {
    return (b - a) / 6.0 * (fa + 4.0 * fm + fb);
}

template <class Fn>
double adapt_simpson(Fn&& f, double a, double fa, double b, double fb, double m,
                     double fm, double whole, double tol, int depth) {
    const double lm = 0.5 * (a + m), rm = 0.5 * (m + b);
    const double flm = f(lm), frm = f(rm);
    const double left = simpson_panel(a, fa, m, fm, flm);
    const double right = simpson_panel(m, fm, b, fb, frm);
    const double delta = left + right - whole;
    if (depth <= 0 || std::abs(delta) <= 15.0 * tol)
        return left + right + delta / 15.0;
    return adapt_simpson(f, a, fa, m, fm, lm, flm, left, 0.5 * tol, depth - 1) +
           adapt_simpson(f, m, fm, b, fb, rm, frm, right, 0.5 * tol, depth - 1);
}

// Adaptive Simpson, relative tolerance, bounded refinement depth.
template <class Fn>
double integrate_adaptive(Fn&& f, double a, double b, double rel_tol, int max_depth) {
    if (!(b > a)) return 0.0;
    const double m = 0.5 * (a + b);
    const double fa = f(a), fb = f(b), fm = f(m);
    const double whole = simpson_panel(a, fa, b, fb, fm);
    const double scale = std::max(std::abs(whole), 1e-300);
    return adapt_simpson(f, a, fa, b, fb, m, fm, whole, rel_tol * scale, max_depth);
}

} // namespace detail

inline constexpr double kQuadRelTol = 1e-10;
inline constexpr int kQuadMaxDepth = 20;

// Exponent of the Bernoulli integrating factor.
inline double bernoulli_P(double t, double mu, double eps, double delta) {
    return mu * t + (std::sqrt(eps) / delta) * std::expm1(-delta * t);
}

// Lower envelope for a: solution of y' = (mu - sqrt(eps) e^{-delta t}) y
// - mu e^{eps} y^2, y(0) = a0_min, via the explicit Bernoulli formula.
inline double underline_a(double t, double mu, double eps, double delta,
                          double a0_min) {
    if (!(mu > std::sqrt(eps)))
        throw std::invalid_argument("underline_a: requires mu > sqrt(eps)");
    if (!(a0_min > 0.0))
        throw std::invalid_argument("underline_a: a0_min must be positive");
    if (!(t >= 0.0))
        throw std::invalid_argument("underline_a: t must be nonnegative");
    if (t == 0.0) return a0_min;
    const double Pt = bernoulli_P(t, mu, eps, delta);
    const double R = detail::integrate_adaptive(
        [&](double s) { return std::exp(bernoulli_P(s, mu, eps, delta) - Pt); },
        0.0, t, kQuadRelTol, kQuadMaxDepth);
    return 1.0 / (std::exp(-Pt) / a0_min + mu * std::exp(eps) * R);
}

// Logistic upper comparison function: phi' = r phi - q phi^2, phi(0) = phi0,
// with r = eps e + mu and q = mu - eps e.
inline double phi_upper(double t, double mu, double eps, double phi0) {
    const double e1 = std::exp(1.0);
    const double r = eps * e1 + mu;
    const double q = mu - eps * e1;
    if (!(q > 0.0))
        throw std::invalid_argument("phi_upper: requires mu > eps*e");
    if (!(phi0 > 0.0))
        throw std::invalid_argument("phi_upper: phi0 must be positive");
    return r * phi0 / (q * phi0 + (r - q * phi0) * std::exp(-r * t));
}

// Explicit virus bound built from the Duhamel formula with source beta b.
inline double z_hat(double t, double z0_max, double beta, double K, double eps,
                    double delta, double a_star) {
    const double lam = a_star + 1.0;
    const double amp = beta * K * std::sqrt(eps) * std::exp(eps) / (lam - delta);
    return z0_max * std::exp(-lam * t) +
           amp * (std::exp(-delta * t) - std::exp(-lam * t));
}

struct EnvelopeSet {
    SmallnessCertificate cert;
    double u0_min = 0.0;
    double u0_max = 0.0;
    double z0_max = 0.0;

    // Worst admissible transformed minimum compatible with the certificate.
    double a0_floor() const { return u0_min * std::exp(-cert.eps); }

    double underline_a(double t) const {
        return virodyn::underline_a(t, cert.mu, cert.eps, cert.delta, a0_floor());
    }
    double v_env(double t) const {
        return cert.eps * std::exp(-cert.a_star * t);
    }
    double a_upper() const { return std::max(u0_max, 2.0); }
    double b_env(double t) const {
        return cert.K * std::sqrt(cert.eps) * std::exp(-cert.delta * t);
    }
    double z_hat(double t) const {
        return virodyn::z_hat(t, z0_max, cert.beta, cert.K, cert.eps, cert.delta,
                              cert.a_star);
    }
    double z_env(double t) const {
        const double se = std::sqrt(cert.eps);
        return (se - 0.5 * cert.eps) * std::exp(-cert.delta * t);
    }
    double grad_v_env(double t, double C) const {
        return C * (1.0 + t) * std::exp(-2.0 * cert.a_star * t);
    }
};

inline void write_envelope_csv(std::ostream& os, const EnvelopeSet& env,
                               const std::vector<double>& times) {
    os << "t,underline_a,v_env,a_upper,b_env,z_hat,z_env\n";
    char buf[40];
    auto put = [&](double x, char sep) {
        std::snprintf(buf, sizeof buf, "%.17g", x);
        os << buf << sep;
    };
    for (double t : times) {
        put(t, ',');
        put(env.underline_a(t), ',');
        put(env.v_env(t), ',');
        put(env.a_upper(), ',');
        put(env.b_env(t), ',');
        put(env.z_hat(t), ',');
        put(env.z_env(t), '\n');
    }
}

// Classical fixed-step RK4; samples the state at multiples of dt.
struct OracleTrajectory {
    std::vector<double> times;
    std::vector<std::vector<double>> states;
};

using OdeRhs = std::function<void(double t, const std::vector<double>& y,
                                  std::vector<double>& dy)>;

inline OracleTrajectory rk4_oracle(const OdeRhs& rhs, std::vector<double> y0,
                                   double t_end, double dt,
                                   std::size_t store_stride = 1) {
    if (!(dt > 0.0)) throw std::invalid_argument("rk4_oracle: dt must be positive");
    if (!(t_end >= 0.0)) throw std::invalid_argument("rk4_oracle: t_end must be >= 0");
    const std::size_t n_steps =
        static_cast<std::size_t>(std::llround(std::ceil(t_end / dt - 1e-12)));
    const std::size_t n = y0.size();
    std::vector<double> k1(n), k2(n), k3(n), k4(n), tmp(n);
    OracleTrajectory out;
    out.times.push_back(0.0);
    out.states.push_back(y0);
    for (std::size_t step = 0; step < n_steps; ++step) {
        const double t = static_cast<double>(step) * dt;
        rhs(t, y0, k1);
        for (std::size_t i = 0; i < n; ++i) tmp[i] = y0[i] + 0.5 * dt * k1[i];
        rhs(t + 0.5 * dt, tmp, k2);
        for (std::size_t i = 0; i < n; ++i) tmp[i] = y0[i] + 0.5 * dt * k2[i];
        rhs(t + 0.5 * dt, tmp, k3);
        for (std::size_t i = 0; i < n; ++i) tmp[i] = y0[i] + dt * k3[i];
        rhs(t + dt, tmp, k4);
        for (std::size_t i = 0; i < n; ++i) {
            y0[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            if (!std::isfinite(y0[i]))
                throw std::runtime_error("rk4_oracle: non-finite state");
        }
        if ((step + 1) % store_stride == 0 || step + 1 == n_steps) {
            out.times.push_back(static_cast<double>(step + 1) * dt);
            out.states.push_back(y0);
        }
    }
    return out;
}

// Scalar convenience wrapper returning only the final value.
inline double rk4_final(const std::function<double(double, double)>& f, double y0,
                        double t_end, double dt) {
    OdeRhs rhs = [&](double t, const std::vector<double>& y,
                     std::vector<double>& dy) { dy[0] = f(t, y[0]); };
    OracleTrajectory tr = rk4_oracle(rhs, {y0}, t_end, dt,
                                     std::numeric_limits<std::size_t>::max());
    return tr.states.back()[0];
}

} // namespace virodyn
