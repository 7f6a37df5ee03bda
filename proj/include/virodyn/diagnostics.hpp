#pragma once

// Observables recorded along a run and the after-the-fact analyses: Lp and
// Sobolev norms on the grid, the relative-entropy energy, least-squares
// decay-rate fits, and compliance of a trajectory against its envelopes.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ostream>
#include <stdexcept>
#include <vector>

#include "envelopes.hpp"
#include "grid.hpp"
#include "stepper.hpp"

namespace virodyn {

inline double lp_norm(const ScalarField& f, double p) {
    if (!(p >= 1.0)) throw std::invalid_argument("lp_norm: p must be >= 1");
    double sum = 0.0, c = 0.0;
    for (double x : f.values) {
        const double term = std::pow(std::abs(x), p);
        const double y = term - c;
        const double t = sum + y;
        c = (t - sum) - y;
        sum = t;
    }
    return std::pow(sum * f.grid.cell_volume(), 1.0 / p);
}

inline double sup_norm(const ScalarField& f) { return max_abs(f); }

// Cell gradient magnitude: per axis the mean of the two adjacent face
// differences (wall faces contribute zero), combined over axes.
inline ScalarField grad_magnitude(const ScalarField& f) {
    const GridSpec& g = f.grid;
    ScalarField sq(g);
    for (int d = 0; d < g.dim; ++d) {
        const double inv_h = 1.0 / g.h[d];
        detail::for_each_line(g, d, [&](std::size_t base, std::size_t S, std::size_t N) {
            const double* fv = f.values.data();
            double* ov = sq.values.data();
            double face_lo = 0.0;
            for (std::size_t j = 0; j < N; ++j) {
                const std::size_t idx = base + j * S;
                const double face_hi =
                    (j + 1 < N) ? (fv[idx + S] - fv[idx]) * inv_h : 0.0;
                const double comp = 0.5 * (face_lo + face_hi);
                ov[idx] += comp * comp;
                face_lo = face_hi;
            }
        });
    }
    for (double& x : sq.values) x = std::sqrt(x);
    return sq;
}

inline double grad_lp_norm(const ScalarField& f, double p) {
    return lp_norm(grad_magnitude(f), p);
}

inline double w1p_norm(const ScalarField& f, double p) {
    const double lp = lp_norm(f, p);
    const double gp = grad_lp_norm(f, p);
    return std::pow(std::pow(lp, p) + std::pow(gp, p), 1.0 / p);
}

inline double dirichlet_energy(const ScalarField& f) {
    ScalarField m = grad_magnitude(f);
    for (double& x : m.values) x *= x;
    return integrate(m);
}

// Relative-entropy functional integral of e^v (a - 1 - log a).
inline double energy_log(const ScalarField& a, const ScalarField& v) {
    if (!a.grid.same_layout(v.grid))
        throw std::invalid_argument("energy_log: mismatched grids");
    ScalarField dens(a.grid);
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double ai = a.values[i];
        if (!(ai > 0.0))
            throw std::invalid_argument("energy_log: a must be strictly positive");
        dens.values[i] = std::exp(v.values[i]) * (ai - 1.0 - std::log(ai));
    }
    return integrate(dens);
}

struct DecayFit {
    double rate = 0.0;           // minus the fitted slope of log(value)
    double log_amplitude = 0.0;  // fitted log(value) extrapolated to t = 0
    double r2 = 0.0;
    std::size_t samples = 0;
    double t_lo = 0.0, t_hi = 0.0;
};

// Least-squares line through (t, log value) on the trailing window
// [t_end (1 - wf), t_end]. Requires at least 8 strictly positive samples in
// the window; underflowed series are the caller's concern.
inline DecayFit fit_decay(const std::vector<double>& times,
                          const std::vector<double>& values,
                          double window_fraction = 0.5) {
    if (times.size() != values.size())
        throw std::invalid_argument("fit_decay: size mismatch");
    if (!(window_fraction > 0.0) || !(window_fraction <= 1.0))
        throw std::invalid_argument("fit_decay: window_fraction in (0, 1]");
    if (times.empty()) throw std::invalid_argument("fit_decay: empty series");
    const double t_end = times.back();
    const double t_lo = t_end * (1.0 - window_fraction);
    std::vector<double> ts, ls;
    for (std::size_t i = 0; i < times.size(); ++i) {
        if (times[i] >= t_lo - 1e-12 && values[i] > 0.0) {
            ts.push_back(times[i]);
            ls.push_back(std::log(values[i]));
        }
    }
    if (ts.size() < 8)
        throw std::invalid_argument("fit_decay: fewer than 8 positive samples in window");
    const std::size_t n = ts.size();
    double mt = 0.0, ml = 0.0;
    for (std::size_t i = 0; i < n; ++i) { mt += ts[i]; ml += ls[i]; }
    mt /= n;
    ml /= n;
    double stt = 0.0, stl = 0.0, sll = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double dt = ts[i] - mt, dl = ls[i] - ml;
        stt += dt * dt;
        stl += dt * dl;
        sll += dl * dl;
    }
    if (!(stt > 0.0)) throw std::invalid_argument("fit_decay: degenerate times");
    const double slope = stl / stt;
    DecayFit fit;
    fit.rate = -slope;
    fit.log_amplitude = ml - slope * mt;
    fit.samples = n;
    fit.t_lo = ts.front();
    fit.t_hi = ts.back();
    const double ss_res = sll - slope * stl;
    fit.r2 = (sll > 1e-30) ? std::max(0.0, 1.0 - ss_res / sll) : 1.0;
    return fit;
}

// Shrinks the window to the positive tail of the series before fitting, for
// series whose far tail underflows to exact zero.
inline DecayFit fit_decay_positive(const std::vector<double>& times,
                                   const std::vector<double>& values,
                                   double window_fraction = 0.5) {
    std::vector<double> ts, vs;
    for (std::size_t i = 0; i < times.size(); ++i)
        if (values[i] > 0.0) {
            ts.push_back(times[i]);
            vs.push_back(values[i]);
        }
    if (ts.size() < 8)
        throw std::invalid_argument("fit_decay_positive: fewer than 8 positive samples");
    return fit_decay(ts, vs, window_fraction);
}

// Variant for series measured through a cancellation (sup|u - 1| and kin):
// once the signal decays to the additive rounding floor the samples flatten
// into noise near 1e-16 times the initial size, so the fit keeps only samples
// resolved above rel_floor times the series maximum.
inline DecayFit fit_decay_resolved(const std::vector<double>& times,
                                   const std::vector<double>& values,
                                   double window_fraction = 0.5,
                                   double rel_floor = 1e-12) {
    double peak = 0.0;
    for (double v : values) peak = std::max(peak, v);
    const double floor = rel_floor * peak;
    std::vector<double> ts, vs;
    for (std::size_t i = 0; i < times.size(); ++i)
        if (values[i] > floor) {
            ts.push_back(times[i]);
            vs.push_back(values[i]);
        }
    if (ts.size() < 8)
        throw std::invalid_argument("fit_decay_resolved: fewer than 8 resolved samples");
    return fit_decay(ts, vs, window_fraction);
}

struct NormRecord {
    double t = 0.0;
    double sup_u_minus_1 = 0.0;
    double lp_u_minus_1 = 0.0;
    double sup_v = 0.0;
    double grad_v_l2 = 0.0;
    double grad_v_l4 = 0.0;
    double grad_v_l5 = 0.0;
    double w14_v = 0.0;
    double sup_w = 0.0;
    double sup_z = 0.0;
    double energy_log = 0.0;
    double min_a = 0.0;
    double max_a = 0.0;
    double max_b = 0.0;
};

inline NormRecord compute_norms(const SimState& s, double p = 2.0) {
    NormRecord r;
    r.t = s.t;
    const std::size_t n = s.a.size();
    ScalarField um1(s.a.grid);
    double sup_w = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double ev = std::exp(s.v.values[i]);
        um1.values[i] = s.a.values[i] * ev - 1.0;
        sup_w = std::max(sup_w, std::abs(s.b.values[i] * ev));
    }
    r.sup_u_minus_1 = sup_norm(um1);
    r.lp_u_minus_1 = lp_norm(um1, p);
    r.sup_v = max_value(s.v);
    r.grad_v_l2 = grad_lp_norm(s.v, 2.0);
    r.grad_v_l4 = grad_lp_norm(s.v, 4.0);
    r.grad_v_l5 = grad_lp_norm(s.v, 5.0);
    r.w14_v = w1p_norm(s.v, 4.0);
    r.sup_w = sup_w;
    r.sup_z = max_value(s.z);
    r.energy_log = energy_log(s.a, s.v);
    r.min_a = min_value(s.a);
    r.max_a = max_value(s.a);
    r.max_b = max_value(s.b);
    return r;
}

inline void write_series_header(std::ostream& os) {
    os << "t,sup_u_minus_1,l2_u_minus_1,sup_v,grad_v_l2,grad_v_l4,grad_v_l5,"
          "sup_w,sup_z,energy_log,min_a,max_a,max_b\n";
}

inline void write_series_row(std::ostream& os, const NormRecord& r) {
    char buf[40];
    const double cols[] = {r.t,        r.sup_u_minus_1, r.lp_u_minus_1,
                           r.sup_v,    r.grad_v_l2,     r.grad_v_l4,
                           r.grad_v_l5, r.sup_w,        r.sup_z,
                           r.energy_log, r.min_a,       r.max_a,
                           r.max_b};
    const int n = static_cast<int>(sizeof(cols) / sizeof(cols[0]));
    for (int i = 0; i < n; ++i) {
        std::snprintf(buf, sizeof buf, "%.17g", cols[i]);
        os << buf << (i + 1 < n ? ',' : '\n');
    }
}

struct RatioCheck {
    double ratio = 0.0;
    double t_worst = 0.0;
    bool pass = true;
};

struct EnvelopeReport {
    RatioCheck a_lower;   // a_star against min a
    RatioCheck v;         // sup v against eps e^{-a* t}
    RatioCheck a_upper;   // max a against max(u0_max, 2)
    RatioCheck b;         // max b against K sqrt(eps) e^{-delta t}
    RatioCheck z;         // sup z against (sqrt(eps) - eps/2) e^{-delta t}
    double tol = 0.02;
    bool pass = true;
};

inline EnvelopeReport envelope_report(const std::vector<NormRecord>& records,
                                      const EnvelopeSet& env, double tol = 0.02) {
    if (records.empty())
        throw std::invalid_argument("envelope_report: no records");
    EnvelopeReport rep;
    rep.tol = tol;
    auto update = [](RatioCheck& c, double num, double den, double t) {
        double r;
        if (den > 0.0)
            r = num / den;
        else
            r = (num > 0.0) ? std::numeric_limits<double>::infinity() : 0.0;
        if (r > c.ratio) {
            c.ratio = r;
            c.t_worst = t;
        }
    };
    for (const NormRecord& r : records) {
        update(rep.a_lower, env.cert.a_star, r.min_a, r.t);
        update(rep.v, r.sup_v, env.v_env(r.t), r.t);
        update(rep.a_upper, r.max_a, env.a_upper(), r.t);
        update(rep.b, r.max_b, env.b_env(r.t), r.t);
        update(rep.z, r.sup_z, env.z_env(r.t), r.t);
    }
    for (RatioCheck* c : {&rep.a_lower, &rep.v, &rep.a_upper, &rep.b, &rep.z}) {
        c->pass = c->ratio <= 1.0 + tol;
        rep.pass = rep.pass && c->pass;
    }
    return rep;
}

inline void write_envelope_report(std::ostream& os, const EnvelopeReport& rep) {
    auto line = [&](const char* name, const RatioCheck& c) {
        char buf[40];
        std::snprintf(buf, sizeof buf, "%.6g", c.ratio);
        os << name << " ratio=" << buf;
        std::snprintf(buf, sizeof buf, "%.6g", c.t_worst);
        os << " worst_t=" << buf << " pass=" << (c.pass ? 1 : 0) << '\n';
    };
    line("a_lower", rep.a_lower);
    line("v", rep.v);
    line("a_upper", rep.a_upper);
    line("b", rep.b);
    line("z", rep.z);
    os << "tol=" << rep.tol << '\n';
    os << "pass=" << (rep.pass ? 1 : 0) << '\n';
}

// Running trapezoidal integral of a time series.
inline std::vector<double> accumulate_trapezoid(const std::vector<double>& times,
                                                const std::vector<double>& values) {
    if (times.size() != values.size())
        throw std::invalid_argument("accumulate_trapezoid: size mismatch");
    std::vector<double> acc(times.size(), 0.0);
    for (std::size_t i = 1; i < times.size(); ++i)
        acc[i] = acc[i - 1] +
                 0.5 * (values[i] + values[i - 1]) * (times[i] - times[i - 1]);
    return acc;
}

} // namespace virodyn
