#pragma once

// Time integration of the transformed system. a, b, z advance by forward
// Euler; v advances exactly through its pointwise exponential with the decay
// coefficient frozen over the step, which preserves v >= 0 and monotone
// decay unconditionally. Positivity of the Euler fields is a CFL consequence
// of stable_dt, watched by a floor assertion rather than enforced by
// clamping.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <stdexcept>
#include <string>

#include "grid.hpp"
#include "model.hpp"

namespace virodyn {

struct SolverAbort : std::runtime_error {
    double t;
    explicit SolverAbort(const std::string& what, double t_)
        : std::runtime_error(what), t(t_) {}
};

enum class Scheme { transformed, primitive };

struct StepControl {
    double safety = 0.4;
    double dt_max = 0.05;
    Scheme scheme = Scheme::transformed;
    double positivity_floor = 0.0;
};

// Transformed state; u = a e^v and w = b e^v are derived on demand.
struct SimState {
    double t = 0.0;
    ScalarField a, v, b, z;

    ScalarField u_field() const {
        ScalarField u(a.grid);
        for (std::size_t i = 0; i < u.size(); ++i)
            u.values[i] = a.values[i] * std::exp(v.values[i]);
        return u;
    }
    ScalarField w_field() const {
        ScalarField w(b.grid);
        for (std::size_t i = 0; i < w.size(); ++i)
            w.values[i] = b.values[i] * std::exp(v.values[i]);
        return w;
    }
};

inline SimState make_state(const InitialData& d) {
    SimState s;
    s.t = 0.0;
    s.a = ScalarField(d.u0.grid);
    s.b = ScalarField(d.u0.grid);
    s.v = d.v0;
    s.z = d.z0;
    for (std::size_t i = 0; i < s.a.size(); ++i) {
        const double emv = std::exp(-d.v0.values[i]);
        s.a.values[i] = d.u0.values[i] * emv;
        s.b.values[i] = d.w0.values[i] * emv;
    }
    return s;
}

struct RhsFields {
    ScalarField da, dv, db, dz;
};

namespace detail {

inline void exp_field_into(const ScalarField& v, ScalarField& expv) {
    for (std::size_t i = 0; i < v.size(); ++i)
        expv.values[i] = std::exp(v.values[i]);
}

inline void rhs_transformed_into(const SimState& s, const ModelParams& p,
                                 const ScalarField& expv, RhsFields& r) {
    weighted_laplacian_into(s.a, expv, r.da);
    weighted_laplacian_into(s.b, expv, r.db);
    laplacian_into(s.z, r.dz);
    const std::size_t n = s.a.size();
    for (std::size_t i = 0; i < n; ++i) {
        const double a = s.a.values[i], b = s.b.values[i];
        const double v = s.v.values[i], z = s.z.values[i];
        const double ev = expv.values[i];
        const double hap = (a + b) * ev * v;
        r.da.values[i] += -a * z + a * hap + p.mu * a * (1.0 - ev * a);
        r.db.values[i] += -b + a * z + b * hap;
        r.dz.values[i] = p.dz * r.dz.values[i] - z - a * ev * z + p.beta * b * ev;
        r.dv.values[i] = -hap;
    }
}

inline void rhs_primitive_into(const ScalarField& u, const ScalarField& v,
                               const ScalarField& w, const ScalarField& z,
                               const ModelParams& p, ScalarField& scratch,
                               RhsFields& r) {
    laplacian_into(u, r.da);
    div_flux_into(u, v, scratch);
    for (std::size_t i = 0; i < u.size(); ++i) r.da.values[i] -= scratch.values[i];
    laplacian_into(w, r.db);
    div_flux_into(w, v, scratch);
    for (std::size_t i = 0; i < w.size(); ++i) r.db.values[i] -= scratch.values[i];
    laplacian_into(z, r.dz);
    for (std::size_t i = 0; i < u.size(); ++i) {
        const double ui = u.values[i], wi = w.values[i], zi = z.values[i];
        r.da.values[i] += p.mu * ui * (1.0 - ui) - ui * zi;
        r.db.values[i] += -wi + ui * zi;
        r.dz.values[i] = p.dz * r.dz.values[i] - zi - ui * zi + p.beta * wi;
        r.dv.values[i] = -(ui + wi) * v.values[i];
    }
}

} // namespace detail

// Time derivatives (da, dv, db, dz) of the transformed system at the given
// state; dv is the pointwise reaction, reported for diagnostics even though
// stepping updates v through its exact exponential.
inline RhsFields rhs_transformed(const SimState& s, const ModelParams& p) {
    RhsFields r{ScalarField(s.a.grid), ScalarField(s.a.grid),
                ScalarField(s.a.grid), ScalarField(s.a.grid)};
    ScalarField expv(s.a.grid);
    detail::exp_field_into(s.v, expv);
    detail::rhs_transformed_into(s, p, expv, r);
    return r;
}

// Time derivatives (du, dv, dw, dz) of the untransformed system.
inline RhsFields rhs_primitive(const ScalarField& u, const ScalarField& v,
                               const ScalarField& w, const ScalarField& z,
                               const ModelParams& p) {
    RhsFields r{ScalarField(u.grid), ScalarField(u.grid), ScalarField(u.grid),
                ScalarField(u.grid)};
    ScalarField scratch(u.grid);
    detail::rhs_primitive_into(u, v, w, z, p, scratch, r);
    return r;
}

// Diffusive CFL against the largest mobility, a reaction bound from the
// stiffest pointwise decay, and the hard cap dt_max.
inline double stable_dt_from(double h_min, int dim, double max_ev, double max_u,
                             double max_z, const ModelParams& p,
                             const StepControl& ctl) {
    const double diff =
        h_min * h_min / (2.0 * dim * std::max(max_ev, p.dz));
    const double react =
        1.0 / (p.mu * (1.0 + 2.0 * max_u) + max_z + 1.0 + p.beta);
    return ctl.safety * std::min({diff, react, ctl.dt_max});
}

inline double stable_dt(const SimState& s, const ModelParams& p,
                        const StepControl& ctl) {
    double max_ev = 0.0, max_u = 0.0, max_z = 0.0;
    for (std::size_t i = 0; i < s.a.size(); ++i) {
        const double ev = std::exp(s.v.values[i]);
        max_ev = std::max(max_ev, ev);
        max_u = std::max(max_u, s.a.values[i] * ev);
        max_z = std::max(max_z, s.z.values[i]);
    }
    return stable_dt_from(s.a.grid.min_h(), s.a.grid.dim, max_ev, max_u, max_z,
                          p, ctl);
}

struct RunStats {
    std::size_t steps = 0;
    double min_a = std::numeric_limits<double>::infinity();
    double min_v = std::numeric_limits<double>::infinity();
    double min_b = std::numeric_limits<double>::infinity();
    double min_z = std::numeric_limits<double>::infinity();
    bool v_monotone = true;
};

namespace detail {

struct StepWork {
    ScalarField expv;
    RhsFields r;
    explicit StepWork(const GridSpec& g)
        : expv(g), r{ScalarField(g), ScalarField(g), ScalarField(g),
                     ScalarField(g)} {}
};

inline void check_floor(const char* name, const ScalarField& f, double floor,
                        double t, double& min_out) {
    for (double x : f.values) {
        if (!std::isfinite(x))
            throw SolverAbort(std::string("non-finite ") + name, t);
        min_out = std::min(min_out, x);
        if (x < floor - 1e-13)
            throw SolverAbort(std::string(name) + " fell below positivity floor", t);
    }
}

inline void step_transformed(SimState& s, const ModelParams& p,
                             const StepControl& ctl, double dt, StepWork& w,
                             RunStats* stats) {
    detail::exp_field_into(s.v, w.expv);
    detail::rhs_transformed_into(s, p, w.expv, w.r);
    const std::size_t n = s.a.size();
    double min_decay = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < n; ++i) {
        const double decay = (s.a.values[i] + s.b.values[i]) * w.expv.values[i];
        min_decay = std::min(min_decay, decay);
        s.v.values[i] *= std::exp(-decay * dt);
        s.a.values[i] += dt * w.r.da.values[i];
        s.b.values[i] += dt * w.r.db.values[i];
        s.z.values[i] += dt * w.r.dz.values[i];
    }
    s.t += dt;
    RunStats local;
    RunStats& st = stats ? *stats : local;
    st.steps += 1;
    if (min_decay < 0.0) st.v_monotone = false;
    check_floor("a", s.a, ctl.positivity_floor, s.t, st.min_a);
    check_floor("v", s.v, ctl.positivity_floor, s.t, st.min_v);
    check_floor("b", s.b, ctl.positivity_floor, s.t, st.min_b);
    check_floor("z", s.z, ctl.positivity_floor, s.t, st.min_z);
}

} // namespace detail

// One forward-Euler step of the transformed scheme at the caller's dt.
inline void step_euler(SimState& s, const ModelParams& p, const StepControl& ctl,
                       double dt) {
    if (!(dt > 0.0)) throw std::invalid_argument("step_euler: dt must be positive");
    detail::StepWork w(s.a.grid);
    detail::step_transformed(s, p, ctl, dt, w, nullptr);
}

struct RunResult {
    SimState state;
    RunStats stats;
};

using Observer = std::function<void(const SimState&)>;

// Advance to t_end, hitting every multiple of observe_every exactly; the
// observer sees the state at t0, at each observation time, and at t_end.
inline RunResult run(SimState s, const ModelParams& p, const StepControl& ctl,
                     double t_end, double observe_every,
                     const Observer& observer = {}) {
    if (!(t_end >= s.t))
        throw std::invalid_argument("run: t_end must be >= state.t");
    RunResult res;
    const double t0 = s.t;
    auto next_target = [&](double t) {
        double target = t_end;
        if (observe_every > 0.0) {
            const double k =
                std::floor((t - t0) / observe_every + 1e-9) + 1.0;
            target = std::min(t_end, t0 + k * observe_every);
        }
        return target;
    };

    if (observer) observer(s);

    if (ctl.scheme == Scheme::primitive) {
        // Step in (u, v, w, z); convert views at observation points.
        ScalarField u = s.u_field(), w = s.w_field();
        ScalarField scratch(s.a.grid);
        RhsFields r{ScalarField(s.a.grid), ScalarField(s.a.grid),
                    ScalarField(s.a.grid), ScalarField(s.a.grid)};
        auto sync_transformed = [&]() {
            for (std::size_t i = 0; i < u.size(); ++i) {
                const double emv = std::exp(-s.v.values[i]);
                s.a.values[i] = u.values[i] * emv;
                s.b.values[i] = w.values[i] * emv;
            }
        };
        while (s.t < t_end) {
            const double target = next_target(s.t);
            while (s.t < target) {
                double max_ev = 0.0, max_u = 0.0, max_z = 0.0;
                for (std::size_t i = 0; i < u.size(); ++i) {
                    max_ev = std::max(max_ev, std::exp(s.v.values[i]));
                    max_u = std::max(max_u, u.values[i]);
                    max_z = std::max(max_z, s.z.values[i]);
                }
                double dt = stable_dt_from(s.a.grid.min_h(), s.a.grid.dim, max_ev,
                                           max_u, max_z, p, ctl);
                bool hits = false;
                if (dt >= target - s.t) {
                    dt = target - s.t;
                    hits = true;
                }
                detail::rhs_primitive_into(u, s.v, w, s.z, p, scratch, r);
                double min_decay = std::numeric_limits<double>::infinity();
                for (std::size_t i = 0; i < u.size(); ++i) {
                    const double decay = u.values[i] + w.values[i];
                    min_decay = std::min(min_decay, decay);
                    s.v.values[i] *= std::exp(-decay * dt);
                    u.values[i] += dt * r.da.values[i];
                    w.values[i] += dt * r.db.values[i];
                    s.z.values[i] += dt * r.dz.values[i];
                }
                s.t = hits ? target : s.t + dt;
                res.stats.steps += 1;
                if (min_decay < 0.0) res.stats.v_monotone = false;
                detail::check_floor("u", u, ctl.positivity_floor, s.t,
                                    res.stats.min_a);
                detail::check_floor("v", s.v, ctl.positivity_floor, s.t,
                                    res.stats.min_v);
                detail::check_floor("w", w, ctl.positivity_floor, s.t,
                                    res.stats.min_b);
                detail::check_floor("z", s.z, ctl.positivity_floor, s.t,
                                    res.stats.min_z);
            }
            sync_transformed();
            if (observer) observer(s);
        }
        res.state = std::move(s);
        return res;
    }

    detail::StepWork work(s.a.grid);
    while (s.t < t_end) {
        const double target = next_target(s.t);
        while (s.t < target) {
            double dt = stable_dt(s, p, ctl);
            bool hits = false;
            if (dt >= target - s.t) {
                dt = target - s.t;
                hits = true;
            }
            detail::step_transformed(s, p, ctl, dt, work, &res.stats);
            if (hits) s.t = target;
        }
        if (observer) observer(s);
    }
    res.state = std::move(s);
    return res;
}

// Checkpoint: one dump per field plus a manifest carrying the time.
inline void write_checkpoint(const std::string& dir, const SimState& s) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    write_field(dir + "/a.field", s.a);
    write_field(dir + "/v.field", s.v);
    write_field(dir + "/b.field", s.b);
    write_field(dir + "/z.field", s.z);
    std::ofstream os(dir + "/manifest.txt");
    if (!os) throw std::runtime_error("write_checkpoint: cannot open manifest");
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", s.t);
    os << "t=" << buf << '\n';
}

inline SimState read_checkpoint(const std::string& dir) {
    SimState s;
    s.a = read_field(dir + "/a.field");
    s.v = read_field(dir + "/v.field");
    s.b = read_field(dir + "/b.field");
    s.z = read_field(dir + "/z.field");
    std::ifstream is(dir + "/manifest.txt");
    std::string line;
    if (!is || !std::getline(is, line) || line.rfind("t=", 0) != 0)
        throw std::runtime_error("read_checkpoint: bad manifest");
    s.t = std::stod(line.substr(2));
    if (!s.a.grid.same_layout(s.v.grid) || !s.a.grid.same_layout(s.b.grid) ||
        !s.a.grid.same_layout(s.z.grid))
        throw std::runtime_error("read_checkpoint: mismatched field grids");
    return s;
}

} // namespace virodyn
