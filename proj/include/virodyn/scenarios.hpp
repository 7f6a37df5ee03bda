#pragma once

// The verification harness: flat key=value configuration, the named
// scenarios, and their file outputs. Exit codes: 0 pass, 1 failed checks,
// 2 configuration error, 3 solver abort.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <future>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "diagnostics.hpp"
#include "envelopes.hpp"
#include "grid.hpp"
#include "model.hpp"
#include "stepper.hpp"

namespace virodyn {

enum ExitCode : int {
    exit_ok = 0,
    exit_checks_failed = 1,
    exit_config_error = 2,
    exit_solver_abort = 3,
};

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Flat key=value store with '#' comments; later assignments win.
struct KeyValueConfig {
    std::map<std::string, std::string> kv;
    mutable std::set<std::string> touched;

    static std::string trim(const std::string& s) {
        const auto b = s.find_first_not_of(" \t\r\n");
        if (b == std::string::npos) return "";
        const auto e = s.find_last_not_of(" \t\r\n");
        return s.substr(b, e - b + 1);
    }

    void set_line(const std::string& line, const std::string& where) {
        std::string body = line;
        const auto hash = body.find('#');
        if (hash != std::string::npos) body = body.substr(0, hash);
        body = trim(body);
        if (body.empty()) return;
        const auto eq = body.find('=');
        if (eq == std::string::npos)
            throw ConfigError("expected key=value in " + where + ": " + line);
        const std::string key = trim(body.substr(0, eq));
        const std::string val = trim(body.substr(eq + 1));
        if (key.empty()) throw ConfigError("empty key in " + where + ": " + line);
        kv[key] = val;
    }

    void load_file(const std::string& path) {
        std::ifstream is(path);
        if (!is) throw ConfigError("cannot open config file: " + path);
        std::string line;
        while (std::getline(is, line)) set_line(line, path);
    }

    bool has(const std::string& key) const {
        touched.insert(key);
        return kv.count(key) != 0;
    }

    std::string get_string(const std::string& key, const std::string& def) const {
        touched.insert(key);
        auto it = kv.find(key);
        return it == kv.end() ? def : it->second;
    }

    double get_double(const std::string& key, double def) const {
        touched.insert(key);
        auto it = kv.find(key);
        if (it == kv.end()) return def;
        try {
            std::size_t pos = 0;
            const double x = std::stod(it->second, &pos);
            if (pos != it->second.size()) throw std::invalid_argument("trailing");
            return x;
        } catch (const std::exception&) {
            throw ConfigError("bad numeric value for " + key + ": " + it->second);
        }
    }

    int get_int(const std::string& key, int def) const {
        const double x = get_double(key, static_cast<double>(def));
        const int i = static_cast<int>(std::llround(x));
        if (x != static_cast<double>(i))
            throw ConfigError("expected integer for " + key);
        return i;
    }

    std::vector<double> get_doubles(const std::string& key,
                                    const std::vector<double>& def) const {
        touched.insert(key);
        auto it = kv.find(key);
        if (it == kv.end()) return def;
        std::vector<double> out;
        std::stringstream ss(it->second);
        std::string tok;
        while (std::getline(ss, tok, ',')) {
            tok = trim(tok);
            if (tok.empty()) continue;
            try {
                out.push_back(std::stod(tok));
            } catch (const std::exception&) {
                throw ConfigError("bad list value for " + key + ": " + it->second);
            }
        }
        if (out.empty()) throw ConfigError("empty list for " + key);
        return out;
    }

    std::vector<int> get_ints(const std::string& key,
                              const std::vector<int>& def) const {
        std::vector<double> dd;
        for (int x : def) dd.push_back(x);
        std::vector<double> got = get_doubles(key, dd);
        std::vector<int> out;
        for (double x : got) {
            const int i = static_cast<int>(std::llround(x));
            if (x != static_cast<double>(i))
                throw ConfigError("expected integer list for " + key);
            out.push_back(i);
        }
        return out;
    }

    void reject_unknown() const {
        for (const auto& [k, v] : kv)
            if (!touched.count(k)) throw ConfigError("unknown config key: " + k);
    }
};

struct ScenarioResult {
    int exit_code = exit_ok;
    std::vector<std::string> notes;
    std::map<std::string, double> metrics;

    void note(const std::string& s) { notes.push_back(s); }
    void put(const std::string& k, double v) { metrics[k] = v; }
};

inline void write_certificate_report(std::ostream& os,
                                     const SmallnessCertificate& c) {
    char buf[40];
    auto line = [&](const char* k, double v) {
        std::snprintf(buf, sizeof buf, "%.17g", v);
        os << k << " = " << buf << '\n';
    };
    line("eps", c.eps);
    line("delta", c.delta);
    line("K", c.K);
    line("a_star", c.a_star);
    line("eta", c.eta);
    line("bracket_lo", c.bracket_lo);
    line("bracket_hi", c.bracket_hi);
    os << "valid = " << (c.valid ? 1 : 0) << '\n';
    if (!c.note.empty()) os << "note = " << c.note << '\n';
}

namespace detail {

struct ScenarioSetup {
    std::string scenario;
    GridSpec grid;
    ModelParams params;
    StepControl ctl;
    InitialProfile profile;
    std::string cert_mode;  // auto | explicit | none
    double cert_eps = 0.0, cert_delta = 0.0, cert_K = 0.0;
    double small_frac = 0.5;
    double t_end = -1.0;
    double t_end_over_delta = -1.0;
    double observe_every = -1.0;
    double window_fraction = 0.5;
    double envelope_tol = 0.02;
    double ode_dt = 1e-5;
    double ode_tol = 5e-3;
    int mms_doublings = 3;
    double fisher_tol = 1e-6;
    double fisher_rate_band = 0.25;
    double sweep_beta_min = 0.4, sweep_beta_max = 2.0;
    int sweep_beta_steps = 5;
    double sweep_scale_min = 0.5, sweep_scale_max = 2.0;
    int sweep_scale_steps = 3;
    double sweep_t_end_over_delta = 4.0;
    int sweep_workers = 1;
    std::string out_dir = "out";
};

inline ScenarioSetup parse_setup(const KeyValueConfig& cfg) {
    ScenarioSetup s;
    s.scenario = cfg.get_string("scenario", "theorem11");
    const std::set<std::string> known = {"theorem11", "ode-oracle", "mms",
                                        "fisher",    "sweep",      "custom"};
    if (!known.count(s.scenario))
        throw ConfigError("unknown scenario: " + s.scenario);

    int dim = cfg.get_int("grid.dim", 1);
    if (dim < 1 || dim > 3) throw ConfigError("grid.dim must be 1, 2 or 3");
    const double def_len = (s.scenario == "mms" || s.scenario == "ode-oracle")
                               ? 1.0
                               : 10.0;
    const int def_cells = s.scenario == "ode-oracle" ? 16
                          : s.scenario == "mms"      ? 16
                          : dim == 3                 ? 32
                          : dim == 2                 ? 64
                                                     : 128;
    std::vector<double> lengths =
        cfg.get_doubles("grid.lengths", std::vector<double>(dim, def_len));
    std::vector<int> cells =
        cfg.get_ints("grid.cells", std::vector<int>(dim, def_cells));
    if (lengths.size() == 1 && dim > 1) lengths.assign(dim, lengths[0]);
    if (cells.size() == 1 && dim > 1) cells.assign(dim, cells[0]);
    try {
        s.grid = make_grid(dim, lengths, cells);
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }

    s.params.mu = cfg.get_double("model.mu", 1.0);
    s.params.beta = cfg.get_double("model.beta", 1.2);
    s.params.dz = cfg.get_double("model.dz", 1.0);
    try {
        s.params.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }

    const std::string prof = cfg.get_string(
        "init.profile", s.scenario == "ode-oracle" ? "constant" : "bump");
    if (prof == "constant")
        s.profile.kind = InitialProfile::Kind::constant;
    else if (prof == "bump")
        s.profile.kind = InitialProfile::Kind::bump;
    else if (prof == "file")
        s.profile.kind = InitialProfile::Kind::file;
    else
        throw ConfigError("unknown init.profile: " + prof);
    s.profile.u_base = cfg.get_double("init.u_base", 1.0);
    s.profile.v_base = cfg.get_double("init.v_base", 0.0);
    s.profile.w_base = cfg.get_double("init.w_base", 0.0);
    s.profile.z_base = cfg.get_double("init.z_base", 0.0);
    s.profile.u_amp = cfg.get_double("init.u_amp",
                                     s.scenario == "fisher" ? 0.3 : 0.05);
    s.profile.v_amp = cfg.get_double("init.v_amp", -1.0);
    s.profile.w_amp = cfg.get_double("init.w_amp", -1.0);
    s.profile.z_amp = cfg.get_double("init.z_amp", -1.0);
    s.profile.u_path = cfg.get_string("init.u_file", "");
    s.profile.v_path = cfg.get_string("init.v_file", "");
    s.profile.w_path = cfg.get_string("init.w_file", "");
    s.profile.z_path = cfg.get_string("init.z_file", "");
    s.small_frac = cfg.get_double("init.small_frac", 0.5);
    if (!(s.small_frac > 0.0) || !(s.small_frac < 1.0))
        throw ConfigError("init.small_frac must lie in (0, 1)");

    s.cert_mode = cfg.get_string("cert.mode",
                                 s.scenario == "theorem11" || s.scenario == "sweep"
                                     ? "auto"
                                     : "none");
    if (s.cert_mode != "auto" && s.cert_mode != "explicit" && s.cert_mode != "none")
        throw ConfigError("cert.mode must be auto, explicit or none");
    s.cert_eps = cfg.get_double("cert.eps", 0.0);
    s.cert_delta = cfg.get_double("cert.delta", 0.0);
    s.cert_K = cfg.get_double("cert.K", 0.0);

    s.ctl.safety = cfg.get_double("step.safety", 0.4);
    s.ctl.dt_max = cfg.get_double("step.dt_max", 0.05);
    if (!(s.ctl.safety > 0.0) || !(s.ctl.safety <= 1.0))
        throw ConfigError("step.safety must lie in (0, 1]");
    if (!(s.ctl.dt_max > 0.0)) throw ConfigError("step.dt_max must be positive");
    const std::string scheme = cfg.get_string("step.scheme", "transformed");
    if (scheme == "transformed")
        s.ctl.scheme = Scheme::transformed;
    else if (scheme == "primitive")
        s.ctl.scheme = Scheme::primitive;
    else
        throw ConfigError("step.scheme must be transformed or primitive");
    s.ctl.positivity_floor = cfg.get_double("step.positivity_floor", 0.0);

    s.t_end = cfg.get_double("run.t_end", -1.0);
    s.t_end_over_delta = cfg.get_double("run.t_end_over_delta", -1.0);
    s.observe_every = cfg.get_double("run.observe_every", -1.0);
    s.window_fraction = cfg.get_double("fit.window_fraction", 0.5);
    s.envelope_tol = cfg.get_double("envelope.tol", 0.02);
    s.ode_dt = cfg.get_double("ode.dt", 1e-5);
    s.ode_tol = cfg.get_double("ode.tol", 5e-3);
    s.mms_doublings = cfg.get_int("mms.doublings", 3);
    s.fisher_tol = cfg.get_double("fisher.tol", 1e-6);
    s.fisher_rate_band = cfg.get_double("fisher.rate_band", 0.25);
    s.sweep_beta_min = cfg.get_double("sweep.beta_min", 0.4);
    s.sweep_beta_max = cfg.get_double("sweep.beta_max", 2.0);
    s.sweep_beta_steps = cfg.get_int("sweep.beta_steps", 5);
    s.sweep_scale_min = cfg.get_double("sweep.scale_min", 0.5);
    s.sweep_scale_max = cfg.get_double("sweep.scale_max", 2.0);
    s.sweep_scale_steps = cfg.get_int("sweep.scale_steps", 3);
    s.sweep_t_end_over_delta = cfg.get_double("sweep.t_end_over_delta", 4.0);
    s.sweep_workers = cfg.get_int("sweep.workers", 1);
    s.out_dir = cfg.get_string("out.dir", "out");

    cfg.reject_unknown();
    return s;
}

inline std::string fmt(double x) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.6g", x);
    return buf;
}

// Fits that must tolerate a tail underflowing to zero.
inline DecayFit safe_fit(const std::vector<double>& t,
                         const std::vector<double>& v, double wf) {
    return fit_decay_positive(t, v, wf);
}

} // namespace detail

// ---------------------------------------------------------------- theorem11

inline ScenarioResult run_theorem11(const detail::ScenarioSetup& s) {
    namespace fs = std::filesystem;
    ScenarioResult res;
    const auto wall0 = std::chrono::steady_clock::now();

    // Tumor profile first: the certificate depends on its extrema.
    InitialProfile uprof = s.profile;
    uprof.v_amp = uprof.w_amp = uprof.z_amp = 0.0;
    InitialData probe;
    try {
        probe = make_initial(s.grid, uprof, nullptr);
    } catch (const std::invalid_argument& e) {
        res.note(e.what());
        res.exit_code = exit_config_error;
        return res;
    }

    if (!check_threshold(s.params.beta, probe.u0_min, probe.u0_max)) {
        res.note("threshold condition fails: beta*max(1,u0_max) = " +
                 detail::fmt(s.params.beta * std::max(1.0, probe.u0_max)) +
                 " is not below 1 + (1 + 1/u0_min)^-1 = " +
                 detail::fmt(threshold_cap(probe.u0_min)));
        res.exit_code = exit_config_error;
        return res;
    }

    SmallnessCertificate cert;
    if (s.cert_mode == "explicit")
        cert = make_certificate(s.params.beta, s.params.mu, probe.u0_min,
                                probe.u0_max, s.cert_eps, s.cert_delta, s.cert_K);
    else
        cert = find_certificate(s.params.beta, s.params.mu, probe.u0_min,
                                probe.u0_max);
    if (!cert.valid) {
        res.note("no valid smallness certificate: " + cert.note);
        res.exit_code = exit_config_error;
        return res;
    }

    InitialProfile prof = s.profile;
    if (prof.kind == InitialProfile::Kind::bump) {
        if (prof.v_amp < 0.0) prof.v_amp = s.small_frac * cert.eps;
        if (prof.w_amp < 0.0) prof.w_amp = s.small_frac * cert.eps;
        if (prof.z_amp < 0.0) prof.z_amp = s.small_frac * cert.eps;
    }
    InitialData init;
    try {
        init = make_initial(s.grid, prof, &cert);
    } catch (const std::invalid_argument& e) {
        res.note(e.what());
        res.exit_code = exit_config_error;
        return res;
    }

    double t_end = s.t_end;
    if (t_end <= 0.0)
        t_end = (s.t_end_over_delta > 0.0 ? s.t_end_over_delta : 20.0) / cert.delta;
    const double obs = s.observe_every > 0.0 ? s.observe_every : t_end / 400.0;

    std::vector<NormRecord> records;
    RunResult rr;
    try {
        rr = run(make_state(init), s.params, s.ctl, t_end, obs,
                 [&](const SimState& st) { records.push_back(compute_norms(st)); });
    } catch (const SolverAbort& e) {
        res.note(std::string("solver abort at t=") + detail::fmt(e.t) + ": " +
                 e.what());
        res.exit_code = exit_solver_abort;
        return res;
    }

    fs::create_directories(s.out_dir);
    {
        std::ofstream os(s.out_dir + "/series.csv");
        write_series_header(os);
        for (const NormRecord& r : records) write_series_row(os, r);
    }
    {
        std::ofstream os(s.out_dir + "/certificate.txt");
        write_certificate_report(os, cert);
    }
    EnvelopeSet env{cert, init.u0_min, init.u0_max, init.z0_max};
    {
        std::vector<double> times;
        for (const NormRecord& r : records) times.push_back(r.t);
        std::ofstream os(s.out_dir + "/envelope.csv");
        write_envelope_csv(os, env, times);
    }
    const EnvelopeReport erep = envelope_report(records, env, s.envelope_tol);
    {
        std::ofstream os(s.out_dir + "/envelope_report.txt");
        write_envelope_report(os, erep);
    }
    write_checkpoint(s.out_dir + "/checkpoint", rr.state);

    const DecayRates pred = predicted_rates(cert);
    std::vector<double> ts, v_sup, z_sup, b_max, u_sup, gv2_sq;
    for (const NormRecord& r : records) {
        ts.push_back(r.t);
        v_sup.push_back(r.sup_v);
        z_sup.push_back(r.sup_z);
        b_max.push_back(r.max_b);
        u_sup.push_back(r.sup_u_minus_1);
        gv2_sq.push_back(r.grad_v_l2 * r.grad_v_l2);
    }
    struct Row {
        const char* name;
        double predicted;
        DecayFit fit;
        bool ok;
    };
    std::vector<Row> rows;
    bool fits_ok = true;
    auto add_fit = [&](const char* name, const std::vector<double>& series,
                       double predicted, bool resolved) {
        Row row{name, predicted, {}, false};
        try {
            // sup|u - 1| is measured through a cancellation and bottoms out
            // at the rounding floor; fit it only where it is resolved.
            row.fit = resolved
                          ? fit_decay_resolved(ts, series, s.window_fraction)
                          : detail::safe_fit(ts, series, s.window_fraction);
            row.ok = row.fit.rate >= 0.9 * predicted;
        } catch (const std::invalid_argument&) {
            row.ok = false;
        }
        fits_ok = fits_ok && row.ok;
        rows.push_back(row);
    };
    add_fit("sup_v", v_sup, pred.v, false);
    add_fit("sup_z", z_sup, pred.z, false);
    add_fit("max_b", b_max, pred.b, false);
    add_fit("sup_u_minus_1", u_sup, pred.u_minus_1, true);
    add_fit("grad_v_l2_sq", gv2_sq, pred.grad_v_sq, false);
    {
        std::ofstream os(s.out_dir + "/decay_report.txt");
        for (const Row& r : rows)
            os << r.name << " predicted=" << detail::fmt(r.predicted)
               << " fitted=" << detail::fmt(r.fit.rate)
               << " r2=" << detail::fmt(r.fit.r2)
               << " samples=" << r.fit.samples << " pass=" << (r.ok ? 1 : 0)
               << '\n';
    }

    const NormRecord& last = records.back();
    res.put("eps", cert.eps);
    res.put("delta", cert.delta);
    res.put("K", cert.K);
    res.put("a_star", cert.a_star);
    res.put("eta", cert.eta);
    res.put("t_end", t_end);
    res.put("steps", static_cast<double>(rr.stats.steps));
    res.put("ratio_a_lower", erep.a_lower.ratio);
    res.put("ratio_v", erep.v.ratio);
    res.put("ratio_a_upper", erep.a_upper.ratio);
    res.put("ratio_b", erep.b.ratio);
    res.put("ratio_z", erep.z.ratio);
    res.put("min_a_run", rr.stats.min_a);
    res.put("min_v_run", rr.stats.min_v);
    res.put("min_b_run", rr.stats.min_b);
    res.put("min_z_run", rr.stats.min_z);
    res.put("v_monotone", rr.stats.v_monotone ? 1.0 : 0.0);
    res.put("sup_u_minus_1_end", last.sup_u_minus_1);
    res.put("w14_v_end", last.w14_v);
    for (const Row& r : rows) {
        res.put(std::string("rate_") + r.name, r.fit.rate);
        res.put(std::string("pred_") + r.name, r.predicted);
        res.put(std::string("r2_") + r.name, r.fit.r2);
    }
    {
        double gv5_at1 = -1.0, gv5_max_after1 = 0.0;
        for (const NormRecord& r : records) {
            if (gv5_at1 < 0.0 && r.t >= 1.0) gv5_at1 = r.grad_v_l5;
            if (r.t > 1.0) gv5_max_after1 = std::max(gv5_max_after1, r.grad_v_l5);
        }
        if (gv5_at1 > 0.0) res.put("gv5_growth", gv5_max_after1 / gv5_at1);
    }
    const auto wall1 = std::chrono::steady_clock::now();
    res.put("runtime_sec",
            std::chrono::duration<double>(wall1 - wall0).count());

    if (!erep.pass) {
        res.note("envelope compliance failed");
        res.exit_code = exit_checks_failed;
    }
    if (!fits_ok) {
        res.note("fitted decay rates below 0.9 of prediction");
        res.exit_code = exit_checks_failed;
    }
    if (res.exit_code == exit_ok)
        res.note("theorem11 checks passed: eps=" + detail::fmt(cert.eps) +
                 " delta=" + detail::fmt(cert.delta) +
                 " a_star=" + detail::fmt(cert.a_star));
    return res;
}

// --------------------------------------------------------------- ode-oracle

inline ScenarioResult run_ode_oracle(const detail::ScenarioSetup& s) {
    ScenarioResult res;
    InitialProfile prof = s.profile;
    if (prof.kind != InitialProfile::Kind::constant) {
        res.note("ode-oracle requires init.profile = constant");
        res.exit_code = exit_config_error;
        return res;
    }
    InitialData init;
    try {
        init = make_initial(s.grid, prof, nullptr);
    } catch (const std::invalid_argument& e) {
        res.note(e.what());
        res.exit_code = exit_config_error;
        return res;
    }
    const double t_end = s.t_end > 0.0 ? s.t_end : 10.0;
    const double obs = s.observe_every > 0.0 ? s.observe_every : 0.1;

    std::vector<std::array<double, 5>> pde;  // t, a, v, b, z at cell 0
    double inhomogeneity = 0.0;
    RunResult rr;
    try {
        rr = run(make_state(init), s.params, s.ctl, t_end, obs,
                 [&](const SimState& st) {
                     pde.push_back({st.t, st.a.values[0], st.v.values[0],
                                    st.b.values[0], st.z.values[0]});
                     for (const ScalarField* f : {&st.a, &st.v, &st.b, &st.z})
                         inhomogeneity = std::max(
                             inhomogeneity, max_value(*f) - min_value(*f));
                 });
    } catch (const SolverAbort& e) {
        res.note(std::string("solver abort at t=") + detail::fmt(e.t) + ": " +
                 e.what());
        res.exit_code = exit_solver_abort;
        return res;
    }

    const ModelParams p = s.params;
    OdeRhs rhs = [&p](double, const std::vector<double>& y,
                      std::vector<double>& dy) {
        const double a = y[0], v = y[1], b = y[2], z = y[3];
        const double ev = std::exp(v);
        dy[0] = eval_f(a, b, v, z, p.mu);
        dy[1] = -(a + b) * ev * v;
        dy[2] = eval_g(a, b, v, z, p.mu);
        dy[3] = -z - a * ev * z + p.beta * b * ev;
    };
    const std::size_t stride =
        static_cast<std::size_t>(std::llround(obs / s.ode_dt));
    if (stride == 0 || std::abs(stride * s.ode_dt - obs) > 1e-9 * obs) {
        res.note("ode.dt must divide run.observe_every");
        res.exit_code = exit_config_error;
        return res;
    }
    const double emv = std::exp(-init.v0.values[0]);
    OracleTrajectory oracle = rk4_oracle(
        rhs,
        {init.u0.values[0] * emv, init.v0.values[0], init.w0.values[0] * emv,
         init.z0.values[0]},
        t_end, s.ode_dt, stride);

    double disc = 0.0;
    const std::size_t m = std::min(pde.size(), oracle.states.size());
    for (std::size_t k = 0; k < m; ++k)
        for (int c = 0; c < 4; ++c)
            disc = std::max(disc,
                            std::abs(pde[k][c + 1] - oracle.states[k][c]));

    res.put("discrepancy", disc);
    res.put("inhomogeneity", inhomogeneity);
    res.put("steps", static_cast<double>(rr.stats.steps));
    res.note("max |PDE - RK4| over fields and observation times = " +
             detail::fmt(disc));
    if (!(disc <= s.ode_tol) || inhomogeneity != 0.0)
        res.exit_code = exit_checks_failed;
    return res;
}

// ---------------------------------------------------------------------- mms

inline ScenarioResult run_mms(const detail::ScenarioSetup& s) {
    ScenarioResult res;
    constexpr double pi = 3.14159265358979323846;
    const int dim = s.grid.dim;
    if (s.mms_doublings < 1 || s.mms_doublings > 8) {
        res.note("mms.doublings must lie in [1, 8]");
        res.exit_code = exit_config_error;
        return res;
    }
    struct Mode {
        double base, amp;
    };
    const Mode ma{1.5, 0.5}, mv{0.3, 0.2}, mb{0.5, 0.2}, mz{0.4, 0.3};
    std::vector<double> hs, errs;
    for (int level = 0; level <= s.mms_doublings; ++level) {
        std::vector<double> lengths(dim), kappa(dim);
        std::vector<int> cells(dim);
        for (int d = 0; d < dim; ++d) {
            lengths[d] = s.grid.length[d];
            cells[d] = s.grid.cells[d] << level;
            kappa[d] = pi / lengths[d];
        }
        const GridSpec g = make_grid(dim, lengths, cells);
        auto cosprod = [&](double x, double y, double z) {
            double c = std::cos(kappa[0] * x);
            if (dim > 1) c *= std::cos(kappa[1] * y);
            if (dim > 2) c *= std::cos(kappa[2] * z);
            return c;
        };
        auto dcos = [&](int axis, double x, double y, double z) {
            const double xs[3] = {x, y, z};
            double r = 1.0;
            for (int d = 0; d < dim; ++d)
                r *= (d == axis) ? -kappa[d] * std::sin(kappa[d] * xs[d])
                                 : std::cos(kappa[d] * xs[d]);
            return r;
        };
        double ksq = 0.0;
        for (int d = 0; d < dim; ++d) ksq += kappa[d] * kappa[d];

        SimState st;
        st.a = sample_field(g, [&](double x, double y, double z) {
            return ma.base + ma.amp * cosprod(x, y, z);
        });
        st.v = sample_field(g, [&](double x, double y, double z) {
            return mv.base + mv.amp * cosprod(x, y, z);
        });
        st.b = sample_field(g, [&](double x, double y, double z) {
            return mb.base + mb.amp * cosprod(x, y, z);
        });
        st.z = sample_field(g, [&](double x, double y, double z) {
            return mz.base + mz.amp * cosprod(x, y, z);
        });
        const RhsFields r = rhs_transformed(st, s.params);

        double err = 0.0;
        std::size_t idx = 0;
        const int n0 = g.cells[0];
        const int n1 = dim > 1 ? g.cells[1] : 1;
        const int n2 = dim > 2 ? g.cells[2] : 1;
        for (int i0 = 0; i0 < n0; ++i0)
            for (int i1 = 0; i1 < n1; ++i1)
                for (int i2 = 0; i2 < n2; ++i2, ++idx) {
                    const double x = g.center(0, i0);
                    const double y = dim > 1 ? g.center(1, i1) : 0.0;
                    const double z = dim > 2 ? g.center(2, i2) : 0.0;
                    const double C = cosprod(x, y, z);
                    const double av = ma.base + ma.amp * C;
                    const double vv = mv.base + mv.amp * C;
                    const double bv = mb.base + mb.amp * C;
                    const double zv = mz.base + mz.amp * C;
                    const double ev = std::exp(vv);
                    double gradva = 0.0, gradvb = 0.0;
                    for (int d = 0; d < dim; ++d) {
                        const double dc = dcos(d, x, y, z);
                        gradva += (mv.amp * dc) * (ma.amp * dc);
                        gradvb += (mv.amp * dc) * (mb.amp * dc);
                    }
                    const double lap_a = -ksq * ma.amp * C;
                    const double lap_b = -ksq * mb.amp * C;
                    const double lap_z = -ksq * mz.amp * C;
                    const double da =
                        lap_a + gradva + eval_f(av, bv, vv, zv, s.params.mu);
                    const double db =
                        lap_b + gradvb + eval_g(av, bv, vv, zv, s.params.mu);
                    const double dz = s.params.dz * lap_z - zv - av * ev * zv +
                                      s.params.beta * bv * ev;
                    err = std::max(err, std::abs(r.da.values[idx] - da));
                    err = std::max(err, std::abs(r.db.values[idx] - db));
                    err = std::max(err, std::abs(r.dz.values[idx] - dz));
                }
        hs.push_back(g.min_h());
        errs.push_back(err);
    }

    // Least-squares slope of log err against log h.
    double mx = 0.0, my = 0.0;
    const std::size_t n = hs.size();
    std::vector<double> lx(n), ly(n);
    for (std::size_t i = 0; i < n; ++i) {
        lx[i] = std::log(hs[i]);
        ly[i] = std::log(errs[i]);
        mx += lx[i];
        my += ly[i];
    }
    mx /= n;
    my /= n;
    double sxx = 0.0, sxy = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        sxx += (lx[i] - mx) * (lx[i] - mx);
        sxy += (lx[i] - mx) * (ly[i] - my);
    }
    const double slope = sxy / sxx;
    for (std::size_t i = 0; i + 1 < n; ++i) {
        res.put("order_" + std::to_string(i),
                std::log2(errs[i] / errs[i + 1]));
    }
    res.put("order_slope", slope);
    res.put("err_finest", errs.back());
    res.note("spatial order (least squares over " + std::to_string(n) +
             " grids, dim=" + std::to_string(dim) + "): " + detail::fmt(slope));
    if (!(slope >= 1.9)) res.exit_code = exit_checks_failed;
    return res;
}

// ------------------------------------------------------------------- fisher

inline ScenarioResult run_fisher(const detail::ScenarioSetup& s) {
    ScenarioResult res;
    InitialProfile prof = s.profile;
    if (prof.kind == InitialProfile::Kind::bump) {
        if (prof.v_amp < 0.0) prof.v_amp = 0.0;
        if (prof.w_amp < 0.0) prof.w_amp = 0.0;
        if (prof.z_amp < 0.0) prof.z_amp = 0.0;
    }
    InitialData init;
    try {
        init = make_initial(s.grid, prof, nullptr);
    } catch (const std::invalid_argument& e) {
        res.note(e.what());
        res.exit_code = exit_config_error;
        return res;
    }
    if (init.v0_max != 0.0 || init.w0_max != 0.0 || init.z0_max != 0.0) {
        res.note("fisher requires v0 = w0 = z0 = 0");
        res.exit_code = exit_config_error;
        return res;
    }
    const double t_end = s.t_end > 0.0 ? s.t_end : 25.0;
    const double obs = s.observe_every > 0.0 ? s.observe_every : 0.25;

    std::vector<double> ts, usup;
    double stray = 0.0;  // anything nonzero in v, b, z
    RunResult rr;
    try {
        rr = run(make_state(init), s.params, s.ctl, t_end, obs,
                 [&](const SimState& st) {
                     ts.push_back(st.t);
                     ScalarField um1 = st.a;  // v = 0, so u = a
                     for (double& x : um1.values) x -= 1.0;
                     usup.push_back(max_abs(um1));
                     stray = std::max({stray, max_abs(st.v), max_abs(st.b),
                                       max_abs(st.z)});
                 });
    } catch (const SolverAbort& e) {
        res.note(std::string("solver abort at t=") + detail::fmt(e.t) + ": " +
                 e.what());
        res.exit_code = exit_solver_abort;
        return res;
    }

    double rate = 0.0, r2 = 0.0;
    bool fit_ok = false;
    try {
        const DecayFit fit = detail::safe_fit(ts, usup, s.window_fraction);
        rate = fit.rate;
        r2 = fit.r2;
        fit_ok = true;
    } catch (const std::invalid_argument&) {
    }
    res.put("stray", stray);
    res.put("sup_u_minus_1_end", usup.back());
    res.put("rate", rate);
    res.put("r2", r2);
    res.put("steps", static_cast<double>(rr.stats.steps));
    const bool zeros_ok = stray == 0.0;
    const bool decay_ok = usup.back() < s.fisher_tol;
    const bool rate_ok =
        fit_ok && std::abs(rate - s.params.mu) <= s.fisher_rate_band * s.params.mu;
    res.note(std::string("v,w,z stayed identically zero: ") +
             (zeros_ok ? "yes" : "NO"));
    res.note("sup|u-1| at t_end = " + detail::fmt(usup.back()) +
             ", fitted rate = " + detail::fmt(rate));
    if (!(zeros_ok && decay_ok && rate_ok)) res.exit_code = exit_checks_failed;
    return res;
}

// -------------------------------------------------------------------- sweep

struct SweepCell {
    double beta = 0.0;
    double eps_scale = 0.0;
    bool threshold_ok = false;
    bool cert_valid = false;
    double z_rate = 0.0;
    double z_r2 = 0.0;
    std::string classification = "error";
};

inline ScenarioResult run_sweep(const detail::ScenarioSetup& s) {
    namespace fs = std::filesystem;
    ScenarioResult res;
    if (s.sweep_beta_steps < 1 || s.sweep_scale_steps < 1) {
        res.note("sweep step counts must be >= 1");
        res.exit_code = exit_config_error;
        return res;
    }
    InitialProfile uprof = s.profile;
    uprof.v_amp = uprof.w_amp = uprof.z_amp = 0.0;
    InitialData probe;
    try {
        probe = make_initial(s.grid, uprof, nullptr);
    } catch (const std::invalid_argument& e) {
        res.note(e.what());
        res.exit_code = exit_config_error;
        return res;
    }

    auto grid_value = [](double lo, double hi, int steps, int i) {
        return steps == 1 ? lo : lo + (hi - lo) * i / (steps - 1);
    };

    // Reference scale from the smallest admissible beta column.
    double eps_ref = 1e-4, delta_ref = 0.05;
    for (int i = 0; i < s.sweep_beta_steps; ++i) {
        const double beta =
            grid_value(s.sweep_beta_min, s.sweep_beta_max, s.sweep_beta_steps, i);
        if (!check_threshold(beta, probe.u0_min, probe.u0_max)) continue;
        const SmallnessCertificate c =
            find_certificate(beta, s.params.mu, probe.u0_min, probe.u0_max);
        if (c.valid) {
            eps_ref = c.eps;
            delta_ref = c.delta;
            break;
        }
    }
    res.put("eps_ref", eps_ref);
    res.put("delta_ref", delta_ref);

    const double t_end = s.t_end > 0.0 ? s.t_end
                                        : s.sweep_t_end_over_delta / delta_ref;
    const double obs = s.observe_every > 0.0 ? s.observe_every : t_end / 100.0;

    const int n_cells = s.sweep_beta_steps * s.sweep_scale_steps;
    std::vector<SweepCell> cells(n_cells);

    auto run_cell = [&](int idx) {
        const int bi = idx / s.sweep_scale_steps;
        const int si = idx % s.sweep_scale_steps;
        SweepCell cell;
        cell.beta =
            grid_value(s.sweep_beta_min, s.sweep_beta_max, s.sweep_beta_steps, bi);
        cell.eps_scale = grid_value(s.sweep_scale_min, s.sweep_scale_max,
                                    s.sweep_scale_steps, si);
        try {
            cell.threshold_ok =
                check_threshold(cell.beta, probe.u0_min, probe.u0_max);
            if (cell.threshold_ok) {
                const SmallnessCertificate c = find_certificate(
                    cell.beta, s.params.mu, probe.u0_min, probe.u0_max);
                cell.cert_valid = c.valid;
            }
            ModelParams p = s.params;
            p.beta = cell.beta;
            InitialProfile prof = s.profile;
            const double amp = 0.5 * cell.eps_scale * eps_ref;
            if (prof.kind == InitialProfile::Kind::bump) {
                if (prof.v_amp < 0.0) prof.v_amp = amp;
                if (prof.w_amp < 0.0) prof.w_amp = amp;
                if (prof.z_amp < 0.0) prof.z_amp = amp;
            }
            const InitialData init = make_initial(s.grid, prof, nullptr);
            std::vector<double> ts, zs;
            run(make_state(init), p, s.ctl, t_end, obs,
                [&](const SimState& st) {
                    ts.push_back(st.t);
                    zs.push_back(max_value(st.z));
                });
            const DecayFit fit = detail::safe_fit(ts, zs, s.window_fraction);
            cell.z_rate = fit.rate;
            cell.z_r2 = fit.r2;
            if (fit.rate > 0.05 * delta_ref && fit.r2 > 0.9)
                cell.classification = "decay";
            else if (fit.rate < -0.01)
                cell.classification = "growth";
            else
                cell.classification = "indeterminate";
        } catch (const std::exception&) {
            cell.classification = "error";
        }
        return cell;
    };

    const int workers = std::max(1, s.sweep_workers);
    if (workers == 1) {
        for (int i = 0; i < n_cells; ++i) cells[i] = run_cell(i);
    } else {
        std::vector<std::future<SweepCell>> futs;
        futs.reserve(n_cells);
        for (int i = 0; i < n_cells; ++i)
            futs.push_back(std::async(std::launch::async, run_cell, i));
        for (int i = 0; i < n_cells; ++i) cells[i] = futs[i].get();
    }

    fs::create_directories(s.out_dir);
    {
        std::ofstream os(s.out_dir + "/sweep_map.csv");
        os << "beta,eps_scale,threshold_ok,cert_valid,z_fitted_rate,classification\n";
        char buf[40];
        for (const SweepCell& c : cells) {
            std::snprintf(buf, sizeof buf, "%.17g", c.beta);
            os << buf << ',';
            std::snprintf(buf, sizeof buf, "%.17g", c.eps_scale);
            os << buf << ',' << (c.threshold_ok ? 1 : 0) << ','
               << (c.cert_valid ? 1 : 0) << ',';
            std::snprintf(buf, sizeof buf, "%.17g", c.z_rate);
            os << buf << ',' << c.classification << '\n';
        }
    }
    int decay = 0, growth = 0, indet = 0, errors = 0;
    for (const SweepCell& c : cells) {
        if (c.classification == "decay") ++decay;
        else if (c.classification == "growth") ++growth;
        else if (c.classification == "indeterminate") ++indet;
        else ++errors;
    }
    res.put("cells", n_cells);
    res.put("decay", decay);
    res.put("growth", growth);
    res.put("indeterminate", indet);
    res.put("errors", errors);
    res.note("sweep cells: " + std::to_string(n_cells) + " (decay " +
             std::to_string(decay) + ", growth " + std::to_string(growth) +
             ", indeterminate " + std::to_string(indet) + ", error " +
             std::to_string(errors) + ")");
    return res;
}

// ------------------------------------------------------------------- custom

inline ScenarioResult run_custom(const detail::ScenarioSetup& s) {
    namespace fs = std::filesystem;
    ScenarioResult res;
    SmallnessCertificate cert;
    bool have_cert = false;

    InitialProfile uprof = s.profile;
    if (uprof.kind == InitialProfile::Kind::bump) {
        if (uprof.v_amp < 0.0) uprof.v_amp = 0.0;
        if (uprof.w_amp < 0.0) uprof.w_amp = 0.0;
        if (uprof.z_amp < 0.0) uprof.z_amp = 0.0;
    }
    InitialData init;
    try {
        init = make_initial(s.grid, uprof, nullptr);
        if (s.cert_mode == "auto") {
            cert = find_certificate(s.params.beta, s.params.mu, init.u0_min,
                                    init.u0_max);
            have_cert = cert.valid;
            if (!cert.valid) {
                res.note("no valid smallness certificate: " + cert.note);
                res.exit_code = exit_config_error;
                return res;
            }
        } else if (s.cert_mode == "explicit") {
            cert = make_certificate(s.params.beta, s.params.mu, init.u0_min,
                                    init.u0_max, s.cert_eps, s.cert_delta,
                                    s.cert_K);
            have_cert = cert.valid;
            if (!cert.valid) {
                res.note("explicit certificate rejected: " + cert.note);
                res.exit_code = exit_config_error;
                return res;
            }
        }
    } catch (const std::invalid_argument& e) {
        res.note(e.what());
        res.exit_code = exit_config_error;
        return res;
    }

    const double t_end = s.t_end > 0.0
                             ? s.t_end
                             : (have_cert && s.t_end_over_delta > 0.0
                                    ? s.t_end_over_delta / cert.delta
                                    : 10.0);
    const double obs = s.observe_every > 0.0 ? s.observe_every : t_end / 100.0;

    std::vector<NormRecord> records;
    RunResult rr;
    try {
        rr = run(make_state(init), s.params, s.ctl, t_end, obs,
                 [&](const SimState& st) { records.push_back(compute_norms(st)); });
    } catch (const SolverAbort& e) {
        res.note(std::string("solver abort at t=") + detail::fmt(e.t) + ": " +
                 e.what());
        res.exit_code = exit_solver_abort;
        return res;
    }

    fs::create_directories(s.out_dir);
    {
        std::ofstream os(s.out_dir + "/series.csv");
        write_series_header(os);
        for (const NormRecord& r : records) write_series_row(os, r);
    }
    write_checkpoint(s.out_dir + "/checkpoint", rr.state);
    if (have_cert) {
        std::ofstream os(s.out_dir + "/certificate.txt");
        write_certificate_report(os, cert);
        EnvelopeSet env{cert, init.u0_min, init.u0_max, init.z0_max};
        std::vector<double> times;
        for (const NormRecord& r : records) times.push_back(r.t);
        std::ofstream eos(s.out_dir + "/envelope.csv");
        write_envelope_csv(eos, env, times);
        const EnvelopeReport erep = envelope_report(records, env, s.envelope_tol);
        std::ofstream ros(s.out_dir + "/envelope_report.txt");
        write_envelope_report(ros, erep);
        res.put("envelope_pass", erep.pass ? 1.0 : 0.0);
        if (!erep.pass) {
            res.note("envelope compliance failed");
            res.exit_code = exit_checks_failed;
        }
    }
    res.put("steps", static_cast<double>(rr.stats.steps));
    res.put("sup_u_minus_1_end", records.back().sup_u_minus_1);
    return res;
}

// ------------------------------------------------------------------ routing

inline ScenarioResult run_scenario(const KeyValueConfig& cfg) {
    detail::ScenarioSetup s;
    try {
        s = detail::parse_setup(cfg);
    } catch (const ConfigError& e) {
        ScenarioResult res;
        res.note(e.what());
        res.exit_code = exit_config_error;
        return res;
    }
    if (s.scenario == "theorem11") return run_theorem11(s);
    if (s.scenario == "ode-oracle") return run_ode_oracle(s);
    if (s.scenario == "mms") return run_mms(s);
    if (s.scenario == "fisher") return run_fisher(s);
    if (s.scenario == "sweep") return run_sweep(s);
    return run_custom(s);
}

} // namespace virodyn
