#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "virodyn/envelopes.hpp"
#include "virodyn/stepper.hpp"

using namespace virodyn;

namespace {

SimState uniform_state(const GridSpec& g, double a, double v, double b, double z) {
    SimState s;
    s.t = 0.0;
    s.a = ScalarField(g, a);
    s.v = ScalarField(g, v);
    s.b = ScalarField(g, b);
    s.z = ScalarField(g, z);
    return s;
}

SimState bump_state(const GridSpec& g) {
    InitialProfile p;
    p.kind = InitialProfile::Kind::bump;
    p.u_base = 1.0;
    p.u_amp = 0.05;
    p.v_amp = 0.01;
    p.w_amp = 0.01;
    p.z_amp = 0.01;
    return make_state(make_initial(g, p, nullptr));
}

double field_spread(const ScalarField& f) { return max_value(f) - min_value(f); }

} // namespace

TEST_CASE("tumor-at-carrying-capacity state is a fixed point of the dynamics") {
    const GridSpec g = make_grid(1, {10.0}, {16});
    const SimState s = uniform_state(g, 1.0, 0.0, 0.0, 0.0);
    const ModelParams p;
    const RhsFields r = rhs_transformed(s, p);
    for (std::size_t i = 0; i < g.total(); ++i) {
        CHECK(r.da.values[i] == 0.0);
        CHECK(r.dv.values[i] == 0.0);
        CHECK(r.db.values[i] == 0.0);
        CHECK(r.dz.values[i] == 0.0);
    }
}

TEST_CASE("spatially uniform states reduce to the pointwise reactions") {
    const GridSpec g = make_grid(2, {1.0, 1.0}, {6, 5});
    const double a = 0.7, v = 0.02, b = 0.3, z = 0.1;
    const SimState s = uniform_state(g, a, v, b, z);
    const ModelParams p;
    const RhsFields r = rhs_transformed(s, p);

    CHECK(field_spread(r.da) == 0.0);
    CHECK(field_spread(r.dv) == 0.0);
    CHECK(field_spread(r.db) == 0.0);
    CHECK(field_spread(r.dz) == 0.0);

    const double ev = std::exp(v);
    CHECK(r.da.values[0] == Catch::Approx(eval_f(a, b, v, z, p.mu)).epsilon(1e-15));
    CHECK(r.db.values[0] == Catch::Approx(eval_g(a, b, v, z, p.mu)).epsilon(1e-15));
    CHECK(r.dv.values[0] == Catch::Approx(-(a + b) * ev * v).epsilon(1e-15));
    CHECK(r.dz.values[0]
          == Catch::Approx(-z - a * ev * z + p.beta * b * ev).epsilon(1e-15));
}

TEST_CASE("virus production balances its reaction budget in the mean") {
    const GridSpec g = make_grid(1, {10.0}, {64});
    SimState s = bump_state(g);
    const ModelParams p;

    auto budget_gap = [&]() {
        const RhsFields r = rhs_transformed(s, p);
        ScalarField uz(g), w(g);
        for (std::size_t i = 0; i < g.total(); ++i) {
            const double ev = std::exp(s.v.values[i]);
            uz.values[i] = s.a.values[i] * ev * s.z.values[i];
            w.values[i] = s.b.values[i] * ev;
        }
        const double lhs = integrate(r.dz);
        const double rhs =
            -integrate(s.z) - integrate(uz) + p.beta * integrate(w);
        const double scale = std::abs(integrate(s.z)) + std::abs(integrate(uz))
                           + std::abs(p.beta * integrate(w)) + 1.0;
        return std::abs(lhs - rhs) / scale;
    };

    CHECK(budget_gap() <= 1e-12);

    // The same identity holds along a discrete trajectory step by step.
    const StepControl ctl;
    for (int k = 0; k < 20; ++k) {
        ScalarField uz(g), w(g);
        for (std::size_t i = 0; i < g.total(); ++i) {
            const double ev = std::exp(s.v.values[i]);
            uz.values[i] = s.a.values[i] * ev * s.z.values[i];
            w.values[i] = s.b.values[i] * ev;
        }
        const double dt = stable_dt(s, p, ctl);
        const double predicted =
            integrate(s.z)
            + dt * (-integrate(s.z) - integrate(uz) + p.beta * integrate(w));
        step_euler(s, p, ctl, dt);
        const double scale = std::abs(predicted) + 1.0;
        CHECK(std::abs(integrate(s.z) - predicted) / scale <= 1e-12);
    }
}

TEST_CASE("pure diffusion conserves tumor mass and leaves zero fields zero") {
    const GridSpec g = make_grid(1, {10.0}, {64});
    ModelParams p;
    p.mu = 0.0;  // growth switched off; raw struct, not validated
    p.beta = 1.2;
    p.dz = 1.0;
    SimState s;
    s.a = sample_field(g, [&](double x, double, double) {
        return 1.0 + 0.5 * bump_weight(g, x, 0.0, 0.0);
    });
    s.v = ScalarField(g, 0.0);
    s.b = ScalarField(g, 0.0);
    s.z = ScalarField(g, 0.0);

    const double mass0 = integrate(s.a);
    const StepControl ctl;
    for (int k = 0; k < 100; ++k) step_euler(s, p, ctl, stable_dt(s, p, ctl));
    CHECK(std::abs(integrate(s.a) - mass0) <= 1e-12 * std::abs(mass0));
    for (std::size_t i = 0; i < g.total(); ++i) {
        CHECK(s.v.values[i] == 0.0);
        CHECK(s.b.values[i] == 0.0);
        CHECK(s.z.values[i] == 0.0);
    }
}

TEST_CASE("fixed point is preserved bitwise over many steps") {
    const GridSpec g = make_grid(2, {10.0, 10.0}, {8, 8});
    SimState s = uniform_state(g, 1.0, 0.0, 0.0, 0.0);
    const ModelParams p;
    const StepControl ctl;
    for (int k = 0; k < 200; ++k) step_euler(s, p, ctl, 0.01);
    for (std::size_t i = 0; i < g.total(); ++i) {
        CHECK(s.a.values[i] == 1.0);
        CHECK(s.v.values[i] == 0.0);
        CHECK(s.b.values[i] == 0.0);
        CHECK(s.z.values[i] == 0.0);
    }
}

TEST_CASE("spatial uniformity is preserved bitwise") {
    const GridSpec g = make_grid(1, {10.0}, {32});
    SimState s = uniform_state(g, 0.7, 0.02, 0.3, 0.1);
    const ModelParams p;
    const StepControl ctl;
    for (int k = 0; k < 50; ++k) step_euler(s, p, ctl, stable_dt(s, p, ctl));
    CHECK(field_spread(s.a) == 0.0);
    CHECK(field_spread(s.v) == 0.0);
    CHECK(field_spread(s.b) == 0.0);
    CHECK(field_spread(s.z) == 0.0);
}

TEST_CASE("stable step size frozen values") {
    const ModelParams p;
    StepControl ctl;

    {
        const GridSpec g = make_grid(1, {1.0}, {10});
        SimState s = uniform_state(g, 0.01, 0.0, 0.0, 0.0);
        // diffusive bound h^2/2 = 0.005 is the binding constraint
        CHECK(stable_dt(s, p, ctl) == Catch::Approx(0.002).margin(1e-12));
    }
    {
        const GridSpec g = make_grid(1, {1.0}, {20});
        SimState s = uniform_state(g, 0.01, 0.0, 0.0, 0.0);
        CHECK(stable_dt(s, p, ctl) == Catch::Approx(0.0005).margin(1e-12));
    }
    {
        // Coarse grid: dt_max is the binding constraint.
        const GridSpec g = make_grid(1, {10.0}, {4});
        SimState s = uniform_state(g, 0.01, 0.0, 0.0, 0.0);
        CHECK(stable_dt(s, p, ctl) <= ctl.safety * ctl.dt_max + 1e-15);
    }

    SimState s = uniform_state(make_grid(1, {1.0}, {4}), 1.0, 0.0, 0.0, 0.0);
    CHECK_THROWS_AS(step_euler(s, p, ctl, 0.0), std::invalid_argument);
}

TEST_CASE("observation times are hit exactly") {
    const GridSpec g = make_grid(1, {10.0}, {16});
    const ModelParams p;
    const StepControl ctl;

    {
        std::vector<double> times;
        run(uniform_state(g, 1.0, 0.0, 0.0, 0.0), p, ctl, 1.0, 0.3,
            [&](const SimState& s) { times.push_back(s.t); });
        REQUIRE(times.size() == 5);
        CHECK(times[0] == 0.0);
        CHECK(times[1] == 1.0 * 0.3);
        CHECK(times[2] == 2.0 * 0.3);
        CHECK(times[3] == 3.0 * 0.3);
        CHECK(times[4] == 1.0);
    }
    {
        // Zero-length run: single observation, zero steps.
        std::vector<double> times;
        const RunResult res =
            run(uniform_state(g, 1.0, 0.0, 0.0, 0.0), p, ctl, 0.0, 0.1,
                [&](const SimState& s) { times.push_back(s.t); });
        CHECK(times.size() == 1);
        CHECK(res.stats.steps == 0);
    }
    {
        // Observation interval equal to the whole run: endpoints only.
        std::vector<double> times;
        run(uniform_state(g, 1.0, 0.0, 0.0, 0.0), p, ctl, 0.5, 0.5,
            [&](const SimState& s) { times.push_back(s.t); });
        REQUIRE(times.size() == 2);
        CHECK(times[0] == 0.0);
        CHECK(times[1] == 0.5);
    }

    CHECK_THROWS_AS(run(uniform_state(g, 1.0, 0.0, 0.0, 0.0), p, ctl, -1.0, 0.1),
                    std::invalid_argument);
}

TEST_CASE("halving the safety factor halves the time-marching error") {
    const GridSpec g = make_grid(1, {10.0}, {4});
    const ModelParams p;
    const double t_end = 2.0;

    OdeRhs rhs = [&](double, const std::vector<double>& y, std::vector<double>& dy) {
        const double a = y[0], v = y[1], b = y[2], z = y[3];
        const double ev = std::exp(v);
        dy[0] = eval_f(a, b, v, z, p.mu);
        dy[1] = -(a + b) * ev * v;
        dy[2] = eval_g(a, b, v, z, p.mu);
        dy[3] = -z - a * ev * z + p.beta * b * ev;
    };
    const OracleTrajectory oracle = rk4_oracle(rhs, {0.7, 0.02, 0.3, 0.1}, t_end,
                                               1e-4, 1u << 30);
    const std::vector<double>& ref = oracle.states.back();

    auto run_err = [&](double safety) {
        StepControl ctl;
        ctl.safety = safety;
        const RunResult res =
            run(uniform_state(g, 0.7, 0.02, 0.3, 0.1), p, ctl, t_end, 0.0);
        const SimState& s = res.state;
        return std::abs(s.a.values[0] - ref[0]) + std::abs(s.v.values[0] - ref[1])
             + std::abs(s.b.values[0] - ref[2]) + std::abs(s.z.values[0] - ref[3]);
    };

    const double e_coarse = run_err(0.4);
    const double e_fine = run_err(0.2);
    CHECK(e_fine < e_coarse);
    CHECK(e_fine / e_coarse < 0.7);
}

TEST_CASE("positivity floor violations abort with the failure time") {
    const GridSpec g = make_grid(1, {10.0}, {8});
    SimState s = uniform_state(g, 1.0, 0.0, 0.0, 5.0);
    const ModelParams p;
    StepControl ctl;
    ctl.positivity_floor = 0.5;
    bool thrown = false;
    try {
        run(std::move(s), p, ctl, 10.0, 0.0);
    } catch (const SolverAbort& e) {
        thrown = true;
        CHECK(e.t > 0.0);
    }
    CHECK(thrown);
}

TEST_CASE("transformed and primitive schemes converge to each other") {
    const ModelParams p;
    const double t_end = 0.5;

    auto scheme_gap = [&](int n) {
        const GridSpec g = make_grid(1, {10.0}, {n});
        StepControl ct;
        ct.scheme = Scheme::transformed;
        StepControl cp;
        cp.scheme = Scheme::primitive;
        const SimState st = run(bump_state(g), p, ct, t_end, 0.0).state;
        const SimState sp = run(bump_state(g), p, cp, t_end, 0.0).state;
        double gap = 0.0;
        for (std::size_t i = 0; i < g.total(); ++i) {
            gap = std::max(gap, std::abs(st.a.values[i] - sp.a.values[i]));
            gap = std::max(gap, std::abs(st.v.values[i] - sp.v.values[i]));
            gap = std::max(gap, std::abs(st.b.values[i] - sp.b.values[i]));
            gap = std::max(gap, std::abs(st.z.values[i] - sp.z.values[i]));
        }
        return gap;
    };

    const double gap32 = scheme_gap(32);
    const double gap64 = scheme_gap(64);
    CHECK(gap64 < gap32);
    CHECK(gap32 / gap64 >= 3.0);
}

TEST_CASE("checkpoints round-trip bitwise") {
    namespace fs = std::filesystem;
    const GridSpec g = make_grid(1, {10.0}, {24});
    const ModelParams p;
    const StepControl ctl;
    const RunResult res = run(bump_state(g), p, ctl, 0.7, 0.0);

    write_checkpoint("tmp_ckpt", res.state);
    const SimState r = read_checkpoint("tmp_ckpt");
    CHECK(r.t == res.state.t);
    for (std::size_t i = 0; i < g.total(); ++i) {
        CHECK(r.a.values[i] == res.state.a.values[i]);
        CHECK(r.v.values[i] == res.state.v.values[i]);
        CHECK(r.b.values[i] == res.state.b.values[i]);
        CHECK(r.z.values[i] == res.state.z.values[i]);
    }

    {
        std::ofstream os("tmp_ckpt/manifest.txt");
        os << "bogus\n";
    }
    CHECK_THROWS_AS(read_checkpoint("tmp_ckpt"), std::runtime_error);
}
