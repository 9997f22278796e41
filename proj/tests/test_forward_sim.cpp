#include <doctest.h>

#include <cmath>

#include "mkv/control_opt.hpp"
#include "mkv/forward_sim.hpp"
#include "mkv/problem.hpp"

using namespace mkv;

namespace {

StepControl constant_control(double horizon, int action) {
    StepControl c;
    c.grid = TimeGrid{0.0, horizon, 1};
    c.cells = 1;
    c.table = {{action}};
    return c;
}

SimParams small_params(double t, double T, int steps, std::size_t n, std::uint64_t seed) {
    SimParams p;
    p.grid = TimeGrid{t, T, steps};
    p.n_xi = n;
    p.n_x = n;
    p.seed = seed;
    return p;
}

}  // namespace

TEST_SUITE_BEGIN("forward_sim");

TEST_CASE("evaluate_control conventions") {
    ActionSpace space;
    space.actions = {{0.0}, {1.0}};
    BrownianHistory none{{0.0, 0.0}};

    StepControl c = constant_control(1.0, 0);
    c.validate(space);
    CHECK(evaluate_control(c, 0.0, none) == 0);
    CHECK(evaluate_control(c, 0.999, none) == 0);
    CHECK_THROWS_AS(evaluate_control(c, 1.5, none), DomainError);

    StepControl two;
    two.grid = TimeGrid{0.0, 1.0, 2};
    two.cells = 1;
    two.table = {{0}, {1}};
    CHECK(evaluate_control(two, 0.49, none) == 0);
    CHECK(evaluate_control(two, 0.5, none) == 1);
    CHECK(evaluate_control(two, 1.0, none) == 1);  // s == T uses the last interval

    // L = 2 sign quantizer: last completed interval's increment < 0 -> cell 0.
    StepControl cells;
    cells.grid = TimeGrid{0.0, 1.0, 2};
    cells.cells = 2;
    cells.table = {{0, 0}, {0, 1}};
    BrownianHistory neg{{-0.3, 0.0}};
    BrownianHistory pos{{+0.3, 0.0}};
    CHECK(evaluate_control(cells, 0.75, neg) == 0);
    CHECK(evaluate_control(cells, 0.75, pos) == 1);
    CHECK(evaluate_control(cells, 0.25, neg) == 0);  // interval 0 has no history
}

TEST_CASE("zero problem keeps every particle constant") {
    const auto& p = find_problem("zero");
    StepControl c = constant_control(p.horizon, 0);
    StepControlPath path(c);
    auto xi = XiSampler::atoms(EmpiricalMeasure({{-1.0}, {2.0}}, {0.5, 0.5}));
    std::vector<double> x0{0.7};
    auto traj = simulate_coupled(p.coefficients, p.actions, path,
                                 small_params(0.0, p.horizon, 8, 4, 3), xi, x0);
    for (const auto& pc : traj) {
        for (std::size_t i = 0; i < pc.state.x.size(); ++i) CHECK(pc.state.x[i] == 0.7);
        CHECK(pc.state.xi[0] == -1.0);
    }
}

TEST_CASE("drift-only: Euler is exact for constant drift") {
    const auto& p = find_problem("drift-only");
    StepControl c = constant_control(p.horizon, 1);  // action +1
    StepControlPath path(c);
    auto xi = XiSampler::constant({0.0});
    std::vector<double> x0{0.25};
    SimParams sp = small_params(0.25, p.horizon, 6, 3, 5);
    auto traj = simulate_coupled(p.coefficients, p.actions, path, sp, xi, x0);
    for (const auto& pc : traj)
        CHECK(pc.state.x[0] == doctest::Approx(0.25 + (pc.time - 0.25)).epsilon(1e-14));

    // gain with f = 0, g = x is exact: x + (T - t)
    auto est = gain_estimate(p.coefficients, p.actions, path, sp, xi, x0);
    CHECK(est.mean == doctest::Approx(0.25 + 0.75).epsilon(1e-13));
    CHECK(est.std_error == doctest::Approx(0.0));
}

TEST_CASE("mean-field-drift: the cloud mean is invariant") {
    const auto& p = find_problem("mean-field-drift");
    StepControl c = constant_control(p.horizon, 0);
    StepControlPath path(c);
    auto xi = XiSampler::atoms(EmpiricalMeasure({{-1.0}, {1.0}}, {0.5, 0.5}));
    std::vector<double> x0{0.0};
    auto traj = simulate_coupled(p.coefficients, p.actions, path,
                                 small_params(0.0, p.horizon, 10, 64, 7), xi, x0);
    for (const auto& pc : traj) {
        double mean = 0.0;
        for (double v : pc.state.xi) mean += v;
        CHECK(std::abs(mean / 64.0) < 1e-14);
    }
}

TEST_CASE("determinism: identical seeds give bit-identical trajectories") {
    const auto& p = find_problem("mean-field-drift-noise");
    StepControl c = constant_control(p.horizon, 1);
    StepControlPath path(c);
    auto xi = XiSampler::gaussian({0.2}, {0.5});
    std::vector<double> x0{0.1};
    auto a = simulate_coupled(p.coefficients, p.actions, path,
                              small_params(0.0, p.horizon, 12, 16, 99), xi, x0);
    auto b = simulate_coupled(p.coefficients, p.actions, path,
                              small_params(0.0, p.horizon, 12, 16, 99), xi, x0);
    for (std::size_t i = 0; i < a.size(); ++i) {
        for (std::size_t k = 0; k < a[i].state.xi.size(); ++k)
            CHECK(a[i].state.xi[k] == b[i].state.xi[k]);
        for (std::size_t k = 0; k < a[i].state.x.size(); ++k)
            CHECK(a[i].state.x[k] == b[i].state.x[k]);
    }
}

TEST_CASE("common-noise pairing: x particle tracks its xi twin") {
    const auto& p = find_problem("mean-field-drift-noise");
    StepControl c = constant_control(p.horizon, 0);
    StepControlPath path(c);
    // Same start for xi and x: paired increments make the paths identical.
    auto xi = XiSampler::constant({0.4});
    std::vector<double> x0{0.4};
    auto traj = simulate_coupled(p.coefficients, p.actions, path,
                                 small_params(0.0, p.horizon, 9, 8, 21), xi, x0);
    for (const auto& pc : traj)
        for (std::size_t i = 0; i < pc.state.x.size(); ++i)
            CHECK(pc.state.x[i] == pc.state.xi[i]);
}

TEST_CASE("numerical blowup is reported") {
    CoefficientSet bad = scalar_coefficients(
        [](double, double x, const EmpiricalMeasure&, double) { return 1e160 * (x + 1.0); },
        [](double, double, const EmpiricalMeasure&, double) { return 0.0; },
        [](double, double, const EmpiricalMeasure&, double) { return 0.0; },
        [](double, const EmpiricalMeasure&) { return 0.0; });
    ActionSpace space;
    space.actions = {{0.0}};
    StepControl c = constant_control(1.0, 0);
    StepControlPath path(c);
    auto xi = XiSampler::constant({1.0});
    std::vector<double> x0{1.0};
    CHECK_THROWS_AS(
        simulate_coupled(bad, space, path, small_params(0.0, 1.0, 4, 2, 1), xi, x0),
        NumericalBlowup);
}

TEST_CASE("no blowup across the registry at dt <= 1/100, magnitudes stay affine") {
    for (const auto& p : registry()) {
        StepControl c = constant_control(p.horizon, 0);
        StepControlPath path(c);
        auto xi = XiSampler::atoms(EmpiricalMeasure({{-0.5}, {0.8}}, {0.5, 0.5}));
        std::vector<double> x0{0.6};
        auto traj = simulate_coupled(p.coefficients, p.actions, path,
                                     small_params(0.0, p.horizon, 100, 32, 13), xi, x0);
        double max_mag = 0.0;
        for (const auto& pc : traj)
            for (double v : pc.state.x) max_mag = std::max(max_mag, std::abs(v));
        CHECK_MESSAGE(max_mag <= 10.0 * (1.0 + 0.6), p.name);
    }
}

TEST_CASE("halving dt changes the quadratic-reward gain by O(dt)") {
    // f quadratic in x exposes the quadrature error; the path itself is exact.
    CoefficientSet quad = scalar_coefficients(
        [](double, double, const EmpiricalMeasure&, double a) { return a; },
        [](double, double, const EmpiricalMeasure&, double) { return 0.0; },
        [](double, double x, const EmpiricalMeasure&, double) { return x * x; },
        [](double, const EmpiricalMeasure&) { return 0.0; });
    ActionSpace space;
    space.actions = {{1.0}};
    StepControl c = constant_control(1.0, 0);
    StepControlPath path(c);
    auto xi = XiSampler::constant({0.0});
    std::vector<double> x0{0.0};
    // exact value: integral of s^2 over [0,1] = 1/3
    double e1 = gain_estimate(quad, space, path, small_params(0.0, 1.0, 10, 2, 1), xi, x0).mean;
    double e2 = gain_estimate(quad, space, path, small_params(0.0, 1.0, 20, 2, 1), xi, x0).mean;
    double e4 = gain_estimate(quad, space, path, small_params(0.0, 1.0, 40, 2, 1), xi, x0).mean;
    CHECK(std::abs(e1 - 1.0 / 3.0) > std::abs(e2 - 1.0 / 3.0));
    CHECK(std::abs(e2 - 1.0 / 3.0) > std::abs(e4 - 1.0 / 3.0));
    CHECK(std::abs(e2 - e1) <= 0.6 * 0.1);  // O(dt) bound with slack
}

TEST_CASE("flow_check replays are exact") {
    const auto& p = find_problem("mean-field-drift-noise");
    StepControl c = constant_control(p.horizon, 1);
    StepControlPath path(c);
    auto xi = XiSampler::gaussian({0.0}, {1.0});
    std::vector<double> x0{0.3};
    SimParams sp = small_params(0.0, p.horizon, 12, 64, 17);

    SUBCASE("s = t is the original run") {
        auto rep = flow_check(p.coefficients, p.actions, path, sp, xi, x0, 0.0);
        CHECK(rep.max_diff_xi == 0.0);
        CHECK(rep.max_diff_x == 0.0);
    }
    SUBCASE("midpoint restart") {
        auto rep = flow_check(p.coefficients, p.actions, path, sp, xi, x0, 0.5);
        CHECK(rep.max_diff_xi <= 1e-10);
        CHECK(rep.max_diff_x <= 1e-10);
    }
    SUBCASE("off-grid restart is a grid error") {
        CHECK_THROWS_AS(flow_check(p.coefficients, p.actions, path, sp, xi, x0, 0.51),
                        GridError);
    }
}

TEST_CASE("atom sampler allocates proportionally and deterministically") {
    auto xi = XiSampler::atoms(EmpiricalMeasure({{1.0}, {2.0}, {3.0}}, {0.5, 0.3, 0.2}));
    int c1 = 0, c2 = 0, c3 = 0;
    for (std::size_t i = 0; i < 10; ++i) {
        double v = xi.draw(i, 10, 4)[0];
        c1 += v == 1.0;
        c2 += v == 2.0;
        c3 += v == 3.0;
    }
    CHECK(c1 == 5);
    CHECK(c2 == 3);
    CHECK(c3 == 2);
}

TEST_SUITE_END();
