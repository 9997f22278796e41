#include "mkv/problem.hpp"

#include <array>
#include <cmath>

#include "mkv/rng.hpp"

namespace mkv {

double ActionSpace::rho(std::size_t i, std::size_t j) const {
    double s = 0.0;
    for (std::size_t k = 0; k < actions[i].size(); ++k) {
        double d = actions[i][k] - actions[j][k];
        s += d * d;
    }
    return std::min(1.0 - 1e-9, metric_scale * std::sqrt(s));
}

void ActionSpace::validate() const {
    if (actions.empty()) throw DegenerateInput("action space needs at least one action");
    if (metric_scale <= 0.0) throw DegenerateInput("metric_scale must be positive");
    const std::size_t q = actions.front().size();
    for (std::size_t i = 0; i < actions.size(); ++i) {
        if (actions[i].size() != q) throw DimensionError("actions of mixed dimension");
        for (std::size_t j = i + 1; j < actions.size(); ++j)
            if (actions[i] == actions[j]) throw DegenerateInput("duplicate action");
    }
}

CoefficientSet scalar_coefficients(
    std::function<double(double, double, const EmpiricalMeasure&, double)> b,
    std::function<double(double, double, const EmpiricalMeasure&, double)> sigma,
    std::function<double(double, double, const EmpiricalMeasure&, double)> f,
    std::function<double(double, const EmpiricalMeasure&)> g) {
    CoefficientSet c;
    c.state_dim = 1;
    c.noise_dim = 1;
    c.drift = [b = std::move(b)](double t, std::span<const double> x, const EmpiricalMeasure& pi,
                                 std::span<const double> a, std::span<double> out) {
        out[0] = b(t, x[0], pi, a[0]);
    };
    c.diffusion = [sigma = std::move(sigma)](double t, std::span<const double> x,
                                             const EmpiricalMeasure& pi, std::span<const double> a,
                                             std::span<double> out) {
        out[0] = sigma(t, x[0], pi, a[0]);
    };
    c.running_reward = [f = std::move(f)](double t, std::span<const double> x,
                                          const EmpiricalMeasure& pi, std::span<const double> a) {
        return f(t, x[0], pi, a[0]);
    };
    c.terminal_reward = [g = std::move(g)](std::span<const double> x, const EmpiricalMeasure& pi) {
        return g(x[0], pi);
    };
    return c;
}

// ---------------------------------------------------------------------------
// LQ Riccati oracle.
//
// With z = mbar - x the value separates into a mean part a(t) z^2 and a
// fluctuation part -chi(t):
//   a'   = 2 kappa a - (q^2 - eps)/2,          a(T)   = -c/2
//   eta' = 2 eta (q + kappa) + eta^2 + q^2 - eps,  eta(T) = c
//   chi' = -sigma^2 eta / 2,                   chi(T) = -g0
//   V(t, x, pi) = a(t) (mbar - x)^2 - chi(t).
// ---------------------------------------------------------------------------

namespace {

std::array<double, 3> lq_rhs(const LqParams& p, const std::array<double, 3>& y) {
    const double a = y[0], eta = y[1];
    return {2.0 * p.kappa * a - 0.5 * (p.q * p.q - p.eps),
            2.0 * eta * (p.q + p.kappa) + eta * eta + p.q * p.q - p.eps,
            -0.5 * p.sigma * p.sigma * eta};
}

}  // namespace

double lq_riccati_value(const LqParams& p, double horizon, double t, double x,
                        const EmpiricalMeasure& pi, double step_override) {
    if (pi.dim() != 1) throw UnsupportedBenchmark("lq oracle is scalar only");
    if (t > horizon) throw DomainError("t beyond horizon");
    std::array<double, 3> y{-0.5 * p.c, p.c, -p.g0};  // at s = T
    const double h_nominal = (step_override > 0.0) ? step_override : horizon / 2000.0;
    double s = horizon;
    while (s > t + 1e-15) {
        double h = std::min(h_nominal, s - t);
        // RK4 backward in time (step -h).
        auto f1 = lq_rhs(p, y);
        std::array<double, 3> y2, y3, y4;
        for (int k = 0; k < 3; ++k) y2[k] = y[k] - 0.5 * h * f1[k];
        auto f2 = lq_rhs(p, y2);
        for (int k = 0; k < 3; ++k) y3[k] = y[k] - 0.5 * h * f2[k];
        auto f3 = lq_rhs(p, y3);
        for (int k = 0; k < 3; ++k) y4[k] = y[k] - h * f3[k];
        auto f4 = lq_rhs(p, y4);
        for (int k = 0; k < 3; ++k)
            y[k] -= (h / 6.0) * (f1[k] + 2.0 * f2[k] + 2.0 * f3[k] + f4[k]);
        s -= h;
    }
    const double z = pi.mean1() - x;
    return y[0] * z * z - y[2];
}

// ---------------------------------------------------------------------------
// Registry.
// ---------------------------------------------------------------------------

namespace {

ActionSpace two_actions(double a0, double a1) {
    ActionSpace s;
    s.actions = {{a0}, {a1}};
    s.metric_scale = 1.0;
    return s;
}

BenchmarkProblem make_zero(double horizon) {
    BenchmarkProblem p;
    p.name = "zero";
    p.horizon = horizon;
    p.actions = two_actions(0.0, 1.0);
    p.coefficients = scalar_coefficients(
        [](double, double, const EmpiricalMeasure&, double) { return 0.0; },
        [](double, double, const EmpiricalMeasure&, double) { return 0.0; },
        [](double, double, const EmpiricalMeasure&, double) { return 0.0; },
        [](double, const EmpiricalMeasure&) { return 0.0; });
    p.coefficients.lipschitz_L = 1.0;
    p.analytic_value = [](double, double, const EmpiricalMeasure&) { return 0.0; };
    return p;
}

BenchmarkProblem make_drift_only(double horizon) {
    BenchmarkProblem p;
    p.name = "drift-only";
    p.horizon = horizon;
    p.actions = two_actions(-1.0, 1.0);
    p.coefficients = scalar_coefficients(
        [](double, double, const EmpiricalMeasure&, double a) { return a; },
        [](double, double, const EmpiricalMeasure&, double) { return 0.0; },
        [](double, double, const EmpiricalMeasure&, double) { return 0.0; },
        [](double x, const EmpiricalMeasure&) { return x; });
    p.coefficients.lipschitz_L = 1.0;
    p.coefficients.growth_Ch = 1.0;
    // b = a is monotone in the drift, so V = x + (T - t) with the +1 action.
    p.analytic_value = [T = p.horizon](double t, double x, const EmpiricalMeasure&) {
        return x + (T - t);
    };
    return p;
}

BenchmarkProblem make_mean_field_drift(double sigma, const char* name, double horizon) {
    const double kappa = 0.8;
    BenchmarkProblem p;
    p.name = name;
    p.horizon = horizon;
    p.actions = two_actions(0.0, 1.0);
    p.coefficients = scalar_coefficients(
        [kappa](double, double x, const EmpiricalMeasure& pi, double) {
            return kappa * (pi.mean1() - x);
        },
        [sigma](double, double, const EmpiricalMeasure&, double) { return sigma; },
        [](double, double, const EmpiricalMeasure&, double) { return 0.0; },
        [](double x, const EmpiricalMeasure&) { return x; });
    p.coefficients.lipschitz_L = 2.0 * kappa;
    return p;
}

BenchmarkProblem make_systemic_risk_lq(double horizon, const LqParams& lq) {
    BenchmarkProblem p;
    p.name = "systemic-risk-lq";
    p.horizon = horizon;
    p.lq = lq;
    p.actions = two_actions(-0.2, 0.05);
    p.coefficients = scalar_coefficients(
        [lq](double, double x, const EmpiricalMeasure& pi, double a) {
            return a + lq.kappa * (pi.mean1() - x);
        },
        [lq](double, double, const EmpiricalMeasure&, double) { return lq.sigma; },
        [lq](double, double x, const EmpiricalMeasure& pi, double a) {
            const double z = pi.mean1() - x;
            return -0.5 * a * a + lq.q * a * z - 0.5 * lq.eps * z * z;
        },
        [lq](double x, const EmpiricalMeasure& pi) {
            const double z = pi.mean1() - x;
            return -0.5 * lq.c * z * z + lq.g0;
        });
    p.coefficients.lipschitz_L = 2.0 * lq.kappa + 1.0;
    p.coefficients.growth_p = 2.0;
    p.coefficients.growth_Ch = 2.0 + lq.g0;
    p.analytic_value = [lq, T = p.horizon](double t, double x, const EmpiricalMeasure& pi) {
        return lq_riccati_value(lq, T, t, x, pi);
    };
    return p;
}

// Two actions whose effect on the drift is ramped up toward the horizon, so the
// optimal catalog control switches at mid-horizon and early mark choices are
// cheap to correct. Constant sigma and rewards linear in x keep catalog
// comparisons free of Monte Carlo noise under common random numbers.
BenchmarkProblem make_two_action_toy(double horizon) {
    const double kappa = 1.0, theta = 6.0, sigma = 0.25;
    const double f2 = 0.035, g1 = 0.5, g2 = 0.3, g0 = 2.0;
    BenchmarkProblem p;
    p.name = "two-action-toy";
    p.horizon = horizon;
    p.actions = two_actions(0.0, 1.0);
    const double T = p.horizon;
    p.coefficients = scalar_coefficients(
        [kappa, theta, T](double t, double x, const EmpiricalMeasure& pi, double a) {
            return kappa * (pi.mean1() - x) + std::exp(-theta * (T - t)) * a;
        },
        [sigma](double, double, const EmpiricalMeasure&, double) { return sigma; },
        [f2](double, double, const EmpiricalMeasure&, double a) { return -f2 * a * a; },
        [g1, g2, g0](double x, const EmpiricalMeasure& pi) {
            return g1 * x + g2 * pi.mean1() + g0;
        });
    p.coefficients.lipschitz_L = 2.0 * kappa;
    p.coefficients.growth_Ch = g0 + g1 + g2;
    return p;
}

}  // namespace

BenchmarkProblem make_registry_problem(const std::string& name, double horizon,
                                       const std::optional<LqParams>& lq) {
    if (name == "zero") return make_zero(horizon);
    if (name == "drift-only") return make_drift_only(horizon);
    if (name == "mean-field-drift") return make_mean_field_drift(0.0, "mean-field-drift", horizon);
    if (name == "mean-field-drift-noise")
        return make_mean_field_drift(0.3, "mean-field-drift-noise", horizon);
    if (name == "systemic-risk-lq") return make_systemic_risk_lq(horizon, lq.value_or(LqParams{}));
    if (name == "two-action-toy") return make_two_action_toy(horizon);
    throw UnsupportedBenchmark("no registered problem named '" + name + "'");
}

std::vector<BenchmarkProblem> registry() {
    std::vector<BenchmarkProblem> r;
    r.push_back(make_registry_problem("zero", 1.0));
    r.push_back(make_registry_problem("drift-only", 1.0));
    r.push_back(make_registry_problem("mean-field-drift", 1.0));
    r.push_back(make_registry_problem("mean-field-drift-noise", 1.0));
    r.push_back(make_registry_problem("systemic-risk-lq", 1.0));
    r.push_back(make_registry_problem("two-action-toy", 1.0));
    return r;
}

const BenchmarkProblem& find_problem(const std::string& name) {
    static const std::vector<BenchmarkProblem> problems = registry();
    for (const auto& p : problems)
        if (p.name == name) return p;
    throw UnsupportedBenchmark("no registered problem named '" + name + "'");
}

// ---------------------------------------------------------------------------
// Assumption audit.
// ---------------------------------------------------------------------------

AuditReport assumption_audit(const CoefficientSet& coeffs, const ActionSpace& space,
                             int n_probes, std::uint64_t seed) {
    if (n_probes < 1) throw DegenerateInput("n_probes must be >= 1");
    AuditReport rep;
    rep.n_probes = n_probes;
    const int n = coeffs.state_dim, d = coeffs.noise_dim;
    rng::Key root(seed);

    auto random_measure = [&](rng::Key k) {
        int atoms = 1 + static_cast<int>(rng::uniform01(k.sub(900)) * 4.0);
        std::vector<std::vector<double>> pts(atoms, std::vector<double>(n));
        for (int i = 0; i < atoms; ++i)
            for (int c = 0; c < n; ++c)
                pts[i][c] = 2.0 * rng::normal(k.sub(1000 + i * 64 + c));
        return EmpiricalMeasure::from_samples(pts);
    };

    std::vector<double> x(n), xp(n), bx(n), bxp(n), sx(n * d), sxp(n * d);
    for (int probe = 0; probe < n_probes; ++probe) {
        rng::Key k = root.sub(probe);
        double t = rng::uniform01(k.sub(1));
        // Alternate pure-x, pure-measure, and joint perturbations so each
        // Lipschitz direction is probed undiluted.
        const int mode = probe % 3;
        for (int c = 0; c < n; ++c) {
            x[c] = 2.0 * rng::normal(k.sub(2 + c));
            xp[c] = (mode == 1) ? x[c] : x[c] + 0.5 * rng::normal(k.sub(32 + c));
        }
        EmpiricalMeasure pi = random_measure(k.sub(64));
        EmpiricalMeasure pip = (mode == 0) ? pi : random_measure(k.sub(65));
        std::size_t a = static_cast<std::size_t>(rng::uniform01(k.sub(3)) * space.size());
        a = std::min(a, space.size() - 1);
        std::span<const double> av(space.action(a));

        double dx = 0.0;
        for (int c = 0; c < n; ++c) dx += (x[c] - xp[c]) * (x[c] - xp[c]);
        double denom = std::sqrt(dx) + wasserstein2(pi, pip);
        if (denom > 1e-12) {
            coeffs.drift(t, x, pi, av, bx);
            coeffs.drift(t, xp, pip, av, bxp);
            double db = 0.0;
            for (int c = 0; c < n; ++c) db += (bx[c] - bxp[c]) * (bx[c] - bxp[c]);
            rep.max_drift_ratio = std::max(rep.max_drift_ratio, std::sqrt(db) / denom);
            coeffs.diffusion(t, x, pi, av, sx);
            coeffs.diffusion(t, xp, pip, av, sxp);
            double ds = 0.0;
            for (int c = 0; c < n * d; ++c) ds += (sx[c] - sxp[c]) * (sx[c] - sxp[c]);
            rep.max_diffusion_ratio = std::max(rep.max_diffusion_ratio, std::sqrt(ds) / denom);
        }

        double xnorm = 0.0;
        for (int c = 0; c < n; ++c) xnorm += x[c] * x[c];
        xnorm = std::sqrt(xnorm);
        double h = coeffs.growth_Ch * (1.0 + moment_norm(pi) * moment_norm(pi));
        double bound = h * (1.0 + std::pow(xnorm, coeffs.growth_p));
        double fg = std::abs(coeffs.running_reward(t, x, pi, av)) +
                    std::abs(coeffs.terminal_reward(x, pi));
        if (bound > 1e-12) rep.max_growth_ratio = std::max(rep.max_growth_ratio, fg / bound);
    }
    rep.lipschitz_ok = rep.max_drift_ratio <= coeffs.lipschitz_L + 1e-9 &&
                       rep.max_diffusion_ratio <= coeffs.lipschitz_L + 1e-9;
    rep.growth_ok = rep.max_growth_ratio <= 1.0 + 1e-9;
    return rep;
}

}  // namespace mkv
