#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mkv/errors.hpp"
#include "mkv/measures.hpp"

namespace mkv {

// Finite action set in R^q with a bounded metric rho < 1.
struct ActionSpace {
    std::vector<std::vector<double>> actions;
    double metric_scale = 1.0;

    std::size_t size() const { return actions.size(); }
    std::size_t action_dim() const { return actions.empty() ? 0 : actions.front().size(); }
    const std::vector<double>& action(std::size_t i) const { return actions[i]; }
    double action1(std::size_t i) const { return actions[i][0]; }

    // rho(a, a') = min(1 - 1e-9, metric_scale * |a - a'|)
    double rho(std::size_t i, std::size_t j) const;
    void validate() const;
};

// Coefficient evaluations are pure functions of their arguments; the contract
// requires safe concurrent evaluation with no shared mutable state.
struct CoefficientSet {
    int state_dim = 1;
    int noise_dim = 1;

    // drift: out has state_dim entries
    std::function<void(double t, std::span<const double> x, const EmpiricalMeasure& pi,
                       std::span<const double> a, std::span<double> out)>
        drift;
    // diffusion: out has state_dim * noise_dim entries, row-major
    std::function<void(double t, std::span<const double> x, const EmpiricalMeasure& pi,
                       std::span<const double> a, std::span<double> out)>
        diffusion;
    std::function<double(double t, std::span<const double> x, const EmpiricalMeasure& pi,
                         std::span<const double> a)>
        running_reward;
    std::function<double(std::span<const double> x, const EmpiricalMeasure& pi)> terminal_reward;

    double lipschitz_L = 1.0;
    double growth_p = 1.0;
    // h(r) = growth_Ch * (1 + r^2), the concrete bound used by the audit.
    double growth_Ch = 1.0;
};

// Convenience constructor for scalar problems (state_dim = noise_dim = 1).
CoefficientSet scalar_coefficients(
    std::function<double(double t, double x, const EmpiricalMeasure&, double a)> b,
    std::function<double(double t, double x, const EmpiricalMeasure&, double a)> sigma,
    std::function<double(double t, double x, const EmpiricalMeasure&, double a)> f,
    std::function<double(double x, const EmpiricalMeasure&)> g);

// Scalar LQ dynamics dX = (a + kappa (mbar - X)) ds + sigma dB with rewards
//   f = -a^2/2 + q a (mbar - x) - (eps/2)(mbar - x)^2
//   g = -(c/2)(mbar - x)^2 + g0.
struct LqParams {
    double kappa = 0.5;
    double q = 0.4;
    double eps = 0.25;
    double c = 0.4;
    double sigma = 0.4;
    double g0 = 1.5;
};

// Value of the LQ benchmark via the Riccati system, integrated backward with a
// fixed-step RK4 at step T/2000 (step_override > 0 replaces T/2000 for the
// fine-grid oracle used in tests).
double lq_riccati_value(const LqParams& params, double horizon, double t, double x,
                        const EmpiricalMeasure& pi, double step_override = 0.0);

struct BenchmarkProblem {
    std::string name;
    CoefficientSet coefficients;
    ActionSpace actions;
    double horizon = 1.0;
    std::optional<LqParams> lq;
    // analytic oracle (t, x, pi) -> value, when available
    std::function<double(double, double, const EmpiricalMeasure&)> analytic_value;
};

// Built-in benchmark set: zero, drift-only, mean-field-drift, mean-field-drift-noise,
// systemic-risk-lq, two-action-toy.
std::vector<BenchmarkProblem> registry();
const BenchmarkProblem& find_problem(const std::string& name);

// Registry problem rebuilt with a custom horizon and, for the LQ benchmark,
// custom parameters.
BenchmarkProblem make_registry_problem(const std::string& name, double horizon,
                                       const std::optional<LqParams>& lq = std::nullopt);

struct AuditReport {
    double max_drift_ratio = 0.0;      // |b(x,pi)-b(x',pi')| / (|x-x'| + W2)
    double max_diffusion_ratio = 0.0;  // same for sigma
    double max_growth_ratio = 0.0;     // (|f|+|g|) / (h(||pi||)(1+|x|^p))
    bool lipschitz_ok = true;
    bool growth_ok = true;
    int n_probes = 0;
};

// Numerical spot-check of the declared Lipschitz/growth constants over random
// probe pairs. Violations are reported, never thrown.
AuditReport assumption_audit(const CoefficientSet& coeffs, const ActionSpace& space,
                             int n_probes, std::uint64_t seed);

}  // namespace mkv
