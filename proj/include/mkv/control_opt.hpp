#pragma once

#include <cstdint>
#include <vector>

#include "mkv/forward_sim.hpp"
#include "mkv/problem.hpp"

namespace mkv {

struct ControlCatalog {
    std::vector<StepControl> controls;
    int intervals = 1;       // k
    int cells = 1;           // L
    std::size_t action_count = 0;

    std::size_t size() const { return controls.size(); }
    const TimeGrid& grid() const { return controls.front().grid; }
};

// Full enumeration of the M^(kL) step-control tables on the uniform k-interval
// grid over [0, horizon]. No silent sampling: over the cap is an error.
ControlCatalog enumerate_step_controls(const ActionSpace& space, double horizon, int k, int L,
                                       std::size_t cap = 4096);

struct ControlValueRow {
    std::size_t control_id = 0;
    double value = 0.0;
    double std_error = 0.0;
};

struct DirectValue {
    double value = 0.0;
    std::size_t argmax = 0;
    std::vector<ControlValueRow> table;
};

// V(t, x, pi) by exhaustive search over the catalog under common random
// numbers (increments keyed by (seed, particle, step) only, so every control
// sees identical noise). Ties break to the lowest catalog index.
DirectValue value_direct(const CoefficientSet& coeffs, const ActionSpace& actions,
                         const ControlCatalog& catalog, const SimParams& params,
                         const XiSampler& xi, std::span<const double> x0);

struct Atom1d {
    double x = 0.0;
    double p = 0.0;
};

// Disintegrated value for finitely-valued xi: sum_k p_k V(t, x_k, pi) with
// pi the law of xi, each atom optimized independently.
double value_mkv(const CoefficientSet& coeffs, const ActionSpace& actions,
                 const ControlCatalog& catalog, const SimParams& params,
                 const std::vector<Atom1d>& atoms);

struct JointMkvValue {
    double value = 0.0;
    std::vector<std::size_t> argmax;  // one control id per atom
};

// Joint optimization over the product catalog: one control per atom, with each
// atom block evolving under its own conditional empirical law (the product
// decomposition alpha = sum_k alpha_k 1_{E_k} decouples the blocks, each a
// self-interacting cloud started from its atom). The cross-check against the
// per-atom optima is the disintegration property.
JointMkvValue value_mkv_joint(const CoefficientSet& coeffs, const ActionSpace& actions,
                              const ControlCatalog& catalog, const SimParams& params,
                              const std::vector<Atom1d>& atoms, std::size_t cap = 4096);

// Per-atom gain of the disintegrated problem: the atom's own conditional cloud
// (all particles at x_k) under one catalog control, gain over the cloud itself.
double mkv_atom_gain(const CoefficientSet& coeffs, const ActionSpace& actions,
                     const StepControl& control, const SimParams& params, double x_atom);

// Krylov metric rho~(alpha, beta) = E[ integral of rho(alpha_t, beta_t) dt ].
// Deterministic controls (L == 1) integrate exactly; otherwise Monte Carlo over
// Brownian histories.
double krylov_distance(const ActionSpace& space, const StepControl& alpha,
                       const StepControl& beta, int n_paths, std::uint64_t seed);

struct StabilityRow {
    double krylov = 0.0;   // rho~ distance to the base control
    double delta_j = 0.0;  // |J(perturbed) - J(base)|
    double width = 0.0;    // flipped sub-interval width
};

// J along a sequence of controls converging to the base control in rho~:
// flip the final sub-interval of halving width to a different action.
std::vector<StabilityRow> stability_probe(const CoefficientSet& coeffs,
                                          const ActionSpace& actions, const StepControl& base,
                                          const SimParams& params, const XiSampler& xi,
                                          std::span<const double> x0, int levels);

}  // namespace mkv
