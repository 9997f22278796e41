#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "mkv/control_opt.hpp"
#include "mkv/forward_sim.hpp"
#include "mkv/randomized.hpp"

namespace mkv::bsde {

// Control active before the first jump: a catalog mark (abar) or, for the
// shifted randomization, a constant action a0.
struct RootControl {
    bool is_mark = true;
    std::size_t index = 0;  // catalog entry or action index
};

// Timed jump-history tree over the simulation grid on [t, T]. Nodes at level i
// are the distinct jump histories realizable by node time t_i with at most
// k_max jumps; a jump drawn in interval [t_i, t_{i+1}) becomes effective at
// t_{i+1}. Drivers E[f] and terminal values E[g] are inner Monte Carlo
// averages over a coupled particle cloud advanced along each root path; the
// increments are keyed by (seed, particle, step), so all paths share one
// realization of the driving noise.
class JumpLattice {
public:
    struct Node {
        std::int32_t parent = -1;
        std::int32_t nojump_child = -1;  // jump children follow contiguously when arity > 0
        std::int16_t depth = 0;
        std::int32_t mark_pos = -1;  // position in lambda.marks applied at this node
    };

    // Terminal override: value at a leaf given its final cloud and law
    // (the default is the mean terminal reward over the x cloud).
    using TerminalFn = std::function<double(const CloudState&, const EmpiricalMeasure&)>;

    JumpLattice(const CoefficientSet& coeffs, const ActionSpace& actions,
                const ControlCatalog& catalog, const MarkIntensity& lambda, RootControl root,
                const SimParams& sim, int k_max, std::size_t node_cap, const XiSampler& xi,
                std::span<const double> x0, TerminalFn terminal_override = {});

    int levels() const { return static_cast<int>(levels_.size()); }
    double dt() const { return sim_.grid.dt(); }
    const std::vector<Node>& level_nodes(int level) const { return levels_[level].nodes; }
    double driver(int level, std::size_t node) const { return levels_[level].driver[node]; }
    double terminal(std::size_t node) const { return levels_.back().terminal[node]; }
    std::size_t node_count() const { return node_count_; }
    std::size_t marks() const { return n_marks_; }
    // Number of jump children (0 at depth k_max, otherwise marks()).
    std::size_t jump_arity(int level, std::size_t node) const;
    std::size_t jump_child(int level, std::size_t node, std::size_t mark_pos) const;
    // "node:mark|node:mark|..." along the root path (effective jumps only).
    std::string history_signature(int level, std::size_t node) const;

    const SimParams& sim() const { return sim_; }
    int k_max() const { return k_max_; }

private:
    struct Level {
        std::vector<Node> nodes;
        std::vector<double> driver;
        std::vector<double> terminal;  // final level only
    };
    void build(const CoefficientSet& coeffs, const ActionSpace& actions,
               const ControlCatalog& catalog, const XiSampler& xi, std::span<const double> x0,
               const TerminalFn& terminal_override);

    std::vector<Level> levels_;
    const ControlCatalog* catalog_ = nullptr;
    const MarkIntensity* lambda_ = nullptr;
    RootControl root_;
    SimParams sim_;
    int k_max_ = 0;
    std::size_t node_cap_ = 0;
    std::size_t n_marks_ = 0;
    std::size_t node_count_ = 0;
};

// Explicit backward recursion for the penalized equation:
//   Y_i = Y_{i+1}(no jump) + w_i F_i + n dt sum_a lambda_a (U_{i+1}(a))_+
// with U_{i+1}(a) = Y_{i+1}(jump to a) - Y_{i+1}(no jump) and trapezoid
// weights w_i. K accumulates the penalty along each path.
struct PenalizedSolution {
    double n = 0.0;
    double dt = 0.0;
    double root = 0.0;
    std::vector<std::vector<double>> Y;  // per level
    std::vector<std::vector<double>> K;  // per level, K = 0 at the root
    double max_U_plus = 0.0;             // over all edges
};

PenalizedSolution solve_penalized(const JumpLattice& lattice, const MarkIntensity& lambda,
                                  double n);

struct BangBangResult {
    double root = 0.0;
    std::vector<std::vector<double>> Y;
    // per level: node-major, mark-minor flags (only when record_policy)
    std::vector<std::vector<char>> take_hi;
};

// Backward induction optimizing the intensity in [lo, hi]; the objective is
// affine in each nu so the optimum sits at a bound.
BangBangResult bang_bang_dp(const JumpLattice& lattice, const MarkIntensity& lambda, double lo,
                            double hi, bool record_policy = false);

struct DualCheck {
    double penalized_root = 0.0;
    double dual_root = 0.0;
    double abs_discrepancy = 0.0;
    double rel_discrepancy = 0.0;  // abs / (1 + |penalized_root|)
};

// Independent root value via the bang-bang DP over nu in {eps, n} on the same
// lattice; the two recursions must agree up to the eps contribution.
DualCheck dual_check(const JumpLattice& lattice, const MarkIntensity& lambda, double n,
                     double eps = 1e-6);

struct MinimalSolution {
    double y_root = 0.0;
    std::vector<std::pair<double, double>> trace;  // (n, Y_root)
    bool converged = false;
    double max_U_plus_final = 0.0;
};

// Monotone limit over the penalty schedule; SchemeInconsistency if monotonicity
// fails beyond 1e-9 (a discretization bug, not a data error).
MinimalSolution minimal_solution(const JumpLattice& lattice, const MarkIntensity& lambda,
                                 const std::vector<double>& schedule, double tolerance);

std::vector<double> default_penalty_schedule();  // 1, 2, 4, ..., 256

struct FeynmanKacReport {
    double y_root = 0.0;
    double v_direct = 0.0;
    double abs_diff = 0.0;
    bool converged = false;
    double max_U_plus_final = 0.0;
};

FeynmanKacReport feynman_kac_check(const CoefficientSet& coeffs, const ActionSpace& actions,
                                   const ControlCatalog& catalog, const MarkIntensity& lambda,
                                   RootControl root, const SimParams& sim, int k_max,
                                   std::size_t node_cap, const XiSampler& xi,
                                   std::span<const double> x0,
                                   const std::vector<double>& schedule, double tolerance);

struct DppConfig {
    double nu_lo = 0.1;
    double nu_hi = 50.0;
    int k_max = 3;
    std::size_t node_cap = 2'000'000;
    std::size_t inner_particles = 128;  // per inner value_direct call
    std::size_t subsample = 8;          // x particles averaged per leaf
    RootControl root;
};

struct DppReport {
    double lhs = 0.0;  // value_direct(t, x, pi)
    double rhs = 0.0;  // sup_nu E^nu[ int_t^s E f + E V(s, X_s, P_s) ]
    double residual = 0.0;
};

// Randomized dynamic programming check at an intermediate grid time s.
DppReport dpp_check(const CoefficientSet& coeffs, const ActionSpace& actions,
                    const ControlCatalog& catalog, const MarkIntensity& lambda,
                    const SimParams& sim, double s, const XiSampler& xi,
                    std::span<const double> x0, const DppConfig& config);

// CSV trace (n, node_id, time, Y, K, max_U_plus) for a penalized solution.
std::string penalized_trace_csv(const PenalizedSolution& sol, const JumpLattice& lattice);

}  // namespace mkv::bsde
