#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "mkv/control_opt.hpp"
#include "mkv/forward_sim.hpp"

namespace mkv {

// Finite-support mark measure lambda on catalog step controls.
struct MarkIntensity {
    std::vector<std::size_t> marks;  // catalog indices, distinct
    std::vector<double> rates;       // strictly positive, same length

    double total() const;
    void validate(std::size_t catalog_size) const;
    static MarkIntensity uniform(std::size_t catalog_size, double rate_each);
};

// Realized marked point process (T_n, A_n); A_0 is the designated catalog
// entry abar unless the shifted variant replaces the pre-t segment.
struct PoissonPath {
    std::vector<std::pair<double, std::size_t>> jumps;  // (time, position in lambda.marks)
    bool truncated = false;
    std::size_t abar = 0;  // catalog index of A_0
};

PoissonPath sample_poisson_path(const MarkIntensity& lambda, double horizon, int k_max,
                                std::uint64_t seed, std::size_t abar = 0);

// I(s): the active mark's evaluation at s; the mark switches at jump times,
// right-continuously on [T_n, T_{n+1}).
int randomized_action(const PoissonPath& path, const MarkIntensity& lambda,
                      const ControlCatalog& catalog, double s, const BrownianHistory& h);

// Shifted variant I^{t,a0}: constant action a0 on intervals whose T_n < t,
// mark evaluation from the first jump at or after t.
int shifted_action(const PoissonPath& path, const MarkIntensity& lambda,
                   const ControlCatalog& catalog, double t, std::size_t a0_action, double s,
                   const BrownianHistory& h);

class RandomizedControlPath final : public ControlPath {
public:
    RandomizedControlPath(const PoissonPath& path, const MarkIntensity& lambda,
                          const ControlCatalog& catalog)
        : path_(&path), lambda_(&lambda), catalog_(&catalog) {}
    int action_index(double s, std::size_t, const BrownianHistory& h) const override {
        return randomized_action(*path_, *lambda_, *catalog_, s, h);
    }
    const TimeGrid& control_grid() const override { return catalog_->grid(); }

private:
    const PoissonPath* path_;
    const MarkIntensity* lambda_;
    const ControlCatalog* catalog_;
};

class ShiftedControlPath final : public ControlPath {
public:
    ShiftedControlPath(const PoissonPath& path, const MarkIntensity& lambda,
                       const ControlCatalog& catalog, double t, std::size_t a0_action)
        : path_(&path), lambda_(&lambda), catalog_(&catalog), t_(t), a0_(a0_action) {}
    int action_index(double s, std::size_t, const BrownianHistory& h) const override {
        return shifted_action(*path_, *lambda_, *catalog_, t_, a0_, s, h);
    }
    const TimeGrid& control_grid() const override { return catalog_->grid(); }

private:
    const PoissonPath* path_;
    const MarkIntensity* lambda_;
    const ControlCatalog* catalog_;
    double t_;
    std::size_t a0_;
};

// Bounded predictable jump-intensity multiplier, piecewise constant on the
// lattice grid. The table sees only jumps effective strictly before the
// interval's left node; nu == 1 outside the grid.
struct IntensityControl {
    double lo = 1.0;
    double hi = 1.0;
    TimeGrid grid{0.0, 1.0, 1};
    // (interval, jumps effective at nodes <= interval, mark position) -> multiplier
    std::function<double(int, std::span<const std::pair<int, std::size_t>>, std::size_t)> value;

    static IntensityControl constant(double c, const TimeGrid& grid);
    double at(int interval, std::span<const std::pair<int, std::size_t>> history,
              std::size_t mark_pos) const;
};

// Doleans exponential kappa^nu_t: exp(sum of ln nu at jumps - integral of
// (nu - 1) dlambda ds), evaluated exactly for the piecewise-constant table.
double girsanov_weight(const PoissonPath& path, const IntensityControl& nu,
                       const MarkIntensity& lambda, double t_end);

struct RandomizedGain {
    ValueEstimate estimate;
    double truncated_fraction = 0.0;
    bool truncation_warning = false;  // raised when > 1% of paths are truncated
};

// Outer Monte Carlo over Poisson paths; for each path the coupled system runs
// under I(., path) and the gain is weighted by kappa^nu_T.
RandomizedGain randomized_gain(const CoefficientSet& coeffs, const ActionSpace& actions,
                               const ControlCatalog& catalog, const MarkIntensity& lambda,
                               const IntensityControl& nu, int k_max, int n_outer,
                               const SimParams& inner, const XiSampler& xi,
                               std::span<const double> x0, std::uint64_t path_seed,
                               std::size_t abar = 0);

struct RandomizedValueConfig {
    SimParams sim;  // grid over [t, T]; n_xi = n_x = M_inner
    int k_max = 3;
    double nu_lo = 0.1;
    double nu_hi = 50.0;
    std::size_t node_cap = 2'000'000;
    bool shifted = false;       // root control is the constant action a0
    std::size_t abar = 0;       // catalog entry of A_0 when not shifted
    std::size_t a0_action = 0;  // action index when shifted
    std::size_t table_cap = 100'000;
};

struct NuTableEntry {
    std::string history;  // "node:mark|node:mark|..." of effective jumps
    int interval = 0;
    std::size_t mark = 0;  // catalog index
    double nu = 1.0;
};

struct RandomizedValue {
    double value = 0.0;
    std::vector<NuTableEntry> nu_table;
    std::size_t tree_nodes = 0;
    bool table_truncated = false;
};

// V^R by backward induction on the jump-history lattice; the per-node objective
// is affine in nu, so the optimum is bang-bang at the bounds.
RandomizedValue value_randomized(const CoefficientSet& coeffs, const ActionSpace& actions,
                                 const ControlCatalog& catalog, const MarkIntensity& lambda,
                                 const RandomizedValueConfig& config, const XiSampler& xi,
                                 std::span<const double> x0);

// Lattice-snapped jump history (node index, mark position) for table lookups;
// a jump in (node_{i-1}, node_i] becomes effective at node i.
std::vector<std::pair<int, std::size_t>> snap_jumps_to_grid(const PoissonPath& path,
                                                            const TimeGrid& grid);

}  // namespace mkv
