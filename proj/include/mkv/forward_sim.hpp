#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "mkv/measures.hpp"
#include "mkv/problem.hpp"

namespace mkv {

struct TimeGrid {
    double t_start = 0.0;
    double t_end = 1.0;
    int n_steps = 1;

    double dt() const { return (t_end - t_start) / n_steps; }
    double node(int i) const {
        return (i == n_steps) ? t_end : t_start + i * dt();
    }
    void validate() const {
        if (!(t_start < t_end)) throw GridError("t_start must precede t_end");
        if (n_steps < 1) throw GridError("n_steps must be >= 1");
    }
    // Index i with node(i) == s (within tolerance), or GridError.
    int node_index(double s) const;
    // Interval containing s, clamped to [0, n_steps-1]; t_end maps to the last.
    int interval_of(double s) const {
        int i = static_cast<int>((s - t_start) / dt());
        return std::min(std::max(i, 0), n_steps - 1);
    }
};

// Accumulated Brownian increments (first noise component) per control-grid
// interval; the decision state of the history quantizer.
struct BrownianHistory {
    std::vector<double> acc;
};

// Piecewise-constant open-loop control: on grid interval i the action is
// table[i][cell], where the cell quantizes the sign pattern of the most recent
// ceil(log2 L) completed control-interval increments (cell 0 when L == 1).
struct StepControl {
    TimeGrid grid;  // over [0, T]
    int cells = 1;  // L
    std::vector<std::vector<int>> table;

    void validate(const ActionSpace& space) const;
    int interval_of(double s) const;  // s == T maps to the last interval
};

int history_cell(int interval, int cells, const BrownianHistory& h);
int evaluate_control(const StepControl& ctrl, double s, const BrownianHistory& h);

// Action selector seen by the simulator. Implementations: a single StepControl,
// the Poisson-randomized control, its shifted variant, per-atom product controls.
class ControlPath {
public:
    virtual ~ControlPath() = default;
    virtual int action_index(double s, std::size_t particle, const BrownianHistory& h) const = 0;
    // Control-grid geometry used to maintain particle histories.
    virtual const TimeGrid& control_grid() const = 0;
};

class StepControlPath final : public ControlPath {
public:
    explicit StepControlPath(const StepControl& c) : ctrl_(&c) {}
    int action_index(double s, std::size_t, const BrownianHistory& h) const override {
        return evaluate_control(*ctrl_, s, h);
    }
    const TimeGrid& control_grid() const override { return ctrl_->grid; }

private:
    const StepControl* ctrl_;
};

// Initial-condition sampler for the xi cloud; deterministic given (seed, index).
class XiSampler {
public:
    static XiSampler atoms(EmpiricalMeasure measure);  // stratified allocation by weight
    static XiSampler gaussian(std::vector<double> mean, std::vector<double> stddev);
    static XiSampler constant(std::vector<double> point);

    std::vector<double> draw(std::size_t particle, std::size_t total, std::uint64_t seed) const;
    // Fills a flat (total x dim) array for all particles at once; the atom
    // allocation is computed a single time.
    void fill(std::vector<double>& out, std::size_t total, std::uint64_t seed) const;
    int dim() const;
    bool is_atomic() const { return kind_ == Kind::Atoms; }
    const EmpiricalMeasure& measure() const;

private:
    enum class Kind { Atoms, Gaussian, Constant };
    Kind kind_ = Kind::Constant;
    std::optional<EmpiricalMeasure> measure_;
    std::vector<double> mean_, stddev_, point_;
};

struct SimParams {
    TimeGrid grid;         // over [t, T]
    std::size_t n_xi = 2;  // N
    std::size_t n_x = 1;   // M; when n_x == n_xi the pairs share Brownian increments
    std::uint64_t seed = 0;
};

struct CloudState {
    int step = 0;  // global index into the grid
    std::vector<double> xi;  // n_xi * state_dim
    std::vector<double> x;   // n_x * state_dim
    std::vector<BrownianHistory> xi_hist, x_hist;
};

struct ParticleCloud {
    int step = 0;
    double time = 0.0;
    CloudState state;
};

CloudState init_cloud(const CoefficientSet& coeffs, const XiSampler& xi, std::span<const double> x0,
                      const SimParams& params, int control_intervals);

// One explicit Euler-Maruyama step with the interaction measure frozen at the
// left node. Throws NumericalBlowup when a state leaves the finite range.
// law, when given, must be the empirical law of cloud.xi at the current node;
// noise_table, when given, holds the pre-drawn increments for the paired
// clouds, laid out as [step][particle][component] over the full grid.
void advance_cloud(const CoefficientSet& coeffs, const ActionSpace& actions,
                   const ControlPath& path, const SimParams& params, CloudState& cloud,
                   const EmpiricalMeasure* law = nullptr, const double* noise_table = nullptr);

// Pre-draws the increments used by advance_cloud for paired clouds, identical
// to the per-call draws (layout [step][particle][component]).
std::vector<double> draw_noise_table(const SimParams& params, int noise_dim);

// Per-node visitor: (step, time, cloud, empirical law of the xi cloud).
using NodeVisitor =
    std::function<void(int, double, const CloudState&, const EmpiricalMeasure&)>;

void run_simulation(const CoefficientSet& coeffs, const ActionSpace& actions,
                    const ControlPath& path, const SimParams& params, const XiSampler& xi,
                    std::span<const double> x0, const NodeVisitor& visit);

std::vector<ParticleCloud> simulate_coupled(const CoefficientSet& coeffs,
                                            const ActionSpace& actions, const ControlPath& path,
                                            const SimParams& params, const XiSampler& xi,
                                            std::span<const double> x0);

struct ValueEstimate {
    double mean = 0.0;
    double std_error = 0.0;
};

// Monte Carlo estimate of the gain: trapezoid quadrature of f along the grid
// plus terminal g, averaged over the x cloud. std_error is conditional on the
// shared xi cloud.
ValueEstimate gain_estimate(const CoefficientSet& coeffs, const ActionSpace& actions,
                            const ControlPath& path, const SimParams& params, const XiSampler& xi,
                            std::span<const double> x0);

struct FlowReport {
    double max_diff_xi = 0.0;
    double max_diff_x = 0.0;
};

// Restart the simulation at grid node s from the stored cloud, replaying the
// identical increments, and report the sup-norm pathwise discrepancy on [s, T].
FlowReport flow_check(const CoefficientSet& coeffs, const ActionSpace& actions,
                      const ControlPath& path, const SimParams& params, const XiSampler& xi,
                      std::span<const double> x0, double s);

void dump_trajectory_csv(const std::vector<ParticleCloud>& traj, int state_dim,
                         const std::string& path, std::uint64_t seed,
                         const std::string& config_hash);

}  // namespace mkv
