#include "mkv/forward_sim.hpp"

#include <cmath>
#include <fstream>

#include "mkv/rng.hpp"

namespace mkv {

namespace {

// Stream tags; the xi cloud and a paired x cloud share kTagXi increments.
constexpr std::uint64_t kTagXi = 101;
constexpr std::uint64_t kTagX = 202;
constexpr std::uint64_t kTagInit = 303;

double noise_increment(std::uint64_t seed, std::uint64_t tag, std::size_t particle, int step,
                       int component, double sqrt_dt) {
    rng::Key k = rng::Key(seed).sub(tag).sub(particle).sub(static_cast<std::uint64_t>(step))
                     .sub(static_cast<std::uint64_t>(component));
    return rng::normal(k) * sqrt_dt;
}

}  // namespace

int TimeGrid::node_index(double s) const {
    validate();
    double pos = (s - t_start) / dt();
    int i = static_cast<int>(std::lround(pos));
    if (i < 0 || i > n_steps || std::abs(node(i) - s) > 1e-9 * (t_end - t_start))
        throw GridError("time " + std::to_string(s) + " is not a grid node");
    return i;
}

void StepControl::validate(const ActionSpace& space) const {
    grid.validate();
    if (cells < 1) throw GridError("cells must be >= 1");
    if (static_cast<int>(table.size()) != grid.n_steps)
        throw GridError("table must cover every grid interval");
    for (const auto& row : table) {
        if (static_cast<int>(row.size()) != cells)
            throw GridError("table row must cover cells 0..L-1");
        for (int a : row)
            if (a < 0 || a >= static_cast<int>(space.size()))
                throw DegenerateInput("action index out of range");
    }
}

int StepControl::interval_of(double s) const {
    if (s < grid.t_start - 1e-12 || s > grid.t_end + 1e-12)
        throw DomainError("control evaluated outside [0, T]");
    return grid.interval_of(s);
}

int history_cell(int interval, int cells, const BrownianHistory& h) {
    if (cells <= 1) return 0;
    int bits = 0;
    while ((1 << bits) < cells) ++bits;
    int raw = 0;
    for (int j = 0; j < bits; ++j) {
        int idx = interval - 1 - j;
        int bit = (idx >= 0 && idx < static_cast<int>(h.acc.size()) && h.acc[idx] >= 0.0) ? 1 : 0;
        raw = raw * 2 + bit;
    }
    return raw % cells;
}

int evaluate_control(const StepControl& ctrl, double s, const BrownianHistory& h) {
    int i = ctrl.interval_of(s);
    return ctrl.table[i][history_cell(i, ctrl.cells, h)];
}

// ---------------------------------------------------------------------------
// XiSampler
// ---------------------------------------------------------------------------

XiSampler XiSampler::atoms(EmpiricalMeasure measure) {
    XiSampler s;
    s.kind_ = Kind::Atoms;
    s.measure_ = std::move(measure);
    return s;
}

XiSampler XiSampler::gaussian(std::vector<double> mean, std::vector<double> stddev) {
    if (mean.size() != stddev.size()) throw DimensionError("gaussian sampler mean/std mismatch");
    XiSampler s;
    s.kind_ = Kind::Gaussian;
    s.mean_ = std::move(mean);
    s.stddev_ = std::move(stddev);
    return s;
}

XiSampler XiSampler::constant(std::vector<double> point) {
    XiSampler s;
    s.kind_ = Kind::Constant;
    s.point_ = std::move(point);
    return s;
}

int XiSampler::dim() const {
    switch (kind_) {
        case Kind::Atoms: return static_cast<int>(measure_->dim());
        case Kind::Gaussian: return static_cast<int>(mean_.size());
        case Kind::Constant: return static_cast<int>(point_.size());
    }
    return 0;
}

const EmpiricalMeasure& XiSampler::measure() const {
    if (kind_ != Kind::Atoms) throw UnsupportedInput("sampler has no atomic representation");
    return *measure_;
}

void XiSampler::fill(std::vector<double>& out, std::size_t total, std::uint64_t seed) const {
    const std::size_t n = static_cast<std::size_t>(dim());
    out.resize(total * n);
    switch (kind_) {
        case Kind::Constant: {
            for (std::size_t p = 0; p < total; ++p)
                std::copy(point_.begin(), point_.end(), out.begin() + p * n);
            return;
        }
        case Kind::Gaussian: {
            for (std::size_t p = 0; p < total; ++p)
                for (std::size_t c = 0; c < n; ++c) {
                    rng::Key k = rng::Key(seed).sub(kTagInit).sub(p).sub(c);
                    out[p * n + c] = mean_[c] + stddev_[c] * rng::normal(k);
                }
            return;
        }
        case Kind::Atoms: {
            // Systematic inversion of the weight CDF: particle p takes the atom
            // covering (p + 1/2) / total. Counts match the weights to +-1 and
            // subsampled clouds stay spread across the whole support.
            const auto& m = *measure_;
            std::size_t k = 0;
            double cum = m.weight(0);
            for (std::size_t p = 0; p < total; ++p) {
                double u = (static_cast<double>(p) + 0.5) / static_cast<double>(total);
                while (u > cum && k + 1 < m.size()) cum += m.weight(++k);
                std::copy(m.point(k).begin(), m.point(k).end(), out.begin() + p * n);
            }
            return;
        }
    }
    throw UnsupportedInput("unknown sampler kind");
}

std::vector<double> XiSampler::draw(std::size_t particle, std::size_t total,
                                    std::uint64_t seed) const {
    switch (kind_) {
        case Kind::Constant:
            return point_;
        case Kind::Gaussian: {
            std::vector<double> v(mean_.size());
            for (std::size_t c = 0; c < v.size(); ++c) {
                rng::Key k = rng::Key(seed).sub(kTagInit).sub(particle).sub(c);
                v[c] = mean_[c] + stddev_[c] * rng::normal(k);
            }
            return v;
        }
        case Kind::Atoms: {
            // Same systematic CDF inversion as fill().
            const auto& m = *measure_;
            double u = (static_cast<double>(particle) + 0.5) / static_cast<double>(total);
            std::size_t k = 0;
            double cum = m.weight(0);
            while (u > cum && k + 1 < m.size()) cum += m.weight(++k);
            return {m.point(k).begin(), m.point(k).end()};
        }
    }
    throw UnsupportedInput("unknown sampler kind");
}

// ---------------------------------------------------------------------------
// Euler-Maruyama engine
// ---------------------------------------------------------------------------

CloudState init_cloud(const CoefficientSet& coeffs, const XiSampler& xi, std::span<const double> x0,
                      const SimParams& params, int control_intervals) {
    if (params.n_xi < 1) throw DegenerateInput("n_xi must be >= 1");
    if (xi.dim() != coeffs.state_dim) throw DimensionError("sampler/state dimension mismatch");
    if (!x0.empty() && static_cast<int>(x0.size()) != coeffs.state_dim)
        throw DimensionError("x0 dimension mismatch");
    CloudState c;
    c.step = 0;
    const int n = coeffs.state_dim;
    xi.fill(c.xi, params.n_xi, params.seed);
    c.x.resize(params.n_x * n);
    for (std::size_t p = 0; p < params.n_x; ++p)
        std::copy(x0.begin(), x0.end(), c.x.begin() + p * n);
    c.xi_hist.assign(params.n_xi, BrownianHistory{std::vector<double>(control_intervals, 0.0)});
    c.x_hist.assign(params.n_x, BrownianHistory{std::vector<double>(control_intervals, 0.0)});
    return c;
}

std::vector<double> draw_noise_table(const SimParams& params, int noise_dim) {
    std::vector<double> table(static_cast<std::size_t>(params.grid.n_steps) * params.n_xi *
                              noise_dim);
    const double sqdt = std::sqrt(params.grid.dt());
    std::size_t k = 0;
    for (int step = 0; step < params.grid.n_steps; ++step)
        for (std::size_t p = 0; p < params.n_xi; ++p)
            for (int c = 0; c < noise_dim; ++c)
                table[k++] = noise_increment(params.seed, kTagXi, p, step, c, sqdt);
    return table;
}

void advance_cloud(const CoefficientSet& coeffs, const ActionSpace& actions,
                   const ControlPath& path, const SimParams& params, CloudState& cloud,
                   const EmpiricalMeasure* law_in, const double* noise_table) {
    const int n = coeffs.state_dim, d = coeffs.noise_dim;
    const double s = params.grid.node(cloud.step);
    const double dt = params.grid.dt();
    const double sqdt = std::sqrt(dt);
    EmpiricalMeasure local;
    if (!law_in) {
        local = EmpiricalMeasure::from_flat(cloud.xi, n);
        law_in = &local;
    }
    const EmpiricalMeasure& law = *law_in;
    const TimeGrid& cgrid = path.control_grid();
    const int cinterval = cgrid.interval_of(s);
    const bool paired = (params.n_x == params.n_xi);
    const double* table_row =
        noise_table ? noise_table + static_cast<std::size_t>(cloud.step) * params.n_xi * d
                    : nullptr;
    if (noise_table && !paired)
        throw DegenerateInput("noise tables require paired clouds (n_x == n_xi)");

    std::vector<double> bvec(n), svec(n * d), dB(d);
    auto step_one = [&](std::vector<double>& states, std::vector<BrownianHistory>& hist,
                        std::size_t p, std::uint64_t tag, const char* kind) {
        std::span<const double> xs(states.data() + p * n, n);
        int ai = path.action_index(s, p, hist[p]);
        std::span<const double> av(actions.action(ai));
        coeffs.drift(s, xs, law, av, bvec);
        coeffs.diffusion(s, xs, law, av, svec);
        if (table_row)
            for (int c = 0; c < d; ++c) dB[c] = table_row[p * d + c];
        else
            for (int c = 0; c < d; ++c)
                dB[c] = noise_increment(params.seed, tag, p, cloud.step, c, sqdt);
        bool ok = true;
        for (int r = 0; r < n; ++r) {
            double dx = bvec[r] * dt;
            for (int c = 0; c < d; ++c) dx += svec[r * d + c] * dB[c];
            double v = states[p * n + r] + dx;
            states[p * n + r] = v;
            ok = ok && std::isfinite(v);
        }
        if (!ok)
            throw NumericalBlowup(cloud.step + 1, s + dt,
                                  std::string(kind) + " particle diverged during integration");
        hist[p].acc[cinterval] += dB[0];
    };

    for (std::size_t p = 0; p < params.n_xi; ++p) step_one(cloud.xi, cloud.xi_hist, p, kTagXi, "xi");
    for (std::size_t p = 0; p < params.n_x; ++p)
        step_one(cloud.x, cloud.x_hist, p, paired ? kTagXi : kTagX, "x");
    cloud.step += 1;
}

void run_simulation(const CoefficientSet& coeffs, const ActionSpace& actions,
                    const ControlPath& path, const SimParams& params, const XiSampler& xi,
                    std::span<const double> x0, const NodeVisitor& visit) {
    params.grid.validate();
    CloudState cloud = init_cloud(coeffs, xi, x0, params, path.control_grid().n_steps);
    for (int i = 0; i <= params.grid.n_steps; ++i) {
        EmpiricalMeasure law = EmpiricalMeasure::from_flat(cloud.xi, coeffs.state_dim);
        if (visit) visit(i, params.grid.node(i), cloud, law);
        if (i < params.grid.n_steps) advance_cloud(coeffs, actions, path, params, cloud, &law);
    }
}

std::vector<ParticleCloud> simulate_coupled(const CoefficientSet& coeffs,
                                            const ActionSpace& actions, const ControlPath& path,
                                            const SimParams& params, const XiSampler& xi,
                                            std::span<const double> x0) {
    std::vector<ParticleCloud> traj;
    traj.reserve(params.grid.n_steps + 1);
    run_simulation(coeffs, actions, path, params, xi, x0,
                   [&](int step, double time, const CloudState& c, const EmpiricalMeasure&) {
                       traj.push_back(ParticleCloud{step, time, c});
                   });
    return traj;
}

ValueEstimate gain_estimate(const CoefficientSet& coeffs, const ActionSpace& actions,
                            const ControlPath& path, const SimParams& params, const XiSampler& xi,
                            std::span<const double> x0) {
    const int n = coeffs.state_dim;
    const double dt = params.grid.dt();
    std::vector<double> gain(params.n_x, 0.0);
    run_simulation(coeffs, actions, path, params, xi, x0,
                   [&](int step, double time, const CloudState& c, const EmpiricalMeasure& law) {
                       const double w = (step == 0 || step == params.grid.n_steps) ? 0.5 * dt : dt;
                       for (std::size_t p = 0; p < params.n_x; ++p) {
                           std::span<const double> xs(c.x.data() + p * n, n);
                           int ai = path.action_index(time, p, c.x_hist[p]);
                           gain[p] += w * coeffs.running_reward(time, xs, law,
                                                                actions.action(ai));
                           if (step == params.grid.n_steps)
                               gain[p] += coeffs.terminal_reward(xs, law);
                       }
                   });
    double mean = 0.0;
    for (double g : gain) mean += g;
    mean /= static_cast<double>(gain.size());
    double var = 0.0;
    for (double g : gain) var += (g - mean) * (g - mean);
    var = gain.size() > 1 ? var / (static_cast<double>(gain.size()) - 1.0) : 0.0;
    return {mean, std::sqrt(var / static_cast<double>(gain.size()))};
}

FlowReport flow_check(const CoefficientSet& coeffs, const ActionSpace& actions,
                      const ControlPath& path, const SimParams& params, const XiSampler& xi,
                      std::span<const double> x0, double s) {
    const int j = params.grid.node_index(s);  // GridError if s is off the grid
    auto traj = simulate_coupled(coeffs, actions, path, params, xi, x0);

    // Restart from the stored cloud at node j; global step indices continue from
    // j, so the replayed increments are keyed identically.
    CloudState cloud = traj[j].state;
    FlowReport rep;
    for (int i = j; i < params.grid.n_steps; ++i) {
        advance_cloud(coeffs, actions, path, params, cloud);
        const CloudState& ref = traj[i + 1].state;
        for (std::size_t k = 0; k < cloud.xi.size(); ++k)
            rep.max_diff_xi = std::max(rep.max_diff_xi, std::abs(cloud.xi[k] - ref.xi[k]));
        for (std::size_t k = 0; k < cloud.x.size(); ++k)
            rep.max_diff_x = std::max(rep.max_diff_x, std::abs(cloud.x[k] - ref.x[k]));
    }
    return rep;
}

void dump_trajectory_csv(const std::vector<ParticleCloud>& traj, int state_dim,
                         const std::string& path, std::uint64_t seed,
                         const std::string& config_hash) {
    std::ofstream os(path);
    os.precision(17);
    os << "# seed=" << seed << " config_hash=" << config_hash << '\n';
    os << "step,time,particle_id,component,value,kind\n";
    for (const auto& pc : traj) {
        const auto& st = pc.state;
        for (std::size_t p = 0; p * state_dim < st.xi.size(); ++p)
            for (int c = 0; c < state_dim; ++c)
                os << pc.step << ',' << pc.time << ',' << p << ',' << c << ','
                   << st.xi[p * state_dim + c] << ",xi\n";
        for (std::size_t p = 0; p * state_dim < st.x.size(); ++p)
            for (int c = 0; c < state_dim; ++c)
                os << pc.step << ',' << pc.time << ',' << p << ',' << c << ','
                   << st.x[p * state_dim + c] << ",x\n";
    }
}

}  // namespace mkv
