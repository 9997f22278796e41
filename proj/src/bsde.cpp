#include "mkv/bsde.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "mkv/rng.hpp"

namespace mkv::bsde {

namespace {

// Active-mark adapter: the lattice advances each node's cloud under the mark
// in force during the coming interval.
class NodeControlPath final : public ControlPath {
public:
    NodeControlPath(const ControlCatalog& cat, RootControl root) : cat_(&cat), root_(root) {}
    void set_mark(std::int32_t mark) { mark_ = mark; }  // catalog index, -1 = root segment

    int action_index(double s, std::size_t, const BrownianHistory& h) const override {
        if (mark_ >= 0) return evaluate_control(cat_->controls[mark_], s, h);
        if (root_.is_mark) return evaluate_control(cat_->controls[root_.index], s, h);
        return static_cast<int>(root_.index);
    }
    const TimeGrid& control_grid() const override { return cat_->grid(); }

private:
    const ControlCatalog* cat_;
    RootControl root_;
    std::int32_t mark_ = -1;
};

double expected_node_count(int m_steps, int k_max, std::size_t marks) {
    std::vector<double> cnt(k_max + 1, 0.0);
    cnt[0] = 1.0;
    double total = 1.0;
    for (int i = 0; i < m_steps; ++i) {
        std::vector<double> next(k_max + 1, 0.0);
        for (int d = 0; d <= k_max; ++d) {
            next[d] += cnt[d];
            if (d + 1 <= k_max) next[d + 1] += cnt[d] * static_cast<double>(marks);
        }
        cnt.swap(next);
        for (double c : cnt) total += c;
    }
    return total;
}

}  // namespace

JumpLattice::JumpLattice(const CoefficientSet& coeffs, const ActionSpace& actions,
                         const ControlCatalog& catalog, const MarkIntensity& lambda,
                         RootControl root, const SimParams& sim, int k_max, std::size_t node_cap,
                         const XiSampler& xi, std::span<const double> x0,
                         TerminalFn terminal_override)
    : catalog_(&catalog),
      lambda_(&lambda),
      root_(root),
      sim_(sim),
      k_max_(k_max),
      node_cap_(node_cap),
      n_marks_(lambda.marks.size()) {
    if (k_max_ < 0) throw TreeError("k_max must be >= 0");
    sim_.grid.validate();
    lambda.validate(catalog.size());
    double expected = expected_node_count(sim_.grid.n_steps, k_max_, n_marks_);
    if (expected > static_cast<double>(node_cap_))
        throw CapacityError("jump tree needs " + std::to_string(expected) +
                            " nodes, above cap " + std::to_string(node_cap_));
    build(coeffs, actions, catalog, xi, x0, terminal_override);
}

std::size_t JumpLattice::jump_arity(int level, std::size_t node) const {
    if (level + 1 >= levels()) return 0;
    return (levels_[level].nodes[node].depth < k_max_) ? n_marks_ : 0;
}

std::size_t JumpLattice::jump_child(int level, std::size_t node, std::size_t mark_pos) const {
    return static_cast<std::size_t>(levels_[level].nodes[node].nojump_child) + 1 + mark_pos;
}

std::string JumpLattice::history_signature(int level, std::size_t node) const {
    std::vector<std::pair<int, std::int32_t>> jumps;
    int lvl = level;
    std::size_t id = node;
    while (lvl > 0) {
        const Node& nd = levels_[lvl].nodes[id];
        if (nd.mark_pos >= 0) jumps.emplace_back(lvl, nd.mark_pos);
        id = static_cast<std::size_t>(nd.parent);
        --lvl;
    }
    std::reverse(jumps.begin(), jumps.end());
    std::ostringstream os;
    for (std::size_t i = 0; i < jumps.size(); ++i) {
        if (i) os << '|';
        os << jumps[i].first << ':' << lambda_->marks[jumps[i].second];
    }
    return os.str();
}

void JumpLattice::build(const CoefficientSet& coeffs, const ActionSpace& actions,
                        const ControlCatalog& catalog, const XiSampler& xi,
                        std::span<const double> x0, const TerminalFn& terminal_override) {
    const int m = sim_.grid.n_steps;
    const int n = coeffs.state_dim;
    levels_.assign(m + 1, {});
    NodeControlPath path(catalog, root_);

    struct Frame {
        int level;
        std::size_t id;
        std::int32_t mark;  // active catalog mark, -1 for the root segment
        CloudState cloud;
    };

    auto node_driver = [&](const Frame& fr, const EmpiricalMeasure& law) {
        path.set_mark(fr.mark);
        const double s = sim_.grid.node(fr.level);
        double acc = 0.0;
        for (std::size_t p = 0; p < sim_.n_x; ++p) {
            std::span<const double> xs(fr.cloud.x.data() + p * n, n);
            int ai = path.action_index(s, p, fr.cloud.x_hist[p]);
            acc += coeffs.running_reward(s, xs, law, actions.action(ai));
        }
        return acc / static_cast<double>(sim_.n_x);
    };
    auto node_terminal = [&](const Frame& fr, const EmpiricalMeasure& law) {
        if (terminal_override) return terminal_override(fr.cloud, law);
        double acc = 0.0;
        for (std::size_t p = 0; p < sim_.n_x; ++p) {
            std::span<const double> xs(fr.cloud.x.data() + p * n, n);
            acc += coeffs.terminal_reward(xs, law);
        }
        return acc / static_cast<double>(sim_.n_x);
    };

    const std::vector<double> noise = draw_noise_table(sim_, coeffs.noise_dim);
    CloudState root_cloud = init_cloud(coeffs, xi, x0, sim_, catalog.grid().n_steps);
    levels_[0].nodes.push_back(Node{-1, -1, 0, -1});
    levels_[0].driver.resize(1);
    node_count_ = 1;

    std::vector<Frame> stack;
    stack.push_back(Frame{0, 0, -1, std::move(root_cloud)});
    while (!stack.empty()) {
        Frame fr = std::move(stack.back());
        stack.pop_back();
        Level& lvl = levels_[fr.level];
        const EmpiricalMeasure law = EmpiricalMeasure::from_flat(fr.cloud.xi, n);
        lvl.driver[fr.id] = node_driver(fr, law);
        if (fr.level == m) {
            lvl.terminal[fr.id] = node_terminal(fr, law);
            continue;
        }
        // Advance the shared cloud one interval under the active mark; all
        // children start from the same advanced state.
        path.set_mark(fr.mark);
        advance_cloud(coeffs, actions, path, sim_, fr.cloud, &law, noise.data());

        Level& next = levels_[fr.level + 1];
        const Node& self = lvl.nodes[fr.id];
        const std::size_t arity = (self.depth < k_max_) ? n_marks_ : 0;
        const std::int32_t c0 = static_cast<std::int32_t>(next.nodes.size());
        lvl.nodes[fr.id].nojump_child = c0;

        next.nodes.push_back(Node{static_cast<std::int32_t>(fr.id), -1, self.depth, -1});
        for (std::size_t mpos = 0; mpos < arity; ++mpos)
            next.nodes.push_back(Node{static_cast<std::int32_t>(fr.id), -1,
                                      static_cast<std::int16_t>(self.depth + 1),
                                      static_cast<std::int32_t>(mpos)});
        next.driver.resize(next.nodes.size());
        if (fr.level + 1 == m) next.terminal.resize(next.nodes.size());
        node_count_ += 1 + arity;

        for (std::size_t mpos = 0; mpos < arity; ++mpos)
            stack.push_back(Frame{fr.level + 1, static_cast<std::size_t>(c0) + 1 + mpos,
                                  static_cast<std::int32_t>(lambda_->marks[mpos]), fr.cloud});
        // The no-jump child keeps the active mark and takes the cloud by move.
        stack.push_back(Frame{fr.level + 1, static_cast<std::size_t>(c0), fr.mark,
                              std::move(fr.cloud)});
    }
}

// ---------------------------------------------------------------------------
// Backward recursions
// ---------------------------------------------------------------------------

namespace {

double quad_weight(const JumpLattice& lat, int level) {
    const int m = lat.levels() - 1;
    return (level == 0 || level == m) ? 0.5 * lat.dt() : lat.dt();
}

}  // namespace

PenalizedSolution solve_penalized(const JumpLattice& lattice, const MarkIntensity& lambda,
                                  double n) {
    const int m = lattice.levels() - 1;
    PenalizedSolution sol;
    sol.n = n;
    sol.dt = lattice.dt();
    sol.Y.resize(m + 1);
    sol.K.resize(m + 1);

    auto& Ym = sol.Y[m];
    Ym.resize(lattice.level_nodes(m).size());
    for (std::size_t id = 0; id < Ym.size(); ++id)
        Ym[id] = lattice.terminal(id) + quad_weight(lattice, m) * lattice.driver(m, id);

    for (int level = m - 1; level >= 0; --level) {
        const auto& nodes = lattice.level_nodes(level);
        const auto& Ynext = sol.Y[level + 1];
        auto& Y = sol.Y[level];
        Y.resize(nodes.size());
        for (std::size_t id = 0; id < nodes.size(); ++id) {
            const double ycont = Ynext[nodes[id].nojump_child];
            double pen = 0.0;
            const std::size_t arity = lattice.jump_arity(level, id);
            for (std::size_t mpos = 0; mpos < arity; ++mpos) {
                double u = Ynext[lattice.jump_child(level, id, mpos)] - ycont;
                sol.max_U_plus = std::max(sol.max_U_plus, u);
                if (u > 0.0) pen += lambda.rates[mpos] * u;
            }
            Y[id] = ycont + quad_weight(lattice, level) * lattice.driver(level, id) +
                    n * lattice.dt() * pen;
        }
    }
    sol.root = sol.Y[0][0];

    // K forward: the penalty increment at a step is shared by all children.
    sol.K[0].assign(1, 0.0);
    for (int level = 0; level < m; ++level) {
        const auto& nodes = lattice.level_nodes(level);
        const auto& Ynext = sol.Y[level + 1];
        sol.K[level + 1].assign(lattice.level_nodes(level + 1).size(), 0.0);
        for (std::size_t id = 0; id < nodes.size(); ++id) {
            const double ycont = Ynext[nodes[id].nojump_child];
            double pen = 0.0;
            const std::size_t arity = lattice.jump_arity(level, id);
            for (std::size_t mpos = 0; mpos < arity; ++mpos) {
                double u = Ynext[lattice.jump_child(level, id, mpos)] - ycont;
                if (u > 0.0) pen += lambda.rates[mpos] * u;
            }
            double knext = sol.K[level][id] + n * lattice.dt() * pen;
            sol.K[level + 1][nodes[id].nojump_child] = knext;
            for (std::size_t mpos = 0; mpos < arity; ++mpos)
                sol.K[level + 1][lattice.jump_child(level, id, mpos)] = knext;
        }
    }
    return sol;
}

BangBangResult bang_bang_dp(const JumpLattice& lattice, const MarkIntensity& lambda, double lo,
                            double hi, bool record_policy) {
    if (!(0.0 < lo && lo <= hi)) throw InvalidIntensity("need 0 < lo <= hi");
    const int m = lattice.levels() - 1;
    BangBangResult res;
    res.Y.resize(m + 1);
    if (record_policy) res.take_hi.resize(m + 1);

    auto& Ym = res.Y[m];
    Ym.resize(lattice.level_nodes(m).size());
    for (std::size_t id = 0; id < Ym.size(); ++id)
        Ym[id] = lattice.terminal(id) + quad_weight(lattice, m) * lattice.driver(m, id);

    for (int level = m - 1; level >= 0; --level) {
        const auto& nodes = lattice.level_nodes(level);
        const auto& Ynext = res.Y[level + 1];
        auto& Y = res.Y[level];
        Y.resize(nodes.size());
        if (record_policy)
            res.take_hi[level].assign(nodes.size() * lattice.marks(), 0);
        for (std::size_t id = 0; id < nodes.size(); ++id) {
            const double ycont = Ynext[nodes[id].nojump_child];
            double extra = 0.0;
            const std::size_t arity = lattice.jump_arity(level, id);
            for (std::size_t mpos = 0; mpos < arity; ++mpos) {
                double u = Ynext[lattice.jump_child(level, id, mpos)] - ycont;
                bool take_hi = u >= 0.0;
                extra += lambda.rates[mpos] * (take_hi ? hi * u : lo * u);
                if (record_policy)
                    res.take_hi[level][id * lattice.marks() + mpos] = take_hi ? 1 : 0;
            }
            Y[id] = ycont + quad_weight(lattice, level) * lattice.driver(level, id) +
                    lattice.dt() * extra;
        }
    }
    res.root = res.Y[0][0];
    return res;
}

DualCheck dual_check(const JumpLattice& lattice, const MarkIntensity& lambda, double n,
                     double eps) {
    DualCheck out;
    out.penalized_root = solve_penalized(lattice, lambda, n).root;
    out.dual_root = bang_bang_dp(lattice, lambda, eps, n).root;
    out.abs_discrepancy = std::abs(out.penalized_root - out.dual_root);
    out.rel_discrepancy = out.abs_discrepancy / (1.0 + std::abs(out.penalized_root));
    return out;
}

std::vector<double> default_penalty_schedule() { return {1, 2, 4, 8, 16, 32, 64, 128, 256}; }

MinimalSolution minimal_solution(const JumpLattice& lattice, const MarkIntensity& lambda,
                                 const std::vector<double>& schedule, double tolerance) {
    if (schedule.empty()) throw TreeError("empty penalty schedule");
    MinimalSolution out;
    double prev = 0.0;
    for (std::size_t i = 0; i < schedule.size(); ++i) {
        PenalizedSolution sol = solve_penalized(lattice, lambda, schedule[i]);
        out.trace.emplace_back(schedule[i], sol.root);
        out.y_root = sol.root;
        out.max_U_plus_final = sol.max_U_plus;
        if (i > 0) {
            if (sol.root < prev - 1e-9)
                throw SchemeInconsistency("Y^n decreased from " + std::to_string(prev) + " to " +
                                          std::to_string(sol.root) + " at n = " +
                                          std::to_string(schedule[i]));
            if (std::abs(sol.root - prev) < tolerance) {
                out.converged = true;
                return out;
            }
        }
        prev = sol.root;
    }
    // Converged if the last two schedule points agree to tolerance.
    if (out.trace.size() >= 2)
        out.converged = std::abs(out.trace.back().second -
                                 out.trace[out.trace.size() - 2].second) < tolerance;
    return out;
}

FeynmanKacReport feynman_kac_check(const CoefficientSet& coeffs, const ActionSpace& actions,
                                   const ControlCatalog& catalog, const MarkIntensity& lambda,
                                   RootControl root, const SimParams& sim, int k_max,
                                   std::size_t node_cap, const XiSampler& xi,
                                   std::span<const double> x0,
                                   const std::vector<double>& schedule, double tolerance) {
    JumpLattice lattice(coeffs, actions, catalog, lambda, root, sim, k_max, node_cap, xi, x0);
    MinimalSolution ms = minimal_solution(lattice, lambda, schedule, tolerance);
    DirectValue dv = value_direct(coeffs, actions, catalog, sim, xi, x0);
    FeynmanKacReport rep;
    rep.y_root = ms.y_root;
    rep.v_direct = dv.value;
    rep.abs_diff = std::abs(ms.y_root - dv.value);
    rep.converged = ms.converged;
    rep.max_U_plus_final = ms.max_U_plus_final;
    return rep;
}

DppReport dpp_check(const CoefficientSet& coeffs, const ActionSpace& actions,
                    const ControlCatalog& catalog, const MarkIntensity& lambda,
                    const SimParams& sim, double s, const XiSampler& xi,
                    std::span<const double> x0, const DppConfig& config) {
    const int j = sim.grid.node_index(s);
    if (j <= 0 || j >= sim.grid.n_steps)
        throw GridError("s must be an interior grid node");

    // Terminal override at time-s leaves: average V(s, x_p, law) over a
    // deterministic subsample of the x cloud, each via value_direct on [s, T].
    SimParams inner = sim;
    inner.grid = TimeGrid{s, sim.grid.t_end, sim.grid.n_steps - j};
    inner.n_xi = config.inner_particles;
    inner.n_x = config.inner_particles;
    // Fresh noise for the restarted estimates: reusing the outer keys would
    // correlate the continuation draws with the leaf states.
    inner.seed = rng::Key(sim.seed).sub(0x1d9f).v;

    const int n = coeffs.state_dim;
    auto terminal = [&](const CloudState& cloud, const EmpiricalMeasure& law) {
        const std::size_t total = cloud.x.size() / n;
        const std::size_t take = std::min(config.subsample, total);
        XiSampler restart = XiSampler::atoms(law);
        double acc = 0.0;
        for (std::size_t q = 0; q < take; ++q) {
            std::size_t p = (q * total) / take;  // evenly spread subsample
            std::vector<double> xp(cloud.x.begin() + p * n, cloud.x.begin() + (p + 1) * n);
            acc += value_direct(coeffs, actions, catalog, inner, restart, xp).value;
        }
        return acc / static_cast<double>(take);
    };

    SimParams outer = sim;
    outer.grid = TimeGrid{sim.grid.t_start, s, j};
    JumpLattice lattice(coeffs, actions, catalog, lambda, config.root, outer, config.k_max,
                        config.node_cap, xi, x0, terminal);
    DppReport rep;
    rep.rhs = bang_bang_dp(lattice, lambda, config.nu_lo, config.nu_hi).root;
    rep.lhs = value_direct(coeffs, actions, catalog, sim, xi, x0).value;
    rep.residual = std::abs(rep.lhs - rep.rhs);
    return rep;
}

std::string penalized_trace_csv(const PenalizedSolution& sol, const JumpLattice& lattice) {
    std::ostringstream os;
    os.precision(17);
    os << "n,node_id,time,Y,K,max_U_plus\n";
    const double t0 = lattice.sim().grid.t_start;
    std::size_t node_id = 0;
    for (int level = 0; level < lattice.levels(); ++level) {
        double time = t0 + level * sol.dt;
        for (std::size_t id = 0; id < sol.Y[level].size(); ++id, ++node_id)
            os << sol.n << ',' << node_id << ',' << time << ',' << sol.Y[level][id] << ','
               << sol.K[level][id] << ',' << sol.max_U_plus << '\n';
    }
    return os.str();
}

}  // namespace mkv::bsde
