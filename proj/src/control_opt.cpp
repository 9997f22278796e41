#include "mkv/control_opt.hpp"

#include <algorithm>
#include <cmath>

#include "mkv/rng.hpp"

namespace mkv {

ControlCatalog enumerate_step_controls(const ActionSpace& space, double horizon, int k, int L,
                                       std::size_t cap) {
    if (k < 1 || L < 1) throw GridError("k and L must be >= 1");
    space.validate();
    const std::size_t M = space.size();
    const std::size_t slots = static_cast<std::size_t>(k) * static_cast<std::size_t>(L);
    double count = std::pow(static_cast<double>(M), static_cast<double>(slots));
    if (count > static_cast<double>(cap))
        throw CapacityError("catalog size M^(kL) = " + std::to_string(count) +
                            " exceeds cap " + std::to_string(cap));

    ControlCatalog cat;
    cat.intervals = k;
    cat.cells = L;
    cat.action_count = M;
    TimeGrid grid{0.0, horizon, k};
    const std::size_t total = static_cast<std::size_t>(count);
    cat.controls.reserve(total);
    for (std::size_t id = 0; id < total; ++id) {
        StepControl c;
        c.grid = grid;
        c.cells = L;
        c.table.assign(k, std::vector<int>(L, 0));
        // Interval-major, cell-minor base-M digits; id 0 is the all-first-action control.
        std::size_t rest = id;
        for (int i = k - 1; i >= 0; --i)
            for (int l = L - 1; l >= 0; --l) {
                c.table[i][l] = static_cast<int>(rest % M);
                rest /= M;
            }
        cat.controls.push_back(std::move(c));
    }
    return cat;
}

DirectValue value_direct(const CoefficientSet& coeffs, const ActionSpace& actions,
                         const ControlCatalog& catalog, const SimParams& params,
                         const XiSampler& xi, std::span<const double> x0) {
    if (catalog.controls.empty()) throw DegenerateInput("empty control catalog");
    DirectValue out;
    out.table.reserve(catalog.size());
    for (std::size_t id = 0; id < catalog.size(); ++id) {
        StepControlPath path(catalog.controls[id]);
        ValueEstimate est = gain_estimate(coeffs, actions, path, params, xi, x0);
        out.table.push_back({id, est.mean, est.std_error});
        if (id == 0 || est.mean > out.value) {
            out.value = est.mean;
            out.argmax = id;
        }
    }
    return out;
}

double value_mkv(const CoefficientSet& coeffs, const ActionSpace& actions,
                 const ControlCatalog& catalog, const SimParams& params,
                 const std::vector<Atom1d>& atoms) {
    if (atoms.empty()) throw UnsupportedInput("xi must be finitely valued with atoms");
    double wsum = 0.0;
    for (const auto& a : atoms) wsum += a.p;
    if (std::abs(wsum - 1.0) > 1e-9) throw UnsupportedInput("atom weights must sum to 1");

    std::vector<std::vector<double>> pts;
    std::vector<double> wts;
    for (const auto& a : atoms) {
        pts.push_back({a.x});
        wts.push_back(a.p);
    }
    EmpiricalMeasure pi(pts, wts);
    XiSampler sampler = XiSampler::atoms(pi);

    double total = 0.0;
    for (const auto& a : atoms) {
        std::vector<double> x0{a.x};
        total += a.p * value_direct(coeffs, actions, catalog, params, sampler, x0).value;
    }
    return total;
}

double mkv_atom_gain(const CoefficientSet& coeffs, const ActionSpace& actions,
                     const StepControl& control, const SimParams& params, double x_atom) {
    const int n = coeffs.state_dim;
    const double dt = params.grid.dt();
    SimParams p = params;
    p.n_x = 0;  // the gain runs on the xi cloud itself
    StepControlPath path(control);
    XiSampler sampler = XiSampler::constant({x_atom});
    std::vector<double> gain(p.n_xi, 0.0);
    run_simulation(coeffs, actions, path, p, sampler, {},
                   [&](int step, double time, const CloudState& c, const EmpiricalMeasure& law) {
                       const double w = (step == 0 || step == p.grid.n_steps) ? 0.5 * dt : dt;
                       for (std::size_t q = 0; q < p.n_xi; ++q) {
                           std::span<const double> xs(c.xi.data() + q * n, n);
                           int ai = path.action_index(time, q, c.xi_hist[q]);
                           gain[q] += w * coeffs.running_reward(time, xs, law,
                                                                actions.action(ai));
                           if (step == p.grid.n_steps)
                               gain[q] += coeffs.terminal_reward(xs, law);
                       }
                   });
    double mean = 0.0;
    for (double g : gain) mean += g;
    return mean / static_cast<double>(gain.size());
}

JointMkvValue value_mkv_joint(const CoefficientSet& coeffs, const ActionSpace& actions,
                              const ControlCatalog& catalog, const SimParams& params,
                              const std::vector<Atom1d>& atoms, std::size_t cap) {
    if (atoms.empty()) throw UnsupportedInput("xi must be finitely valued with atoms");
    const std::size_t K = atoms.size();
    double combos = std::pow(static_cast<double>(catalog.size()), static_cast<double>(K));
    if (combos > static_cast<double>(cap))
        throw CapacityError("product catalog size exceeds cap");

    // Conditionally on its atom, each block is a self-interacting cloud with
    // its own law flow; blocks share nothing, so the per-(atom, control) gains
    // assemble every product combination.
    std::vector<std::size_t> counts(K);
    std::size_t assigned = 0;
    for (std::size_t k = 0; k < K; ++k) {
        counts[k] = static_cast<std::size_t>(atoms[k].p * static_cast<double>(params.n_xi));
        assigned += counts[k];
    }
    for (std::size_t k = 0; assigned < params.n_xi; ++assigned, k = (k + 1) % K) counts[k] += 1;

    std::vector<std::vector<double>> gains(K, std::vector<double>(catalog.size()));
    for (std::size_t k = 0; k < K; ++k) {
        SimParams block = params;
        block.n_xi = std::max<std::size_t>(counts[k], 1);
        for (std::size_t c = 0; c < catalog.size(); ++c)
            gains[k][c] =
                mkv_atom_gain(coeffs, actions, catalog.controls[c], block, atoms[k].x);
    }

    JointMkvValue best;
    std::vector<std::size_t> choice(K, 0);
    bool first = true;
    while (true) {
        double value = 0.0;
        for (std::size_t k = 0; k < K; ++k) value += atoms[k].p * gains[k][choice[k]];
        if (first || value > best.value) {
            best.value = value;
            best.argmax = choice;
            first = false;
        }
        std::size_t k = 0;
        while (k < K && ++choice[k] == catalog.size()) {
            choice[k] = 0;
            ++k;
        }
        if (k == K) break;
    }
    return best;
}

double krylov_distance(const ActionSpace& space, const StepControl& alpha,
                       const StepControl& beta, int n_paths, std::uint64_t seed) {
    if (std::abs(alpha.grid.t_end - beta.grid.t_end) > 1e-12)
        throw GridError("controls must share the horizon");
    // Merge both grids; on each merged piece the actions are constant in time.
    std::vector<double> nodes;
    for (int i = 0; i <= alpha.grid.n_steps; ++i) nodes.push_back(alpha.grid.node(i));
    for (int i = 0; i <= beta.grid.n_steps; ++i) nodes.push_back(beta.grid.node(i));
    std::sort(nodes.begin(), nodes.end());
    nodes.erase(std::unique(nodes.begin(), nodes.end(),
                            [](double a, double b) { return std::abs(a - b) < 1e-12; }),
                nodes.end());

    const bool deterministic = (alpha.cells == 1 && beta.cells == 1);
    const int paths = deterministic ? 1 : std::max(1, n_paths);
    // Histories live on the finer of the two control grids.
    const TimeGrid& hgrid =
        (alpha.grid.n_steps >= beta.grid.n_steps) ? alpha.grid : beta.grid;

    double total = 0.0;
    for (int w = 0; w < paths; ++w) {
        BrownianHistory h{std::vector<double>(hgrid.n_steps, 0.0)};
        if (!deterministic) {
            const double sq = std::sqrt(hgrid.dt());
            for (int i = 0; i < hgrid.n_steps; ++i)
                h.acc[i] = sq * rng::normal(rng::Key(seed).sub(w).sub(i));
        }
        // Controls on a shared horizon read the same history through their own
        // grids; histories indexed on hgrid are re-binned per control.
        auto rebin = [&](const StepControl& c) {
            BrownianHistory out{std::vector<double>(c.grid.n_steps, 0.0)};
            for (int i = 0; i < hgrid.n_steps; ++i)
                out.acc[c.grid.interval_of(hgrid.node(i))] += h.acc[i];
            return out;
        };
        BrownianHistory ha = rebin(alpha), hb = rebin(beta);
        double acc = 0.0;
        for (std::size_t piece = 0; piece + 1 < nodes.size(); ++piece) {
            double mid = 0.5 * (nodes[piece] + nodes[piece + 1]);
            int ai = evaluate_control(alpha, mid, ha);
            int bi = evaluate_control(beta, mid, hb);
            acc += space.rho(ai, bi) * (nodes[piece + 1] - nodes[piece]);
        }
        total += acc;
    }
    return total / static_cast<double>(paths);
}

std::vector<StabilityRow> stability_probe(const CoefficientSet& coeffs,
                                          const ActionSpace& actions, const StepControl& base,
                                          const SimParams& params, const XiSampler& xi,
                                          std::span<const double> x0, int levels) {
    StepControlPath base_path(base);
    const double j0 = gain_estimate(coeffs, actions, base_path, params, xi, x0).mean;

    std::vector<StabilityRow> rows;
    const double T = base.grid.t_end;
    for (int lvl = 0; lvl < levels; ++lvl) {
        // Refine the base grid so the final sub-interval of width T/(k0 * 2^(lvl+1))
        // can carry a flipped action.
        const int refine = 2 << lvl;
        const int k = base.grid.n_steps * refine;
        StepControl pert;
        pert.grid = TimeGrid{0.0, T, k};
        pert.cells = base.cells;
        pert.table.assign(k, std::vector<int>(base.cells, 0));
        for (int i = 0; i < k; ++i) {
            double mid = pert.grid.node(i) + 0.5 * pert.grid.dt();
            int src = base.grid.interval_of(mid);
            pert.table[i] = base.table[src];
        }
        // Flip the final sub-interval to a different action in every cell.
        for (int l = 0; l < base.cells; ++l) {
            int cur = pert.table[k - 1][l];
            pert.table[k - 1][l] = (cur + 1) % static_cast<int>(actions.size());
        }
        StepControlPath ppath(pert);
        double j1 = gain_estimate(coeffs, actions, ppath, params, xi, x0).mean;
        double rho = krylov_distance(actions, base, pert, 64, params.seed);
        rows.push_back({rho, std::abs(j1 - j0), T / static_cast<double>(k)});
    }
    return rows;
}

}  // namespace mkv
