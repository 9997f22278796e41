#include "mkv/randomized.hpp"

#include <algorithm>
#include <cmath>

#include "mkv/bsde.hpp"
#include "mkv/rng.hpp"

namespace mkv {

double MarkIntensity::total() const {
    double s = 0.0;
    for (double r : rates) s += r;
    return s;
}

void MarkIntensity::validate(std::size_t catalog_size) const {
    if (marks.empty() || marks.size() != rates.size())
        throw DegenerateInput("mark/rate lists must be nonempty and aligned");
    for (std::size_t i = 0; i < marks.size(); ++i) {
        if (marks[i] >= catalog_size) throw DegenerateInput("mark outside the catalog");
        if (!(rates[i] > 0.0)) throw InvalidIntensity("rates must be strictly positive");
        for (std::size_t j = i + 1; j < marks.size(); ++j)
            if (marks[i] == marks[j]) throw DegenerateInput("duplicate mark");
    }
}

MarkIntensity MarkIntensity::uniform(std::size_t catalog_size, double rate_each) {
    MarkIntensity m;
    for (std::size_t i = 0; i < catalog_size; ++i) {
        m.marks.push_back(i);
        m.rates.push_back(rate_each);
    }
    return m;
}

PoissonPath sample_poisson_path(const MarkIntensity& lambda, double horizon, int k_max,
                                std::uint64_t seed, std::size_t abar) {
    if (!(lambda.total() > 0.0)) throw InvalidIntensity("total rate must be positive");
    PoissonPath path;
    path.abar = abar;
    rng::Key root = rng::Key(seed).sub(7001);
    double t = 0.0;
    const double total = lambda.total();
    for (int n = 0;; ++n) {
        t += rng::exponential(root.sub(2 * n), total);
        if (t >= horizon) break;
        if (static_cast<int>(path.jumps.size()) >= k_max) {
            path.truncated = true;
            break;
        }
        double u = rng::uniform01(root.sub(2 * n + 1)) * total;
        std::size_t pos = lambda.marks.size() - 1;
        double acc = 0.0;
        for (std::size_t i = 0; i < lambda.rates.size(); ++i) {
            acc += lambda.rates[i];
            if (u <= acc) {
                pos = i;
                break;
            }
        }
        path.jumps.emplace_back(t, pos);
    }
    return path;
}

int randomized_action(const PoissonPath& path, const MarkIntensity& lambda,
                      const ControlCatalog& catalog, double s, const BrownianHistory& h) {
    if (s < 0.0) throw DomainError("negative time");
    std::size_t mark = path.abar;
    for (const auto& [tn, pos] : path.jumps) {
        if (tn <= s)
            mark = lambda.marks[pos];
        else
            break;
    }
    const double T = catalog.grid().t_end;
    return evaluate_control(catalog.controls[mark], std::min(s, T), h);
}

int shifted_action(const PoissonPath& path, const MarkIntensity& lambda,
                   const ControlCatalog& catalog, double t, std::size_t a0_action, double s,
                   const BrownianHistory& h) {
    if (s < t) throw DomainError("shifted control evaluated before t");
    // Find the interval [T_n, T_{n+1}) containing s; marks with T_n < t act as a0.
    double last_jump = 0.0;
    std::size_t mark = path.abar;
    bool have_mark = false;
    for (const auto& [tn, pos] : path.jumps) {
        if (tn <= s) {
            last_jump = tn;
            mark = lambda.marks[pos];
            have_mark = true;
        } else {
            break;
        }
    }
    // The implicit first interval [0, T_1) carries abar with T_0 = 0, so a0
    // masks it only when t > 0.
    const bool masked = have_mark ? (last_jump < t) : (t > 0.0);
    if (masked) return static_cast<int>(a0_action);
    const double T = catalog.grid().t_end;
    return evaluate_control(catalog.controls[mark], std::min(s, T), h);
}

// ---------------------------------------------------------------------------
// Intensity controls and the Doleans weight
// ---------------------------------------------------------------------------

IntensityControl IntensityControl::constant(double c, const TimeGrid& grid) {
    IntensityControl nu;
    nu.lo = nu.hi = c;
    nu.grid = grid;
    nu.value = [c](int, std::span<const std::pair<int, std::size_t>>, std::size_t) { return c; };
    return nu;
}

double IntensityControl::at(int interval, std::span<const std::pair<int, std::size_t>> history,
                            std::size_t mark_pos) const {
    double v = value(interval, history, mark_pos);
    if (v < lo - 1e-12 || v > hi + 1e-12)
        throw InvalidIntensity("intensity " + std::to_string(v) + " outside bounds");
    return v;
}

std::vector<std::pair<int, std::size_t>> snap_jumps_to_grid(const PoissonPath& path,
                                                            const TimeGrid& grid) {
    std::vector<std::pair<int, std::size_t>> snapped;
    for (const auto& [tn, pos] : path.jumps) {
        if (tn <= grid.t_start || tn > grid.t_end) continue;
        int node = static_cast<int>(std::ceil((tn - grid.t_start) / grid.dt() - 1e-12));
        node = std::min(std::max(node, 1), grid.n_steps);
        snapped.emplace_back(node, pos);
    }
    return snapped;
}

double girsanov_weight(const PoissonPath& path, const IntensityControl& nu,
                       const MarkIntensity& lambda, double t_end) {
    if (t_end > nu.grid.t_end + 1e-12)
        throw DomainError("t_end beyond the intensity grid horizon");
    auto snapped = snap_jumps_to_grid(path, nu.grid);

    // History visible to interval i: jumps effective at nodes <= i.
    auto history_before = [&](int interval) {
        std::size_t count = 0;
        while (count < snapped.size() && snapped[count].first <= interval) ++count;
        return std::span<const std::pair<int, std::size_t>>(snapped.data(), count);
    };

    double log_kappa = 0.0;
    // Jump factors: nu is evaluated on the interval containing the jump time,
    // with the history effective at that interval's left node (predictability).
    for (const auto& [tn, pos] : path.jumps) {
        if (tn > t_end) break;
        double v;
        if (tn <= nu.grid.t_start || tn > nu.grid.t_end) {
            v = 1.0;
        } else {
            int interval = nu.grid.interval_of(std::min(tn, nu.grid.t_end - 1e-15));
            v = nu.at(interval, history_before(interval), pos);
        }
        if (!(v > 0.0)) throw InvalidIntensity("vanishing intensity at a jump");
        log_kappa += std::log(v);
    }
    // Compensator integral, exact for the piecewise-constant table.
    double lo_clip = std::max(0.0, std::min(t_end, nu.grid.t_start));
    (void)lo_clip;  // nu == 1 outside the grid contributes nothing
    double upper = std::min(t_end, nu.grid.t_end);
    for (int i = 0; i < nu.grid.n_steps; ++i) {
        double a = nu.grid.node(i), b = std::min(nu.grid.node(i + 1), upper);
        if (b <= a) break;
        auto hist = history_before(i);
        double s = 0.0;
        for (std::size_t m = 0; m < lambda.marks.size(); ++m)
            s += (nu.at(i, hist, m) - 1.0) * lambda.rates[m];
        log_kappa -= s * (b - a);
    }
    return std::exp(log_kappa);
}

RandomizedGain randomized_gain(const CoefficientSet& coeffs, const ActionSpace& actions,
                               const ControlCatalog& catalog, const MarkIntensity& lambda,
                               const IntensityControl& nu, int k_max, int n_outer,
                               const SimParams& inner, const XiSampler& xi,
                               std::span<const double> x0, std::uint64_t path_seed,
                               std::size_t abar) {
    if (n_outer < 1) throw DegenerateInput("need at least one outer path");
    lambda.validate(catalog.size());
    const double horizon = catalog.grid().t_end;
    std::vector<double> weighted(n_outer);
    int truncated = 0;
    for (int j = 0; j < n_outer; ++j) {
        PoissonPath path =
            sample_poisson_path(lambda, horizon, k_max, rng::Key(path_seed).sub(j).v, abar);
        truncated += path.truncated ? 1 : 0;
        double kappa = girsanov_weight(path, nu, lambda, horizon);
        RandomizedControlPath cpath(path, lambda, catalog);
        ValueEstimate gain = gain_estimate(coeffs, actions, cpath, inner, xi, x0);
        weighted[j] = kappa * gain.mean;
    }
    double mean = 0.0;
    for (double w : weighted) mean += w;
    mean /= n_outer;
    double var = 0.0;
    for (double w : weighted) var += (w - mean) * (w - mean);
    var = n_outer > 1 ? var / (n_outer - 1.0) : 0.0;
    RandomizedGain out;
    out.estimate = {mean, std::sqrt(var / n_outer)};
    out.truncated_fraction = static_cast<double>(truncated) / n_outer;
    out.truncation_warning = out.truncated_fraction > 0.01;
    return out;
}

RandomizedValue value_randomized(const CoefficientSet& coeffs, const ActionSpace& actions,
                                 const ControlCatalog& catalog, const MarkIntensity& lambda,
                                 const RandomizedValueConfig& config, const XiSampler& xi,
                                 std::span<const double> x0) {
    lambda.validate(catalog.size());
    bsde::RootControl root;
    root.is_mark = !config.shifted;
    root.index = config.shifted ? config.a0_action : config.abar;
    bsde::JumpLattice lattice(coeffs, actions, catalog, lambda, root, config.sim, config.k_max,
                              config.node_cap, xi, x0);
    auto dp = bsde::bang_bang_dp(lattice, lambda, config.nu_lo, config.nu_hi, true);

    RandomizedValue out;
    out.value = dp.root;
    out.tree_nodes = lattice.node_count();
    // Serialize the bang-bang table, keyed by the node's effective jump history.
    for (int level = 0; level + 1 <= lattice.levels() - 1; ++level) {
        const auto& nodes = lattice.level_nodes(level);
        for (std::size_t id = 0; id < nodes.size(); ++id) {
            if (lattice.jump_arity(level, id) == 0) continue;
            std::string hist = lattice.history_signature(level, id);
            for (std::size_t m = 0; m < lambda.marks.size(); ++m) {
                if (out.nu_table.size() >= config.table_cap) {
                    out.table_truncated = true;
                    return out;
                }
                out.nu_table.push_back({hist, level, lambda.marks[m],
                                        dp.take_hi[level][id * lambda.marks.size() + m]
                                            ? config.nu_hi
                                            : config.nu_lo});
            }
        }
    }
    return out;
}

}  // namespace mkv
