#include "mkv/measures.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include "mkv/rng.hpp"

namespace mkv {

namespace {

constexpr double kWeightTol = 1e-12;

double sq_dist(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) {
        double d = a[k] - b[k];
        s += d * d;
    }
    return s;
}

}  // namespace

EmpiricalMeasure::EmpiricalMeasure(const std::vector<std::vector<double>>& points,
                                   std::vector<double> weights)
    : weights_(std::move(weights)) {
    if (points.empty()) throw DegenerateInput("empirical measure needs at least one atom");
    dim_ = points.front().size();
    flat_.reserve(points.size() * dim_);
    for (const auto& p : points) {
        if (p.size() != dim_) throw DimensionError("atoms of mixed dimension");
        flat_.insert(flat_.end(), p.begin(), p.end());
    }
    finalize();
}

void EmpiricalMeasure::finalize() {
    const std::size_t count = weights_.size();
    if (count == 0) throw DegenerateInput("empirical measure needs at least one atom");
    if (dim_ == 0) throw DegenerateInput("zero-dimensional atom");
    if (flat_.size() != count * dim_) throw DegenerateInput("atom/weight count mismatch");
    mean_.assign(dim_, 0.0);
    second_moment_ = 0.0;
    // Kahan summation: naive accumulation of 1/N over large clouds drifts
    // past the 1e-12 invariant.
    double total = 0.0, comp = 0.0;
    for (std::size_t i = 0; i < count; ++i) {
        const double w = weights_[i];
        if (!(w >= 0.0)) throw DegenerateInput("negative or NaN weight");
        double y = w - comp;
        double t = total + y;
        comp = (t - total) - y;
        total = t;
        double n2 = 0.0;
        for (std::size_t k = 0; k < dim_; ++k) {
            const double x = flat_[i * dim_ + k];
            if (!std::isfinite(x)) throw DegenerateInput("non-finite atom component");
            mean_[k] += w * x;
            n2 += x * x;
        }
        second_moment_ += w * n2;
    }
    if (std::abs(total - 1.0) > kWeightTol)
        throw DegenerateInput("weights sum to " + std::to_string(total) + ", expected 1");
}

std::vector<std::vector<double>> EmpiricalMeasure::points() const {
    std::vector<std::vector<double>> out(size());
    for (std::size_t i = 0; i < size(); ++i)
        out[i].assign(flat_.begin() + i * dim_, flat_.begin() + (i + 1) * dim_);
    return out;
}

EmpiricalMeasure EmpiricalMeasure::from_samples(const std::vector<std::vector<double>>& samples) {
    if (samples.empty()) throw DegenerateInput("empty sample set");
    std::vector<double> w(samples.size(), 1.0 / static_cast<double>(samples.size()));
    return EmpiricalMeasure(samples, std::move(w));
}

EmpiricalMeasure EmpiricalMeasure::from_samples_1d(const std::vector<double>& samples) {
    std::vector<std::vector<double>> pts;
    pts.reserve(samples.size());
    for (double x : samples) pts.push_back({x});
    return from_samples(pts);
}

EmpiricalMeasure EmpiricalMeasure::dirac(std::vector<double> point) {
    std::vector<std::vector<double>> pts{std::move(point)};
    return EmpiricalMeasure(std::move(pts), {1.0});
}

EmpiricalMeasure EmpiricalMeasure::from_flat(std::vector<double> states, std::size_t dim) {
    if (dim == 0 || states.size() % dim != 0) throw DimensionError("flat state array size");
    EmpiricalMeasure m;
    m.dim_ = dim;
    m.flat_ = std::move(states);
    const std::size_t count = m.flat_.size() / dim;
    m.weights_.assign(count, 1.0 / static_cast<double>(count));
    m.finalize();
    return m;
}

double EmpiricalMeasure::variance1() const {
    double m = mean1(), s = 0.0;
    for (std::size_t i = 0; i < size(); ++i) {
        double d = flat_[i * dim_] - m;
        s += weights_[i] * d * d;
    }
    return s;
}

nlohmann::json EmpiricalMeasure::to_json() const {
    return nlohmann::json{{"points", points()}, {"weights", weights_}};
}

EmpiricalMeasure EmpiricalMeasure::from_json(const nlohmann::json& j) {
    return EmpiricalMeasure(j.at("points").get<std::vector<std::vector<double>>>(),
                            j.at("weights").get<std::vector<double>>());
}

std::string EmpiricalMeasure::to_csv() const {
    std::ostringstream os;
    os.precision(17);
    for (std::size_t i = 0; i < size(); ++i) {
        for (double c : point(i)) os << c << ',';
        os << weights_[i] << '\n';
    }
    return os.str();
}

EmpiricalMeasure EmpiricalMeasure::from_csv(const std::string& text) {
    std::vector<std::vector<double>> pts;
    std::vector<double> w;
    std::istringstream is(text);
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::vector<double> row;
        std::istringstream ls(line);
        std::string cell;
        while (std::getline(ls, cell, ',')) row.push_back(std::stod(cell));
        if (row.size() < 2) throw DegenerateInput("csv row needs point and weight");
        w.push_back(row.back());
        row.pop_back();
        pts.push_back(std::move(row));
    }
    return EmpiricalMeasure(std::move(pts), std::move(w));
}

double moment_norm(const EmpiricalMeasure& mu) { return std::sqrt(mu.second_moment()); }

// ---------------------------------------------------------------------------
// 1-D: quantile coupling on the merged CDF grid. Exact for arbitrary weights.
// ---------------------------------------------------------------------------

namespace {

double w2sq_quantile_1d(const EmpiricalMeasure& mu, const EmpiricalMeasure& nu) {
    std::vector<std::size_t> ia(mu.size()), ib(nu.size());
    std::iota(ia.begin(), ia.end(), 0);
    std::iota(ib.begin(), ib.end(), 0);
    std::sort(ia.begin(), ia.end(),
              [&](std::size_t l, std::size_t r) { return mu.point(l)[0] < mu.point(r)[0]; });
    std::sort(ib.begin(), ib.end(),
              [&](std::size_t l, std::size_t r) { return nu.point(l)[0] < nu.point(r)[0]; });
    double cost = 0.0;
    std::size_t i = 0, j = 0;
    double wa = mu.weight(ia[0]), wb = nu.weight(ib[0]);
    while (true) {
        double m = std::min(wa, wb);
        double d = mu.point(ia[i])[0] - nu.point(ib[j])[0];
        cost += m * d * d;
        wa -= m;
        wb -= m;
        if (wa <= 0.0) {
            if (++i == mu.size()) break;
            wa = mu.weight(ia[i]);
        }
        if (wb <= 0.0) {
            if (++j == nu.size()) break;
            wb = nu.weight(ib[j]);
        }
    }
    return cost;
}

// ---------------------------------------------------------------------------
// Exact transportation simplex (dense): potentials on the spanning-tree basis,
// most-negative entering arc, leaving arc by minimum flow on the cycle.
// ---------------------------------------------------------------------------

struct TransportSimplex {
    std::size_t m, n;
    const std::vector<double>& cost;  // m*n row-major
    std::vector<double> supply, demand;

    // Basis arcs form a spanning tree over m+n nodes (sources 0..m-1, sinks m..m+n-1).
    struct Arc {
        std::size_t i, j;
        double flow;
    };
    std::vector<Arc> basis;
    std::vector<std::vector<std::size_t>> adj;  // node -> basis arc ids

    TransportSimplex(std::size_t m_, std::size_t n_, const std::vector<double>& c,
                     std::vector<double> a, std::vector<double> b)
        : m(m_), n(n_), cost(c), supply(std::move(a)), demand(std::move(b)) {
        // Absorb the rounding residual so both sides balance exactly.
        double sa = std::accumulate(supply.begin(), supply.end(), 0.0);
        double sb = std::accumulate(demand.begin(), demand.end(), 0.0);
        demand.back() = std::max(0.0, demand.back() + (sa - sb));
    }

    double solve() {
        northwest_corner();
        const std::size_t max_pivots = 200 * (m + n) * (m + n) + 10000;
        std::vector<double> u(m), v(n);
        for (std::size_t pivot = 0; pivot < max_pivots; ++pivot) {
            compute_potentials(u, v);
            double best = -1e-11 * scale();
            std::size_t bi = m, bj = n;
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j) {
                    double r = cost[i * n + j] - u[i] - v[j];
                    if (r < best) {
                        best = r;
                        bi = i;
                        bj = j;
                    }
                }
            if (bi == m) break;  // optimal
            pivot_in(bi, bj);
        }
        double total = 0.0;
        for (const Arc& a : basis) total += a.flow * cost[a.i * n + a.j];
        return total;
    }

private:
    double scale() const {
        double s = 1.0;
        for (double c : cost) s = std::max(s, std::abs(c));
        return s;
    }

    void add_arc(std::size_t i, std::size_t j, double f) {
        adj[i].push_back(basis.size());
        adj[m + j].push_back(basis.size());
        basis.push_back({i, j, f});
    }

    void northwest_corner() {
        adj.assign(m + n, {});
        basis.clear();
        std::vector<double> a = supply, b = demand;
        std::size_t i = 0, j = 0;
        while (i < m && j < n) {
            double f = std::max(0.0, std::min(a[i], b[j]));
            add_arc(i, j, f);
            a[i] -= f;
            b[j] -= f;
            // Advance one index only, keeping the basis a spanning tree even on ties.
            if (i + 1 < m && (a[i] <= b[j] || j + 1 == n))
                ++i;
            else
                ++j;
        }
    }

    void compute_potentials(std::vector<double>& u, std::vector<double>& v) const {
        std::vector<char> seen(m + n, 0);
        std::vector<std::size_t> stack{0};
        seen[0] = 1;
        u[0] = 0.0;
        while (!stack.empty()) {
            std::size_t node = stack.back();
            stack.pop_back();
            for (std::size_t aid : adj[node]) {
                const Arc& a = basis[aid];
                std::size_t other = (node == a.i) ? m + a.j : a.i;
                if (seen[other]) continue;
                seen[other] = 1;
                if (other >= m)
                    v[other - m] = cost[a.i * n + a.j] - u[a.i];
                else
                    u[other] = cost[a.i * n + a.j] - v[a.j];
                stack.push_back(other);
            }
        }
    }

    // Find the unique tree path from source bi to sink bj, alternate signs along
    // the cycle closed by the entering arc, and pivot by the minimum flow.
    void pivot_in(std::size_t bi, std::size_t bj) {
        const std::size_t N = m + n;
        std::vector<std::size_t> parent_arc(N, SIZE_MAX), parent(N, SIZE_MAX);
        std::vector<char> seen(N, 0);
        std::vector<std::size_t> stack{bi};
        seen[bi] = 1;
        while (!stack.empty()) {
            std::size_t node = stack.back();
            stack.pop_back();
            if (node == m + bj) break;
            for (std::size_t aid : adj[node]) {
                const Arc& a = basis[aid];
                std::size_t other = (node == a.i) ? m + a.j : a.i;
                if (seen[other]) continue;
                seen[other] = 1;
                parent[other] = node;
                parent_arc[other] = aid;
                stack.push_back(other);
            }
        }
        // Walk back from sink to source; arcs at odd positions lose flow.
        std::vector<std::size_t> path;
        for (std::size_t node = m + bj; node != bi; node = parent[node])
            path.push_back(parent_arc[node]);
        double theta = std::numeric_limits<double>::infinity();
        std::size_t leave = SIZE_MAX;
        for (std::size_t k = 0; k < path.size(); ++k) {
            if (k % 2 == 0) {  // first arc touching the sink is a "minus" arc
                double f = basis[path[k]].flow;
                if (f < theta) {
                    theta = f;
                    leave = path[k];
                }
            }
        }
        for (std::size_t k = 0; k < path.size(); ++k)
            basis[path[k]].flow += (k % 2 == 0) ? -theta : theta;
        // Replace the leaving arc with the entering one.
        remove_arc(leave);
        add_arc(bi, bj, theta);
    }

    void remove_arc(std::size_t aid) {
        auto detach = [&](std::size_t node) {
            auto& lst = adj[node];
            lst.erase(std::find(lst.begin(), lst.end(), aid));
        };
        detach(basis[aid].i);
        detach(m + basis[aid].j);
        // Swap-with-last to keep arc ids dense.
        std::size_t last = basis.size() - 1;
        if (aid != last) {
            auto relabel = [&](std::size_t node) {
                for (auto& x : adj[node])
                    if (x == last) x = aid;
            };
            relabel(basis[last].i);
            relabel(m + basis[last].j);
            basis[aid] = basis[last];
        }
        basis.pop_back();
    }
};

double w2sq_lp(const EmpiricalMeasure& mu, const EmpiricalMeasure& nu) {
    const std::size_t m = mu.size(), n = nu.size();
    std::vector<double> cost(m * n);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) cost[i * n + j] = sq_dist(mu.point(i), nu.point(j));
    TransportSimplex ts(m, n, cost, mu.weights(), nu.weights());
    return ts.solve();
}

void check_pair(const EmpiricalMeasure& mu, const EmpiricalMeasure& nu, const W2Options& opts) {
    if (mu.dim() != nu.dim()) throw DimensionError("measures of different dimension");
    if (mu.dim() > 1 && mu.size() * nu.size() > opts.pair_cap)
        throw CapacityError("support product " + std::to_string(mu.size() * nu.size()) +
                            " exceeds cap " + std::to_string(opts.pair_cap) +
                            "; subsample the inputs");
}

}  // namespace

double wasserstein2(const EmpiricalMeasure& mu, const EmpiricalMeasure& nu,
                    const W2Options& opts) {
    check_pair(mu, nu, opts);
    double sq = (mu.dim() == 1) ? w2sq_quantile_1d(mu, nu) : w2sq_lp(mu, nu);
    return std::sqrt(std::max(0.0, sq));
}

double wasserstein2_lp(const EmpiricalMeasure& mu, const EmpiricalMeasure& nu,
                       const W2Options& opts) {
    if (mu.dim() != nu.dim()) throw DimensionError("measures of different dimension");
    if (mu.size() * nu.size() > opts.pair_cap) throw CapacityError("support product exceeds cap");
    return std::sqrt(std::max(0.0, w2sq_lp(mu, nu)));
}

double wasserstein2_subsampled(const EmpiricalMeasure& mu, const EmpiricalMeasure& nu,
                               std::size_t max_support, std::uint64_t seed) {
    auto shrink = [&](const EmpiricalMeasure& src, std::uint64_t tag) {
        if (src.size() <= max_support) return src;
        // Uniform with-replacement subsample by weight, then uniform weights.
        rng::Key root = rng::Key(seed).sub(tag);
        std::vector<std::vector<double>> pts;
        pts.reserve(max_support);
        for (std::size_t s = 0; s < max_support; ++s) {
            double u = rng::uniform01(root.sub(s));
            double acc = 0.0;
            std::size_t pick = src.size() - 1;
            for (std::size_t i = 0; i < src.size(); ++i) {
                acc += src.weight(i);
                if (u <= acc) {
                    pick = i;
                    break;
                }
            }
            pts.emplace_back(src.point(pick).begin(), src.point(pick).end());
        }
        return EmpiricalMeasure::from_samples(pts);
    };
    EmpiricalMeasure a = shrink(mu, 1), b = shrink(nu, 2);
    return wasserstein2(a, b);
}

}  // namespace mkv
