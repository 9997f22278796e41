#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "mkv/errors.hpp"

namespace mkv {

// Weighted point cloud in R^n with finite second moment; the single measure
// representation used by every coefficient evaluation in the pipeline.
// Storage is flat (count x dim) and the first/second moments are cached at
// construction, so coefficient evaluations touch O(1) state.
class EmpiricalMeasure {
public:
    EmpiricalMeasure() = default;
    EmpiricalMeasure(const std::vector<std::vector<double>>& points, std::vector<double> weights);

    static EmpiricalMeasure from_samples(const std::vector<std::vector<double>>& samples);
    static EmpiricalMeasure from_samples_1d(const std::vector<double>& samples);
    static EmpiricalMeasure dirac(std::vector<double> point);
    // Uniform cloud over a flat state array (count x dim, row-major).
    static EmpiricalMeasure from_flat(std::vector<double> states, std::size_t dim);

    std::size_t size() const { return weights_.size(); }
    std::size_t dim() const { return dim_; }
    std::span<const double> point(std::size_t i) const {
        return {flat_.data() + i * dim_, dim_};
    }
    double weight(std::size_t i) const { return weights_[i]; }
    const std::vector<double>& weights() const { return weights_; }
    std::vector<std::vector<double>> points() const;

    const std::vector<double>& mean() const { return mean_; }
    double mean1() const { return mean_[0]; }
    double second_moment() const { return second_moment_; }
    double variance1() const;

    nlohmann::json to_json() const;
    static EmpiricalMeasure from_json(const nlohmann::json& j);
    std::string to_csv() const;  // one atom per row, weight in the last column
    static EmpiricalMeasure from_csv(const std::string& text);

private:
    void finalize();  // validates invariants and fills the moment caches

    std::vector<double> flat_;
    std::vector<double> weights_;
    std::size_t dim_ = 0;
    std::vector<double> mean_;
    double second_moment_ = 0.0;
};

struct W2Options {
    // For dim > 1, supports with |mu| * |nu| beyond this require subsampling.
    std::size_t pair_cap = 256 * 256;
};

// Exact 2-Wasserstein distance. dim == 1 uses the quantile coupling on the
// merged CDF grid; dim > 1 solves the discrete transport LP exactly.
double wasserstein2(const EmpiricalMeasure& mu, const EmpiricalMeasure& nu,
                    const W2Options& opts = {});

// Exact LP route regardless of dimension (test oracle for the 1-D fast path).
double wasserstein2_lp(const EmpiricalMeasure& mu, const EmpiricalMeasure& nu,
                       const W2Options& opts = {});

// Uniform subsampling to at most max_support atoms per side, then exact W2.
double wasserstein2_subsampled(const EmpiricalMeasure& mu, const EmpiricalMeasure& nu,
                               std::size_t max_support, std::uint64_t seed);

// ||pi||_2 = W2(pi, delta_0), the square root of the second moment.
double moment_norm(const EmpiricalMeasure& mu);

}  // namespace mkv
