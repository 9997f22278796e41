#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "mkv/bsde.hpp"
#include "mkv/control_opt.hpp"
#include "mkv/problem.hpp"
#include "mkv/randomized.hpp"

namespace mkv {

// Parsed experiment configuration. All counts >= 1 and seeds explicit; the
// referenced problem must exist in the registry.
struct ExperimentConfig {
    nlohmann::json raw;

    std::string problem;
    std::optional<LqParams> lq_override;
    std::optional<std::vector<std::vector<double>>> actions_override;
    std::optional<double> horizon_override;

    double t = 0.0;
    std::vector<double> x0;
    nlohmann::json pi_spec;

    int catalog_k = 1;
    int catalog_L = 1;
    std::size_t catalog_cap = 4096;

    int n_steps = 1;
    std::size_t n_particles = 2;
    std::size_t m_inner = 2;
    std::uint64_t seed = 0;
    int repeats = 1;

    std::vector<double> rates;  // empty when uniform_rate is used
    double uniform_rate = 0.0;
    int k_max = 3;
    double nu_lo = 0.1, nu_hi = 50.0;
    std::vector<double> n_schedule;
    std::size_t abar = 0;
    std::size_t tree_cap = 2'000'000;
    std::size_t control_id = 0;  // for the simulate command

    std::string output_dir = "out";
    std::optional<std::string> regression;

    static ExperimentConfig load(const std::string& path);
    static ExperimentConfig from_json(const nlohmann::json& j);

    std::string canonical() const;  // byte-stable serialization
    std::string hash() const;       // FNV-1a 64 of the canonical form, hex

    // Assembled runtime objects.
    BenchmarkProblem make_problem() const;
    ControlCatalog make_catalog(const BenchmarkProblem&) const;
    MarkIntensity make_intensity(const ControlCatalog&) const;
    XiSampler make_xi() const;
    SimParams sim_params(const BenchmarkProblem&, std::uint64_t seed_override) const;
};

struct RunRecord {
    nlohmann::json summary;  // includes config_hash, build id, per-route results
    std::vector<std::string> files_written;
};

// Executes one CLI pipeline; writes results.json plus CSV tables into the
// config's output directory (atomically). Throws mkv::Error subclasses.
RunRecord run_command(const std::string& command, const ExperimentConfig& config);

// Per-route value deltas between two results.json payloads; ComparisonError
// if the problems differ.
nlohmann::json compare_runs(const nlohmann::json& a, const nlohmann::json& b);

std::string fnv1a_hex(const std::string& bytes);
void write_file_atomic(const std::string& path, const std::string& contents);

}  // namespace mkv
