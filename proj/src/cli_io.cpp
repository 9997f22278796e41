#include "mkv/cli_io.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "mkv/parallel.hpp"
#include "mkv/rng.hpp"

namespace mkv {

namespace {

using nlohmann::json;

#ifndef MKV_BUILD_ID
#define MKV_BUILD_ID "dev"
#endif

const json* find_ptr(const json& j, const std::string& key) {
    auto it = j.find(key);
    return it == j.end() ? nullptr : &*it;
}

template <class T>
T require(const json& j, const std::string& pointer, const std::string& key) {
    const json* p = find_ptr(j, key);
    if (!p) throw ConfigError(pointer + "/" + key, "missing required key");
    try {
        return p->get<T>();
    } catch (const json::exception& e) {
        throw ConfigError(pointer + "/" + key, std::string("bad type: ") + e.what());
    }
}

template <class T>
T optional_or(const json& j, const std::string& pointer, const std::string& key, T fallback) {
    const json* p = find_ptr(j, key);
    if (!p) return fallback;
    try {
        return p->get<T>();
    } catch (const json::exception& e) {
        throw ConfigError(pointer + "/" + key, std::string("bad type: ") + e.what());
    }
}

double elapsed_ms(std::chrono::steady_clock::time_point from) {
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - from)
        .count();
}

}  // namespace

std::string fnv1a_hex(const std::string& bytes) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    std::ostringstream os;
    os << std::hex << h;
    return os.str();
}

void write_file_atomic(const std::string& path, const std::string& contents) {
    namespace fs = std::filesystem;
    fs::path target(path);
    if (target.has_parent_path()) fs::create_directories(target.parent_path());
    fs::path tmp = target;
    tmp += ".tmp";
    {
        std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
        os << contents;
    }
    fs::rename(tmp, target);
}

ExperimentConfig ExperimentConfig::load(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("/", "cannot open config file " + path);
    json j;
    try {
        is >> j;
    } catch (const json::exception& e) {
        throw ConfigError("/", std::string("invalid JSON: ") + e.what());
    }
    return from_json(j);
}

ExperimentConfig ExperimentConfig::from_json(const json& j) {
    ExperimentConfig c;
    c.raw = j;

    // problem: either a registry name or {name, actions?, horizon?, lq?}
    const json* prob = find_ptr(j, "problem");
    if (!prob) throw ConfigError("/problem", "missing required key");
    if (prob->is_string()) {
        c.problem = prob->get<std::string>();
    } else if (prob->is_object()) {
        c.problem = require<std::string>(*prob, "/problem", "name");
        if (const json* a = find_ptr(*prob, "actions"))
            c.actions_override = a->get<std::vector<std::vector<double>>>();
        if (const json* h = find_ptr(*prob, "horizon")) c.horizon_override = h->get<double>();
        if (const json* lq = find_ptr(*prob, "lq")) {
            LqParams p;
            p.kappa = optional_or(*lq, "/problem/lq", "kappa", p.kappa);
            p.q = optional_or(*lq, "/problem/lq", "q", p.q);
            p.eps = optional_or(*lq, "/problem/lq", "eps", p.eps);
            p.c = optional_or(*lq, "/problem/lq", "c", p.c);
            p.sigma = optional_or(*lq, "/problem/lq", "sigma", p.sigma);
            p.g0 = optional_or(*lq, "/problem/lq", "g0", p.g0);
            c.lq_override = p;
        }
    } else {
        throw ConfigError("/problem", "must be a name or an object");
    }
    // Fail fast on unknown problems and dimension mismatches.
    const BenchmarkProblem& base = find_problem(c.problem);
    if (prob->is_object()) {
        int dim = optional_or(*prob, "/problem", "dimension", base.coefficients.state_dim);
        if (dim != base.coefficients.state_dim)
            throw ConfigError("/problem/dimension", "registry problem is " +
                                                        std::to_string(base.coefficients.state_dim) +
                                                        "-dimensional");
    }

    const json* instp = find_ptr(j, "instance");
    if (!instp) throw ConfigError("/instance", "missing required key");
    const json& inst = *instp;
    c.t = require<double>(inst, "/instance", "t");
    c.x0 = require<std::vector<double>>(inst, "/instance", "x");
    const json* pi = find_ptr(inst, "pi");
    if (!pi) throw ConfigError("/instance/pi", "missing required key");
    c.pi_spec = *pi;

    const json* cat = find_ptr(j, "catalog");
    if (!cat) throw ConfigError("/catalog", "missing required key");
    c.catalog_k = require<int>(*cat, "/catalog", "k");
    c.catalog_L = require<int>(*cat, "/catalog", "L");
    c.catalog_cap = optional_or<std::size_t>(*cat, "/catalog", "cap", 4096);
    if (c.catalog_k < 1) throw ConfigError("/catalog/k", "must be >= 1");
    if (c.catalog_L < 1) throw ConfigError("/catalog/L", "must be >= 1");

    const json* sim = find_ptr(j, "sim");
    if (!sim) throw ConfigError("/sim", "missing required key");
    c.n_steps = require<int>(*sim, "/sim", "n_steps");
    c.n_particles = require<std::size_t>(*sim, "/sim", "n_particles");
    c.m_inner = optional_or<std::size_t>(*sim, "/sim", "m_inner", c.n_particles);
    if (!find_ptr(*sim, "seed")) throw ConfigError("/sim/seed", "seeds must be explicit");
    c.seed = require<std::uint64_t>(*sim, "/sim", "seed");
    c.repeats = optional_or<int>(*sim, "/sim", "repeats", 8);
    if (c.n_steps < 1) throw ConfigError("/sim/n_steps", "must be >= 1");
    if (c.n_particles < 1) throw ConfigError("/sim/n_particles", "must be >= 1");
    if (c.m_inner < 1) throw ConfigError("/sim/m_inner", "must be >= 1");
    if (c.repeats < 1) throw ConfigError("/sim/repeats", "must be >= 1");

    const json* rand = find_ptr(j, "randomization");
    if (rand) {
        if (const json* r = find_ptr(*rand, "rates"))
            c.rates = r->get<std::vector<double>>();
        c.uniform_rate = optional_or(*rand, "/randomization", "uniform_rate", 0.0);
        if (c.rates.empty() && !(c.uniform_rate > 0.0))
            throw ConfigError("/randomization", "need rates[] or uniform_rate > 0");
        c.k_max = optional_or(*rand, "/randomization", "k_max", 3);
        if (c.k_max < 0) throw ConfigError("/randomization/k_max", "must be >= 0");
        auto bounds = optional_or<std::vector<double>>(*rand, "/randomization", "nu_bounds",
                                                       {0.1, 50.0});
        if (bounds.size() != 2 || !(bounds[0] > 0.0) || !(bounds[0] <= bounds[1]))
            throw ConfigError("/randomization/nu_bounds", "need 0 < lo <= hi");
        c.nu_lo = bounds[0];
        c.nu_hi = bounds[1];
        c.n_schedule = optional_or<std::vector<double>>(*rand, "/randomization", "n_schedule",
                                                        bsde::default_penalty_schedule());
        c.abar = optional_or<std::size_t>(*rand, "/randomization", "abar", 0);
        c.tree_cap = optional_or<std::size_t>(*rand, "/randomization", "tree_cap", 2'000'000);
    }
    c.control_id = optional_or<std::size_t>(j, "", "control_id", 0);
    c.output_dir = optional_or<std::string>(j, "", "output_dir", "out");
    if (const json* reg = find_ptr(j, "regression")) c.regression = reg->get<std::string>();
    return c;
}

std::string ExperimentConfig::canonical() const { return raw.dump(); }

std::string ExperimentConfig::hash() const { return fnv1a_hex(canonical()); }

BenchmarkProblem ExperimentConfig::make_problem() const {
    const BenchmarkProblem& base = find_problem(problem);
    double T = horizon_override.value_or(base.horizon);
    BenchmarkProblem p = make_registry_problem(problem, T, lq_override);
    if (actions_override) {
        p.actions.actions = *actions_override;
        p.actions.validate();
    }
    if (t < 0.0 || t >= p.horizon) throw ConfigError("/instance/t", "t must lie in [0, T)");
    return p;
}

ControlCatalog ExperimentConfig::make_catalog(const BenchmarkProblem& p) const {
    return enumerate_step_controls(p.actions, p.horizon, catalog_k, catalog_L, catalog_cap);
}

MarkIntensity ExperimentConfig::make_intensity(const ControlCatalog& catalog) const {
    if (!rates.empty()) {
        if (rates.size() != catalog.size())
            throw ConfigError("/randomization/rates", "need one rate per catalog control");
        MarkIntensity m;
        for (std::size_t i = 0; i < rates.size(); ++i) {
            m.marks.push_back(i);
            m.rates.push_back(rates[i]);
        }
        m.validate(catalog.size());
        return m;
    }
    if (!(uniform_rate > 0.0)) throw ConfigError("/randomization", "no intensity configured");
    return MarkIntensity::uniform(catalog.size(), uniform_rate);
}

XiSampler ExperimentConfig::make_xi() const {
    const std::string type = require<std::string>(pi_spec, "/instance/pi", "type");
    if (type == "atoms") {
        auto pts = require<std::vector<std::vector<double>>>(pi_spec, "/instance/pi", "points");
        auto wts = require<std::vector<double>>(pi_spec, "/instance/pi", "weights");
        return XiSampler::atoms(EmpiricalMeasure(std::move(pts), std::move(wts)));
    }
    if (type == "gaussian") {
        auto mean = require<std::vector<double>>(pi_spec, "/instance/pi", "mean");
        auto sd = require<std::vector<double>>(pi_spec, "/instance/pi", "std");
        return XiSampler::gaussian(std::move(mean), std::move(sd));
    }
    if (type == "constant") {
        auto pt = require<std::vector<double>>(pi_spec, "/instance/pi", "point");
        return XiSampler::constant(std::move(pt));
    }
    throw ConfigError("/instance/pi/type", "unknown kind '" + type + "'");
}

SimParams ExperimentConfig::sim_params(const BenchmarkProblem& p,
                                       std::uint64_t seed_override) const {
    SimParams s;
    s.grid = TimeGrid{t, p.horizon, n_steps};
    s.n_xi = n_particles;
    s.n_x = n_particles;
    s.seed = seed_override;
    return s;
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

namespace {

struct RouteStat {
    double mean = 0.0;
    double ci = 0.0;  // std deviation across seed replicates
};

RouteStat across_seeds(const std::vector<double>& values) {
    RouteStat s;
    for (double v : values) s.mean += v;
    s.mean /= static_cast<double>(values.size());
    double var = 0.0;
    for (double v : values) var += (v - s.mean) * (v - s.mean);
    s.ci = values.size() > 1 ? std::sqrt(var / (static_cast<double>(values.size()) - 1.0)) : 0.0;
    return s;
}

json route_json(const RouteStat& s) { return json{{"value", s.mean}, {"ci", s.ci}}; }

// Repeat an estimator over R derived seeds; deterministic and parallel-safe.
RouteStat repeat_over_seeds(int repeats, std::uint64_t seed,
                            const std::function<double(std::uint64_t)>& fn) {
    std::vector<double> vals(repeats);
    parallel_for(repeats, [&](std::size_t r) { vals[r] = fn(rng::Key(seed).sub(r).v); });
    return across_seeds(vals);
}

json results_header(const std::string& command, const ExperimentConfig& cfg) {
    return json{{"command", command},
                {"problem", cfg.problem},
                {"config_hash", cfg.hash()},
                {"build", MKV_BUILD_ID},
                {"seed", cfg.seed}};
}

std::string csv_header(const ExperimentConfig& cfg) {
    return "# seed=" + std::to_string(cfg.seed) + " config_hash=" + cfg.hash() + "\n";
}

std::vector<Atom1d> atoms_from_config(const ExperimentConfig& cfg) {
    if (cfg.pi_spec.value("type", "") != "atoms")
        throw UnsupportedInput("this pipeline needs a finitely-valued xi (pi type 'atoms')");
    auto pts = cfg.pi_spec.at("points").get<std::vector<std::vector<double>>>();
    auto wts = cfg.pi_spec.at("weights").get<std::vector<double>>();
    std::vector<Atom1d> atoms;
    for (std::size_t i = 0; i < pts.size(); ++i) {
        if (pts[i].size() != 1) throw UnsupportedInput("value-mkv is scalar only");
        atoms.push_back({pts[i][0], wts[i]});
    }
    return atoms;
}

json run_value_direct(const ExperimentConfig& cfg, RunRecord& rec) {
    BenchmarkProblem prob = cfg.make_problem();
    ControlCatalog catalog = cfg.make_catalog(prob);
    XiSampler xi = cfg.make_xi();

    std::vector<double> vals(cfg.repeats);
    std::vector<std::size_t> arg(cfg.repeats);
    std::vector<DirectValue> dvs(cfg.repeats);
    parallel_for(cfg.repeats, [&](std::size_t r) {
        SimParams sp = cfg.sim_params(prob, rng::Key(cfg.seed).sub(r).v);
        dvs[r] = value_direct(prob.coefficients, prob.actions, catalog, sp, xi, cfg.x0);
        vals[r] = dvs[r].value;
        arg[r] = dvs[r].argmax;
    });
    RouteStat stat = across_seeds(vals);

    std::ostringstream table;
    table << csv_header(cfg) << "control_id,value,std_error\n";
    table.precision(17);
    for (const auto& row : dvs[0].table)
        table << row.control_id << ',' << row.value << ',' << row.std_error << '\n';
    std::string path = cfg.output_dir + "/value_direct.csv";
    write_file_atomic(path, table.str());
    rec.files_written.push_back(path);

    return json{{"value_direct", route_json(stat)},
                {"argmax", arg[0]},
                {"argmax_stable", std::equal(arg.begin() + 1, arg.end(), arg.begin())}};
}

json run_value_mkv(const ExperimentConfig& cfg, RunRecord&) {
    BenchmarkProblem prob = cfg.make_problem();
    ControlCatalog catalog = cfg.make_catalog(prob);
    auto atoms = atoms_from_config(cfg);
    RouteStat stat = repeat_over_seeds(cfg.repeats, cfg.seed, [&](std::uint64_t s) {
        SimParams sp = cfg.sim_params(prob, s);
        return value_mkv(prob.coefficients, prob.actions, catalog, sp, atoms);
    });
    return json{{"value_mkv", route_json(stat)}};
}

json run_value_randomized(const ExperimentConfig& cfg, RunRecord& rec) {
    BenchmarkProblem prob = cfg.make_problem();
    ControlCatalog catalog = cfg.make_catalog(prob);
    MarkIntensity lambda = cfg.make_intensity(catalog);
    XiSampler xi = cfg.make_xi();

    RandomizedValue first;
    RouteStat stat = repeat_over_seeds(cfg.repeats, cfg.seed, [&](std::uint64_t s) {
        RandomizedValueConfig rc;
        rc.sim = cfg.sim_params(prob, s);
        rc.sim.n_xi = rc.sim.n_x = cfg.m_inner;
        rc.k_max = cfg.k_max;
        rc.nu_lo = cfg.nu_lo;
        rc.nu_hi = cfg.nu_hi;
        rc.node_cap = cfg.tree_cap;
        rc.abar = cfg.abar;
        RandomizedValue rv =
            value_randomized(prob.coefficients, prob.actions, catalog, lambda, rc, xi, cfg.x0);
        if (s == rng::Key(cfg.seed).sub(0).v) first = rv;
        return rv.value;
    });

    json table = json::array();
    for (const auto& e : first.nu_table)
        table.push_back(json{{"history", e.history},
                             {"interval", e.interval},
                             {"mark", e.mark},
                             {"nu", e.nu}});
    json nu_doc = {{"nu_bounds", {cfg.nu_lo, cfg.nu_hi}},
                   {"tree_nodes", first.tree_nodes},
                   {"truncated", first.table_truncated},
                   {"entries", table}};
    std::string path = cfg.output_dir + "/nu_table.json";
    write_file_atomic(path, nu_doc.dump(2) + "\n");
    rec.files_written.push_back(path);
    return json{{"value_randomized", route_json(stat)}, {"tree_nodes", first.tree_nodes}};
}

json run_bsde(const ExperimentConfig& cfg, RunRecord& rec) {
    BenchmarkProblem prob = cfg.make_problem();
    ControlCatalog catalog = cfg.make_catalog(prob);
    MarkIntensity lambda = cfg.make_intensity(catalog);
    XiSampler xi = cfg.make_xi();

    SimParams sp = cfg.sim_params(prob, cfg.seed);
    sp.n_xi = sp.n_x = cfg.m_inner;
    bsde::JumpLattice lattice(prob.coefficients, prob.actions, catalog, lambda,
                              bsde::RootControl{true, cfg.abar}, sp, cfg.k_max, cfg.tree_cap, xi,
                              cfg.x0);
    bsde::MinimalSolution ms =
        bsde::minimal_solution(lattice, lambda, cfg.n_schedule, 2e-3);
    double max_dual = 0.0;
    for (double n : cfg.n_schedule)
        max_dual = std::max(max_dual, bsde::dual_check(lattice, lambda, n).rel_discrepancy);

    bsde::PenalizedSolution last = bsde::solve_penalized(lattice, lambda, cfg.n_schedule.back());
    std::string trace_path = cfg.output_dir + "/bsde_trace.csv";
    write_file_atomic(trace_path, csv_header(cfg) + bsde::penalized_trace_csv(last, lattice));
    rec.files_written.push_back(trace_path);

    std::ostringstream vn;
    vn.precision(17);
    vn << csv_header(cfg) << "n,Y_root\n";
    for (auto [n, y] : ms.trace) vn << n << ',' << y << '\n';
    std::string vn_path = cfg.output_dir + "/bsde_value_vs_n.csv";
    write_file_atomic(vn_path, vn.str());
    rec.files_written.push_back(vn_path);

    json trace = json::array();
    for (auto [n, y] : ms.trace) trace.push_back(json{{"n", n}, {"Y_root", y}});
    json conv = {{"trace", trace},
                 {"converged", ms.converged},
                 {"max_U_plus", ms.max_U_plus_final},
                 {"max_dual_rel_discrepancy", max_dual}};
    std::string conv_path = cfg.output_dir + "/bsde_convergence.json";
    write_file_atomic(conv_path, conv.dump(2) + "\n");
    rec.files_written.push_back(conv_path);
    return json{{"bsde", {{"Y_root", ms.y_root},
                          {"converged", ms.converged},
                          {"max_U_plus", ms.max_U_plus_final},
                          {"max_dual_rel_discrepancy", max_dual}}}};
}

json run_simulate(const ExperimentConfig& cfg, RunRecord& rec) {
    BenchmarkProblem prob = cfg.make_problem();
    ControlCatalog catalog = cfg.make_catalog(prob);
    if (cfg.control_id >= catalog.size())
        throw ConfigError("/control_id", "control_id outside the catalog");
    XiSampler xi = cfg.make_xi();
    SimParams sp = cfg.sim_params(prob, cfg.seed);
    StepControlPath path(catalog.controls[cfg.control_id]);
    auto traj = simulate_coupled(prob.coefficients, prob.actions, path, sp, xi, cfg.x0);
    std::string path_csv = cfg.output_dir + "/trajectory.csv";
    dump_trajectory_csv(traj, prob.coefficients.state_dim, path_csv, cfg.seed, cfg.hash());
    rec.files_written.push_back(path_csv);
    ValueEstimate g = gain_estimate(prob.coefficients, prob.actions, path, sp, xi, cfg.x0);
    return json{{"gain", {{"value", g.mean}, {"std_error", g.std_error}}},
                {"steps", sp.grid.n_steps}};
}

json run_verify(const ExperimentConfig& cfg, RunRecord& rec);

json run_bench(const ExperimentConfig& cfg, RunRecord&) {
    BenchmarkProblem prob = cfg.make_problem();
    ControlCatalog catalog = cfg.make_catalog(prob);
    XiSampler xi = cfg.make_xi();
    SimParams sp = cfg.sim_params(prob, cfg.seed);
    auto t0 = std::chrono::steady_clock::now();
    StepControlPath path(catalog.controls[0]);
    gain_estimate(prob.coefficients, prob.actions, path, sp, xi, cfg.x0);
    double sim_ms = elapsed_ms(t0);
    double steps = static_cast<double>(sp.grid.n_steps) *
                   static_cast<double>(sp.n_xi + sp.n_x);
    return json{{"bench",
                 {{"gain_estimate_ms", sim_ms},
                  {"particle_steps_per_s", steps / (sim_ms / 1000.0)}}}};
}

}  // namespace

RunRecord run_command(const std::string& command, const ExperimentConfig& cfg) {
    RunRecord rec;
    auto t0 = std::chrono::steady_clock::now();
    json results;
    if (command == "simulate")
        results = run_simulate(cfg, rec);
    else if (command == "value-direct")
        results = run_value_direct(cfg, rec);
    else if (command == "value-mkv")
        results = run_value_mkv(cfg, rec);
    else if (command == "value-randomized")
        results = run_value_randomized(cfg, rec);
    else if (command == "bsde")
        results = run_bsde(cfg, rec);
    else if (command == "verify")
        results = run_verify(cfg, rec);
    else if (command == "bench")
        results = run_bench(cfg, rec);
    else
        throw ConfigError("/command", "unknown command '" + command + "'");

    rec.summary = results_header(command, cfg);
    rec.summary["results"] = results;
    rec.summary["wall_ms"] = elapsed_ms(t0);
    std::string path = cfg.output_dir + "/results.json";
    write_file_atomic(path, rec.summary.dump(2) + "\n");
    rec.files_written.push_back(path);
    return rec;
}

// ---------------------------------------------------------------------------
// verify: route values, cross-route residuals, and conservation checks for the
// configured instance; compared against a committed regression file if given.
// ---------------------------------------------------------------------------

namespace {

json residual_row(const std::string& name, double value, double tolerance) {
    return json{{"name", name},
                {"value", value},
                {"tolerance", tolerance},
                {"pass", std::abs(value) <= tolerance}};
}

json run_verify(const ExperimentConfig& cfg, RunRecord& rec) {
    BenchmarkProblem prob = cfg.make_problem();
    ControlCatalog catalog = cfg.make_catalog(prob);
    MarkIntensity lambda = cfg.make_intensity(catalog);
    XiSampler xi = cfg.make_xi();

    // Route values over R seeds.
    std::vector<double> v_direct(cfg.repeats), v_rand(cfg.repeats), v_bsde(cfg.repeats);
    double max_dual = 0.0, max_uplus = 0.0;
    bool monotone_ok = true;
    for (int r = 0; r < cfg.repeats; ++r) {
        std::uint64_t s = rng::Key(cfg.seed).sub(r).v;
        SimParams sp = cfg.sim_params(prob, s);
        v_direct[r] = value_direct(prob.coefficients, prob.actions, catalog, sp, xi, cfg.x0).value;

        SimParams si = sp;
        si.n_xi = si.n_x = cfg.m_inner;
        bsde::JumpLattice lattice(prob.coefficients, prob.actions, catalog, lambda,
                                  bsde::RootControl{true, cfg.abar}, si, cfg.k_max, cfg.tree_cap,
                                  xi, cfg.x0);
        v_rand[r] = bsde::bang_bang_dp(lattice, lambda, cfg.nu_lo, cfg.nu_hi).root;
        try {
            bsde::MinimalSolution ms = bsde::minimal_solution(lattice, lambda, cfg.n_schedule, 2e-3);
            v_bsde[r] = ms.y_root;
            max_uplus = std::max(max_uplus, ms.max_U_plus_final);
        } catch (const SchemeInconsistency&) {
            monotone_ok = false;
            v_bsde[r] = std::nan("");
        }
        for (double n : cfg.n_schedule)
            max_dual = std::max(max_dual, bsde::dual_check(lattice, lambda, n).rel_discrepancy);
    }
    RouteStat sd = across_seeds(v_direct), sr = across_seeds(v_rand), sb = across_seeds(v_bsde);

    // Flow property at quarter points.
    double flow_max = 0.0;
    {
        SimParams sp = cfg.sim_params(prob, cfg.seed);
        sp.n_xi = sp.n_x = 64;
        StepControlPath path(catalog.controls[0]);
        for (double frac : {0.25, 0.5, 0.75}) {
            int node = static_cast<int>(std::lround(frac * sp.grid.n_steps));
            node = std::min(std::max(node, 1), sp.grid.n_steps - 1);
            double s = sp.grid.node(node);
            FlowReport fr =
                flow_check(prob.coefficients, prob.actions, path, sp, xi, cfg.x0, s);
            flow_max = std::max({flow_max, fr.max_diff_xi, fr.max_diff_x});
        }
    }

    // Girsanov: nu == 1 is exactly 1; a bounded table has MC mean within 3 se.
    double kappa_dev = 0.0, kappa_se = 1.0;
    {
        TimeGrid grid{0.0, prob.horizon, cfg.n_steps};
        IntensityControl one = IntensityControl::constant(1.0, grid);
        PoissonPath p0 = sample_poisson_path(lambda, prob.horizon, cfg.k_max, cfg.seed);
        if (std::abs(girsanov_weight(p0, one, lambda, prob.horizon) - 1.0) > 0.0)
            kappa_dev = 1e9;  // nu == 1 must give kappa == 1 exactly
        IntensityControl mixed;
        mixed.lo = 0.5;
        mixed.hi = 2.0;
        mixed.grid = grid;
        mixed.value = [](int interval, std::span<const std::pair<int, std::size_t>> hist,
                         std::size_t mark) {
            return (hist.size() + interval + mark) % 2 == 0 ? 0.5 : 2.0;
        };
        const int n_mc = 20000;
        std::vector<double> k(n_mc);
        parallel_for(n_mc, [&](std::size_t i) {
            PoissonPath p =
                sample_poisson_path(lambda, prob.horizon, 1000, rng::Key(cfg.seed).sub(i).v);
            k[i] = girsanov_weight(p, mixed, lambda, prob.horizon);
        });
        RouteStat ks = across_seeds(k);
        kappa_dev = std::max(kappa_dev, std::abs(ks.mean - 1.0));
        kappa_se = ks.ci / std::sqrt(static_cast<double>(n_mc));
    }

    const double scale = std::max(1.0, std::abs(sd.mean));
    auto comb = [](const RouteStat& a, const RouteStat& b) {
        return std::sqrt(a.ci * a.ci + b.ci * b.ci);
    };
    json residuals = json::array();
    residuals.push_back(residual_row("equivalence |Vd - Vr|", sd.mean - sr.mean,
                                     std::max(0.02 * scale, 2.0 * comb(sd, sr))));
    residuals.push_back(residual_row("feynman_kac |Y - Vd|", sb.mean - sd.mean,
                                     std::max(0.02 * scale, 2.0 * comb(sd, sb))));
    residuals.push_back(residual_row("dual max rel discrepancy", max_dual, 1e-6));
    residuals.push_back(residual_row("flow max discrepancy", flow_max, 1e-10));
    residuals.push_back(residual_row("girsanov |E kappa - 1|", kappa_dev, 3.0 * kappa_se));
    residuals.push_back(residual_row("bsde monotone", monotone_ok ? 0.0 : 1.0, 0.5));

    bool all_pass = true;
    for (const auto& r : residuals) all_pass = all_pass && r.at("pass").get<bool>();

    json out = {{"routes",
                 {{"value_direct", route_json(sd)},
                  {"value_randomized", route_json(sr)},
                  {"bsde_Y", route_json(sb)}}},
                {"residuals", residuals},
                {"max_U_plus", max_uplus},
                {"all_pass", all_pass}};

    // Regression comparison against a committed reference, when configured.
    if (cfg.regression) {
        std::ifstream is(*cfg.regression);
        if (!is) throw ConfigError("/regression", "cannot open " + *cfg.regression);
        json ref;
        is >> ref;
        json deltas = json::array();
        bool reg_pass = true;
        for (const auto& [route, stat] : out.at("routes").items()) {
            if (!ref.contains("routes") || !ref.at("routes").contains(route)) continue;
            double here = stat.at("value").get<double>();
            double there = ref.at("routes").at(route).at("value").get<double>();
            double tol = ref.value("tolerance", 0.02) * std::max(1.0, std::abs(there));
            bool ok = std::abs(here - there) <= tol;
            reg_pass = reg_pass && ok;
            deltas.push_back(json{{"route", route},
                                  {"delta", here - there},
                                  {"tolerance", tol},
                                  {"pass", ok}});
        }
        out["regression"] = {{"file", *cfg.regression}, {"deltas", deltas}, {"pass", reg_pass}};
        out["all_pass"] = all_pass && reg_pass;
    }

    std::string path = cfg.output_dir + "/verify_residuals.json";
    write_file_atomic(path, out.dump(2) + "\n");
    rec.files_written.push_back(path);

    std::ostringstream rcsv;
    rcsv.precision(17);
    rcsv << csv_header(cfg) << "name,value,tolerance,pass\n";
    for (const auto& r : residuals)
        rcsv << r.at("name").get<std::string>() << ',' << r.at("value").get<double>() << ','
             << r.at("tolerance").get<double>() << ',' << (r.at("pass").get<bool>() ? 1 : 0)
             << '\n';
    std::string rpath = cfg.output_dir + "/verify_residuals.csv";
    write_file_atomic(rpath, rcsv.str());
    rec.files_written.push_back(rpath);
    return out;
}

}  // namespace

json compare_runs(const json& a, const json& b) {
    if (a.value("problem", "") != b.value("problem", ""))
        throw ComparisonError("records compare different problems");
    json diff = json::array();
    if (!a.contains("results") || !b.contains("results")) return diff;
    const json& ra = a.at("results");
    const json& rb = b.at("results");
    for (const auto& [key, val] : ra.items()) {
        if (!rb.contains(key) || !val.is_object() || !val.contains("value")) continue;
        const json& other = rb.at(key);
        if (!other.contains("value")) continue;
        double da = val.at("value").get<double>();
        double db = other.at("value").get<double>();
        double ci = std::sqrt(std::pow(val.value("ci", 0.0), 2) +
                              std::pow(other.value("ci", 0.0), 2));
        diff.push_back(json{{"route", key},
                            {"delta", db - da},
                            {"combined_ci", ci},
                            {"within_2ci", std::abs(db - da) <= 2.0 * ci || ci == 0.0}});
    }
    return diff;
}

}  // namespace mkv
