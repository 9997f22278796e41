// Acceptance suite: one criterion per invocation (argv[1] in 1..11, or "all").
// Each criterion prints a single [PASS]/[FAIL] line with its measured numbers;
// the process exits nonzero on failure.

#include <cmath>
#include <cstdio>
#include <cstring>
#include <string>
#include <vector>

#include "mkv/bsde.hpp"
#include "mkv/cli_io.hpp"
#include "mkv/control_opt.hpp"
#include "mkv/parallel.hpp"
#include "mkv/problem.hpp"
#include "mkv/randomized.hpp"
#include "mkv/rng.hpp"

using namespace mkv;

namespace {

constexpr std::uint64_t kSeed = 20260809;

struct Stat {
    double mean = 0.0;
    double sd = 0.0;
};

Stat stat_of(const std::vector<double>& v) {
    Stat s;
    for (double x : v) s.mean += x;
    s.mean /= static_cast<double>(v.size());
    double var = 0.0;
    for (double x : v) var += (x - s.mean) * (x - s.mean);
    s.sd = v.size() > 1 ? std::sqrt(var / (static_cast<double>(v.size()) - 1.0)) : 0.0;
    return s;
}

double comb(const Stat& a, const Stat& b) { return std::sqrt(a.sd * a.sd + b.sd * b.sd); }

bool report(int crit, const char* name, bool pass, const std::string& detail) {
    std::printf("[%s] criterion %d (%s): %s\n", pass ? "PASS" : "FAIL", crit, name,
                detail.c_str());
    std::fflush(stdout);
    return pass;
}

// The shipped two-action-toy instance: t = 0.25, x = 0.5, pi = {0, 0.6} w 1/2,
// k = 2 intervals, L = 1, dt = T/20, K_max = 3, lambda uniform, nu in [0.1, 50].
struct ToyInstance {
    BenchmarkProblem prob = find_problem("two-action-toy");
    ControlCatalog catalog = enumerate_step_controls(prob.actions, prob.horizon, 2, 1);
    MarkIntensity lambda = MarkIntensity::uniform(4, 0.0625);
    XiSampler xi = XiSampler::atoms(EmpiricalMeasure({{0.0}, {0.6}}, {0.5, 0.5}));
    std::vector<double> x0{0.5};
    double t = 0.25;
    int n_steps = 15;  // dt = T/20 on [0.25, 1]
    int k_max = 3;
    double nu_lo = 0.1, nu_hi = 50.0;

    SimParams sim(std::size_t particles, std::uint64_t seed) const {
        SimParams sp;
        sp.grid = TimeGrid{t, prob.horizon, n_steps};
        sp.n_xi = sp.n_x = particles;
        sp.seed = seed;
        return sp;
    }
    bsde::JumpLattice lattice(std::size_t m_inner, std::uint64_t seed,
                              bsde::RootControl root = {true, 0}) const {
        return bsde::JumpLattice(prob.coefficients, prob.actions, catalog, lambda, root,
                                 sim(m_inner, seed), k_max, 2'000'000, xi, x0);
    }
};

// ---------------------------------------------------------------------------

bool criterion_equivalence() {
    ToyInstance toy;
    const int R = 8;
    const std::size_t N = 2000;
    std::vector<double> vd(R), vr(R);
    for (int r = 0; r < R; ++r) {
        std::uint64_t seed = rng::Key(kSeed).sub(r).v;
        vd[r] = value_direct(toy.prob.coefficients, toy.prob.actions, toy.catalog,
                             toy.sim(N, seed), toy.xi, toy.x0)
                    .value;
        auto lat = toy.lattice(N, seed);
        vr[r] = bsde::bang_bang_dp(lat, toy.lambda, toy.nu_lo, toy.nu_hi).root;
    }
    Stat sd = stat_of(vd), sr = stat_of(vr);
    double tol = std::max(0.02 * std::abs(sd.mean), 2.0 * comb(sd, sr));
    double gap = std::abs(sd.mean - sr.mean);
    char buf[256];
    std::snprintf(buf, sizeof buf, "|V_direct - V_randomized| = %.5f vs tol %.5f (V = %.5f)",
                  gap, tol, sd.mean);
    return report(1, "equivalence of direct and randomized values", gap <= tol, buf);
}

bool criterion_feynman_kac() {
    ToyInstance toy;
    const int R = 8;
    const std::size_t N = 2000;
    std::vector<double> vd(R), yb(R);
    double max_uplus = 0.0;
    bool monotone = true;
    std::string mono_msg = "yes";
    for (int r = 0; r < R; ++r) {
        std::uint64_t seed = rng::Key(kSeed).sub(100 + r).v;
        vd[r] = value_direct(toy.prob.coefficients, toy.prob.actions, toy.catalog,
                             toy.sim(N, seed), toy.xi, toy.x0)
                    .value;
        auto lat = toy.lattice(N, seed);
        try {
            // tolerance 1e-9 runs the full schedule up to n = 256
            auto ms = bsde::minimal_solution(lat, toy.lambda, bsde::default_penalty_schedule(),
                                             1e-9);
            yb[r] = ms.y_root;
            max_uplus = std::max(max_uplus, ms.max_U_plus_final);
        } catch (const SchemeInconsistency& e) {
            monotone = false;
            mono_msg = e.what();
            yb[r] = std::nan("");
        }
    }
    Stat sd = stat_of(vd), sb = stat_of(yb);
    double tol = std::max(0.02 * std::abs(sd.mean), 2.0 * comb(sd, sb));
    double gap = std::abs(sd.mean - sb.mean);
    bool constraint = max_uplus <= 10.0 / 256.0;
    char buf[256];
    std::snprintf(buf, sizeof buf,
                  "|Y_root - V_direct| = %.5f vs tol %.5f; monotone = %s; max(U)+ = %.5f vs %.5f",
                  gap, tol, mono_msg.c_str(), max_uplus, 10.0 / 256.0);
    return report(2, "Feynman-Kac representation", monotone && constraint && gap <= tol, buf);
}

bool criterion_dual() {
    double worst = 0.0;
    std::string where = "-";
    for (const auto& prob : registry()) {
        auto catalog = enumerate_step_controls(prob.actions, prob.horizon, 2, 1);
        MarkIntensity lambda = MarkIntensity::uniform(catalog.size(), 0.02);
        auto xi = XiSampler::atoms(EmpiricalMeasure({{-0.5}, {0.8}}, {0.5, 0.5}));
        std::vector<double> x0{0.4};
        SimParams sp;
        sp.grid = TimeGrid{0.0, prob.horizon, 10};
        sp.n_xi = sp.n_x = 128;
        sp.seed = rng::Key(kSeed).sub(200).v;
        bsde::JumpLattice lat(prob.coefficients, prob.actions, catalog, lambda,
                              bsde::RootControl{true, 0}, sp, 2, 2'000'000, xi, x0);
        for (double n : bsde::default_penalty_schedule()) {
            auto dc = bsde::dual_check(lat, lambda, n);
            if (dc.rel_discrepancy > worst) {
                worst = dc.rel_discrepancy;
                where = prob.name + " at n = " + std::to_string(static_cast<int>(n));
            }
        }
    }
    char buf[256];
    std::snprintf(buf, sizeof buf, "max relative discrepancy %.3e (%s) vs 1e-6", worst,
                  where.c_str());
    return report(3, "dual formula: penalized vs bang-bang recursion", worst <= 1e-6, buf);
}

bool criterion_dpp() {
    ToyInstance toy;
    const int R = 3;
    std::vector<double> lhs(R), rhs(R);
    for (int r = 0; r < R; ++r) {
        SimParams sp = toy.sim(1000, rng::Key(kSeed).sub(300 + r).v);
        bsde::DppConfig cfg;
        cfg.nu_lo = toy.nu_lo;
        cfg.nu_hi = toy.nu_hi;
        cfg.k_max = toy.k_max;
        cfg.inner_particles = 256;
        cfg.subsample = 32;
        auto rep = bsde::dpp_check(toy.prob.coefficients, toy.prob.actions, toy.catalog,
                                   toy.lambda, sp, 0.5, toy.xi, toy.x0, cfg);
        lhs[r] = rep.lhs;
        rhs[r] = rep.rhs;
    }
    Stat sl = stat_of(lhs), sr = stat_of(rhs);
    double tol = std::max(0.03 * std::abs(sl.mean), 2.0 * comb(sl, sr));
    double resid = std::abs(sl.mean - sr.mean);
    char buf[256];
    std::snprintf(buf, sizeof buf, "DPP residual at s = T/2: %.5f vs tol %.5f", resid, tol);
    return report(4, "randomized dynamic programming principle", resid <= tol, buf);
}

bool criterion_lq() {
    const auto& prob = find_problem("systemic-risk-lq");
    auto xi = XiSampler::gaussian({0.0}, {0.2});
    std::vector<double> x0{0.3};
    double oracle =
        lq_riccati_value(*prob.lq, prob.horizon, 0.0, 0.3, EmpiricalMeasure::dirac({0.0}));

    SimParams sp;
    sp.grid = TimeGrid{0.0, prob.horizon, 40};
    sp.n_xi = sp.n_x = 10000;
    sp.seed = rng::Key(kSeed).sub(400).v;

    std::vector<std::pair<int, int>> refinements{{1, 1}, {2, 1}, {4, 2}};
    std::vector<double> gaps;
    double final_value = 0.0;
    for (auto [k, L] : refinements) {
        auto catalog = enumerate_step_controls(prob.actions, prob.horizon, k, L, 4096);
        auto dv = value_direct(prob.coefficients, prob.actions, catalog, sp, xi, x0);
        gaps.push_back(oracle - dv.value);
        final_value = dv.value;
    }
    bool monotone = gaps[0] >= gaps[1] - 1e-9 && gaps[1] >= gaps[2] - 1e-9;
    double rel = std::abs(final_value - oracle) / std::abs(oracle);
    char buf[256];
    std::snprintf(
        buf, sizeof buf,
        "riccati = %.5f, V(k=4,L=2) = %.5f, rel gap %.4f vs 0.05; gaps %.4f >= %.4f >= %.4f",
        oracle, final_value, rel, gaps[0], gaps[1], gaps[2]);
    return report(5, "LQ benchmark against the Riccati oracle", rel <= 0.05 && monotone, buf);
}

bool criterion_flow() {
    double worst = 0.0;
    for (const auto& prob : registry()) {
        auto catalog = enumerate_step_controls(prob.actions, prob.horizon, 2, 2, 4096);
        StepControlPath path(catalog.controls[5 % catalog.size()]);
        auto xi = XiSampler::atoms(EmpiricalMeasure({{-0.4}, {0.7}}, {0.5, 0.5}));
        std::vector<double> x0{0.2};
        SimParams sp;
        sp.grid = TimeGrid{0.0, prob.horizon, 16};
        sp.n_xi = sp.n_x = 64;
        sp.seed = rng::Key(kSeed).sub(500).v;
        for (double frac : {0.25, 0.5, 0.75}) {
            double s = sp.grid.node(static_cast<int>(frac * 16));
            auto rep = flow_check(prob.coefficients, prob.actions, path, sp, xi, x0, s);
            worst = std::max({worst, rep.max_diff_xi, rep.max_diff_x});
        }
    }
    char buf[128];
    std::snprintf(buf, sizeof buf, "max pathwise replay discrepancy %.3e vs 1e-10", worst);
    return report(6, "flow property under identical increments", worst <= 1e-10, buf);
}

bool criterion_disintegration() {
    // Instance A: the shipped toy, joint product optimization against the
    // per-atom decomposition value_mkv (the two coincide here by linearity).
    ToyInstance toy;
    const int R = 8;
    const std::size_t N = 2000;
    std::vector<Atom1d> toy_atoms{{0.0, 0.5}, {0.6, 0.5}};
    std::vector<double> pa_toy(R), j_toy(R);
    for (int r = 0; r < R; ++r) {
        SimParams sp = toy.sim(N, rng::Key(kSeed).sub(600 + r).v);
        pa_toy[r] = value_mkv(toy.prob.coefficients, toy.prob.actions, toy.catalog, sp,
                              toy_atoms);
        j_toy[r] = value_mkv_joint(toy.prob.coefficients, toy.prob.actions, toy.catalog, sp,
                                   toy_atoms)
                       .value;
    }
    Stat spa = stat_of(pa_toy), sja = stat_of(j_toy);
    double ci_a = std::max(comb(spa, sja), 1e-4);
    double gap_a = std::abs(spa.mean - sja.mean);

    // Instance B: the LQ benchmark with atoms on opposite sides of the mean,
    // so the per-atom optima pick different controls. The reference is the
    // per-atom decomposition of the disintegrated problem (conditional laws).
    const auto& prob = find_problem("systemic-risk-lq");
    auto catalog = enumerate_step_controls(prob.actions, prob.horizon, 2, 1);
    std::vector<Atom1d> lq_atoms{{-0.3, 0.5}, {0.7, 0.5}};
    std::vector<double> pa_lq(R), j_lq(R);
    std::vector<std::size_t> args;
    for (int r = 0; r < R; ++r) {
        SimParams sp;
        sp.grid = TimeGrid{0.0, prob.horizon, 20};
        sp.n_xi = sp.n_x = N;
        sp.seed = rng::Key(kSeed).sub(650 + r).v;
        double acc = 0.0;
        for (const auto& atom : lq_atoms) {
            auto xi = XiSampler::atoms(EmpiricalMeasure({{atom.x}}, {1.0}));
            std::vector<double> x0{atom.x};
            acc += atom.p *
                   value_direct(prob.coefficients, prob.actions, catalog, sp, xi, x0).value;
        }
        pa_lq[r] = acc;
        auto jv = value_mkv_joint(prob.coefficients, prob.actions, catalog, sp, lq_atoms);
        j_lq[r] = jv.value;
        if (r == 0) args = jv.argmax;
    }
    Stat spb = stat_of(pa_lq), sjb = stat_of(j_lq);
    double ci_b = std::max(comb(spb, sjb), 1e-4);
    double gap_b = std::abs(spb.mean - sjb.mean);

    char buf[320];
    std::snprintf(buf, sizeof buf,
                  "toy: |joint - per-atom| = %.5f vs CI %.5f; lq (argmax %zu/%zu): |gap| = %.5f "
                  "vs CI %.5f",
                  gap_a, ci_a, args[0], args[1], gap_b, ci_b);
    return report(7, "disintegration of the value function", gap_a <= ci_a && gap_b <= ci_b,
                  buf);
}

bool criterion_girsanov() {
    const double T = 1.0;
    bool pass = true;
    std::string detail;

    // Setting A: nu == 1 gives kappa == 1 exactly.
    {
        MarkIntensity lambda = MarkIntensity::uniform(4, 0.25);
        IntensityControl one = IntensityControl::constant(1.0, TimeGrid{0.0, T, 20});
        double worst = 0.0;
        for (int i = 0; i < 1000; ++i) {
            PoissonPath p = sample_poisson_path(lambda, T, 1000, rng::Key(kSeed).sub(i).v);
            worst = std::max(worst, std::abs(girsanov_weight(p, one, lambda, T) - 1.0));
        }
        pass = pass && worst == 0.0;
        detail += "nu==1 dev " + std::to_string(worst);
    }
    // Three (nu, lambda) settings: MC mean within 3 standard errors over 1e5 paths.
    struct Setting {
        MarkIntensity lambda;
        IntensityControl nu;
    };
    std::vector<Setting> settings;
    {
        Setting s1;
        s1.lambda = MarkIntensity::uniform(1, 0.8);
        s1.nu = IntensityControl::constant(1.7, TimeGrid{0.0, T, 10});
        settings.push_back(s1);
        Setting s2;
        s2.lambda = MarkIntensity::uniform(4, 0.3);
        s2.nu.lo = 0.5;
        s2.nu.hi = 2.0;
        s2.nu.grid = TimeGrid{0.0, T, 20};
        s2.nu.value = [](int i, std::span<const std::pair<int, std::size_t>> h, std::size_t m) {
            return (h.size() + i + m) % 2 == 0 ? 0.5 : 2.0;
        };
        settings.push_back(s2);
        Setting s3;
        s3.lambda.marks = {0, 1, 2};
        s3.lambda.rates = {0.1, 0.4, 0.2};
        s3.nu = IntensityControl::constant(0.6, TimeGrid{0.0, T, 10});
        settings.push_back(s3);
    }
    int label = 0;
    for (const auto& s : settings) {
        const int n = 100000;
        std::vector<double> k(n);
        parallel_for(n, [&](std::size_t i) {
            PoissonPath p =
                sample_poisson_path(s.lambda, T, 1000, rng::Key(kSeed).sub(7000 + label).sub(i).v);
            k[i] = girsanov_weight(p, s.nu, s.lambda, T);
        });
        Stat st = stat_of(k);
        double se = st.sd / std::sqrt(static_cast<double>(n));
        bool ok = std::abs(st.mean - 1.0) <= 3.0 * se;
        pass = pass && ok;
        char buf[96];
        std::snprintf(buf, sizeof buf, "; setting %d: |mean-1| = %.2e vs 3se = %.2e", label,
                      std::abs(st.mean - 1.0), 3.0 * se);
        detail += buf;
        ++label;
    }
    return report(8, "Girsanov martingale property of kappa", pass, detail);
}

bool criterion_independence() {
    ToyInstance toy;
    const int R = 4;
    const std::size_t N = 1000;

    auto run = [&](bsde::RootControl root, const MarkIntensity& lambda) {
        std::vector<double> vals(R);
        for (int r = 0; r < R; ++r) {
            SimParams sp = toy.sim(N, rng::Key(kSeed).sub(800 + r).v);
            bsde::JumpLattice lat(toy.prob.coefficients, toy.prob.actions, toy.catalog, lambda,
                                  root, sp, toy.k_max, 2'000'000, toy.xi, toy.x0);
            vals[r] = bsde::bang_bang_dp(lat, lambda, toy.nu_lo, toy.nu_hi).root;
        }
        return stat_of(vals);
    };

    MarkIntensity lam_b;
    lam_b.marks = {0, 1, 2, 3};
    lam_b.rates = {0.08, 0.05, 0.05, 0.08};

    Stat abar0 = run({true, 0}, toy.lambda);
    Stat abar3 = run({true, 3}, toy.lambda);
    Stat a0_lo = run({false, 0}, toy.lambda);
    Stat a0_hi = run({false, 1}, toy.lambda);
    Stat lamA = abar0;
    Stat lamB = run({true, 0}, lam_b);

    struct Row {
        const char* name;
        Stat a, b;
    };
    std::vector<Row> rows{{"abar", abar0, abar3}, {"a0", a0_lo, a0_hi}, {"lambda", lamA, lamB}};
    bool pass = true;
    std::string detail;
    for (const auto& row : rows) {
        double delta = std::abs(row.a.mean - row.b.mean);
        double tol = 2.0 * comb(row.a, row.b);
        pass = pass && delta <= tol;
        char buf[96];
        std::snprintf(buf, sizeof buf, "%s: |delta| = %.5f vs 2ci = %.5f; ", row.name, delta,
                      tol);
        detail += buf;
    }
    return report(9, "a0 / lambda / abar independence of V^R", pass, detail);
}

bool criterion_stability() {
    const auto& prob = find_problem("drift-only");
    StepControl base;
    base.grid = TimeGrid{0.0, prob.horizon, 1};
    base.cells = 1;
    base.table = {{1}};
    auto xi = XiSampler::constant({0.0});
    std::vector<double> x0{0.0};
    SimParams sp;
    sp.grid = TimeGrid{0.0, prob.horizon, 64};
    sp.n_xi = sp.n_x = 16;
    sp.seed = rng::Key(kSeed).sub(900).v;
    auto rows = stability_probe(prob.coefficients, prob.actions, base, sp, xi, x0, 4);
    bool monotone = true;
    double c_fit = 0.0;
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (i > 0) monotone = monotone && rows[i].delta_j <= rows[i - 1].delta_j + 1e-12;
        if (rows[i].krylov > 0.0) c_fit = std::max(c_fit, rows[i].delta_j / rows[i].krylov);
    }
    bool finite = std::isfinite(c_fit) && c_fit > 0.0;
    bool vanishing = rows.back().delta_j <= 0.25 * rows.front().delta_j;
    char buf[160];
    std::snprintf(buf, sizeof buf, "fitted C = %.3f; |dJ| = %.4f -> %.4f over 4 levels", c_fit,
                  rows.front().delta_j, rows.back().delta_j);
    return report(10, "stability |dJ| <= C rho~ with vanishing response",
                  monotone && finite && vanishing, buf);
}

bool criterion_w2_suite() {
    int failures = 0;
    int cases = 0;
    for (int c = 0; c < 1000; ++c) {
        rng::Key k = rng::Key(kSeed).sub(1000 + c);
        int dim = 1 + static_cast<int>(rng::uniform01(k.sub(0)) * 3.0);
        int na = 1 + static_cast<int>(rng::uniform01(k.sub(1)) * 15.0);
        int nb = 1 + static_cast<int>(rng::uniform01(k.sub(2)) * 15.0);
        auto make = [&](int n, std::uint64_t tag) {
            std::vector<std::vector<double>> pts(n, std::vector<double>(dim));
            for (int i = 0; i < n; ++i)
                for (int d = 0; d < dim; ++d)
                    pts[i][d] = 2.0 * rng::normal(k.sub(tag + 16 * i + d));
            return EmpiricalMeasure::from_samples(pts);
        };
        auto a = make(na, 100), b = make(nb, 5000), d = make(na, 9000);
        double ab = wasserstein2(a, b), ba = wasserstein2(b, a);
        double ad = wasserstein2(a, d), db = wasserstein2(d, b);
        if (std::abs(ab - ba) > 1e-12) ++failures;
        if (wasserstein2(a, a) > 1e-12) ++failures;
        if (ab > ad + db + 1e-9) ++failures;
        if (dim == 1 && std::abs(ab - wasserstein2_lp(a, b)) > 1e-9) ++failures;
        // coupling bound on paired equal-length samples
        if (na == nb) {
            double msq = 0.0;
            for (int i = 0; i < na; ++i) {
                double diff = 0.0;
                for (int dd = 0; dd < dim; ++dd) {
                    double e = a.point(i)[dd] - b.point(i)[dd];
                    diff += e * e;
                }
                msq += diff;
            }
            if (ab > std::sqrt(msq / na) + 1e-9) ++failures;
        }
        ++cases;
    }
    char buf[96];
    std::snprintf(buf, sizeof buf, "%d randomized cases, %d failures", cases, failures);
    return report(11, "W2 metric suite", failures == 0 && cases == 1000, buf);
}

}  // namespace

int main(int argc, char** argv) {
    if (argc < 2) {
        std::fprintf(stderr, "usage: %s <criterion 1..11 | all>\n", argv[0]);
        return 2;
    }
    using Fn = bool (*)();
    Fn criteria[] = {criterion_equivalence,    criterion_feynman_kac, criterion_dual,
                     criterion_dpp,            criterion_lq,          criterion_flow,
                     criterion_disintegration, criterion_girsanov,    criterion_independence,
                     criterion_stability,      criterion_w2_suite};
    bool ok = true;
    if (std::strcmp(argv[1], "all") == 0) {
        for (Fn fn : criteria) ok = fn() && ok;
    } else {
        int c = std::atoi(argv[1]);
        if (c < 1 || c > 11) {
            std::fprintf(stderr, "criterion out of range\n");
            return 2;
        }
        ok = criteria[c - 1]();
    }
    return ok ? 0 : 1;
}
