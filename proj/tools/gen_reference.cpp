// Developer utility: regenerates the committed reference data under data/.
//   mkv_gen_reference [out_dir]
// Produces:
//   lq_riccati_reference.csv   fine-grid (T/1e6) Riccati values on a small grid
//   two_action_toy_reference.json  high-accuracy route values for the shipped toy
//   systemic_risk_projection_gap.json  measured k=3 step-control projection gap

#include <fstream>
#include <iostream>
#include <sstream>

#include <json.hpp>

#include "mkv/bsde.hpp"
#include "mkv/cli_io.hpp"
#include "mkv/control_opt.hpp"
#include "mkv/problem.hpp"

using nlohmann::json;

int main(int argc, char** argv) {
    std::string out = argc > 1 ? argv[1] : "data";

    // LQ reference table at the fine step T/1e6.
    {
        const mkv::LqParams p{};
        const double T = 1.0;
        std::ostringstream os;
        os.precision(17);
        os << "t,x,mean,value\n";
        for (double t : {0.0, 0.25, 0.5, 0.9})
            for (double x : {-0.5, 0.0, 0.3, 1.0})
                for (double mean : {0.0, 0.4}) {
                    auto pi = mkv::EmpiricalMeasure::dirac({mean});
                    double v = mkv::lq_riccati_value(p, T, t, x, pi, T / 1e6);
                    os << t << ',' << x << ',' << mean << ',' << v << '\n';
                }
        mkv::write_file_atomic(out + "/lq_riccati_reference.csv", os.str());
        std::cout << "wrote lq_riccati_reference.csv\n";
    }

    // High-accuracy two-action-toy values (1e5 particles, catalog cap), used as
    // the committed regression baseline for `mkvctl verify`.
    {
        const auto& prob = mkv::find_problem("two-action-toy");
        auto catalog = mkv::enumerate_step_controls(prob.actions, prob.horizon, 2, 1, 4096);
        std::vector<std::vector<double>> pts{{0.0}, {0.6}};
        auto xi = mkv::XiSampler::atoms(mkv::EmpiricalMeasure(pts, {0.5, 0.5}));
        std::vector<double> x0{0.5};
        mkv::SimParams sp;
        sp.grid = mkv::TimeGrid{0.25, prob.horizon, 15};
        sp.n_xi = sp.n_x = 100000;
        sp.seed = 715u;
        auto dv = mkv::value_direct(prob.coefficients, prob.actions, catalog, sp, xi, x0);

        mkv::MarkIntensity lambda = mkv::MarkIntensity::uniform(catalog.size(), 0.0625);
        mkv::SimParams si = sp;
        si.n_xi = si.n_x = 20000;
        mkv::bsde::JumpLattice lattice(prob.coefficients, prob.actions, catalog, lambda,
                                       mkv::bsde::RootControl{true, 0}, si, 3, 2'000'000, xi, x0);
        double vr = mkv::bsde::bang_bang_dp(lattice, lambda, 0.1, 50.0).root;
        double yb = mkv::bsde::minimal_solution(lattice, lambda,
                                                mkv::bsde::default_penalty_schedule(), 1e-4)
                        .y_root;

        json table = json::array();
        for (const auto& row : dv.table)
            table.push_back(json{{"control_id", row.control_id},
                                 {"value", row.value},
                                 {"std_error", row.std_error}});
        json ref = {{"problem", "two-action-toy"},
                    {"instance", {{"t", 0.25}, {"x", 0.5}}},
                    {"tolerance", 0.02},
                    {"routes",
                     {{"value_direct", {{"value", dv.value}, {"ci", 0.0}}},
                      {"value_randomized", {{"value", vr}, {"ci", 0.0}}},
                      {"bsde_Y", {{"value", yb}, {"ci", 0.0}}}}},
                    {"argmax", dv.argmax},
                    {"per_control", table}};
        mkv::write_file_atomic(out + "/two_action_toy_reference.json", ref.dump(2) + "\n");
        std::cout << "wrote two_action_toy_reference.json\n";
    }

    // Projection gap of the best k=3 step control against the Riccati oracle.
    {
        const auto& prob = mkv::find_problem("systemic-risk-lq");
        auto catalog = mkv::enumerate_step_controls(prob.actions, prob.horizon, 3, 1, 4096);
        auto xi = mkv::XiSampler::gaussian({0.0}, {0.2});
        std::vector<double> x0{0.3};
        mkv::SimParams sp;
        sp.grid = mkv::TimeGrid{0.0, prob.horizon, 40};
        sp.n_xi = sp.n_x = 40000;
        sp.seed = 716u;
        auto dv = mkv::value_direct(prob.coefficients, prob.actions, catalog, sp, xi, x0);
        auto pi = mkv::EmpiricalMeasure::dirac({0.0});
        double oracle = mkv::lq_riccati_value(*prob.lq, prob.horizon, 0.0, 0.3, pi);
        json gap = {{"oracle", oracle},
                    {"value_direct_k3", dv.value},
                    {"gap", oracle - dv.value},
                    {"bound", 1.2 * std::max(0.0, oracle - dv.value) + 0.01}};
        mkv::write_file_atomic(out + "/systemic_risk_projection_gap.json", gap.dump(2) + "\n");
        std::cout << "wrote systemic_risk_projection_gap.json\n";
    }
    return 0;
}
