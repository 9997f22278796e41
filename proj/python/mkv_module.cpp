#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "mkv/bsde.hpp"
#include "mkv/cli_io.hpp"
#include "mkv/control_opt.hpp"
#include "mkv/measures.hpp"
#include "mkv/problem.hpp"
#include "mkv/randomized.hpp"
#include "mkv/rng.hpp"

namespace py = pybind11;
using namespace mkv;

namespace {

XiSampler sampler_from(const py::object& spec) {
    if (py::isinstance<EmpiricalMeasure>(spec)) return XiSampler::atoms(spec.cast<EmpiricalMeasure>());
    py::dict d = spec.cast<py::dict>();
    std::string type = d["type"].cast<std::string>();
    if (type == "atoms")
        return XiSampler::atoms(EmpiricalMeasure(
            d["points"].cast<std::vector<std::vector<double>>>(),
            d["weights"].cast<std::vector<double>>()));
    if (type == "gaussian")
        return XiSampler::gaussian(d["mean"].cast<std::vector<double>>(),
                                   d["std"].cast<std::vector<double>>());
    if (type == "constant") return XiSampler::constant(d["point"].cast<std::vector<double>>());
    throw UnsupportedInput("unknown sampler spec");
}

SimParams make_sim(double t, double horizon, int n_steps, std::size_t particles,
                   std::uint64_t seed) {
    SimParams sp;
    sp.grid = TimeGrid{t, horizon, n_steps};
    sp.n_xi = sp.n_x = particles;
    sp.seed = seed;
    return sp;
}

}  // namespace

PYBIND11_MODULE(mkvcore, m) {
    m.doc() = "Monte Carlo / BSDE workbench for optimal control of McKean-Vlasov dynamics";

    py::register_exception<Error>(m, "MkvError");

    py::class_<EmpiricalMeasure>(m, "EmpiricalMeasure")
        .def(py::init<std::vector<std::vector<double>>, std::vector<double>>(), py::arg("points"),
             py::arg("weights"))
        .def_static("from_samples", &EmpiricalMeasure::from_samples)
        .def_static("dirac", &EmpiricalMeasure::dirac)
        .def_property_readonly("points", &EmpiricalMeasure::points)
        .def_property_readonly("weights", &EmpiricalMeasure::weights)
        .def("mean", &EmpiricalMeasure::mean)
        .def("second_moment", &EmpiricalMeasure::second_moment)
        .def("__len__", &EmpiricalMeasure::size);

    m.def("wasserstein2",
          [](const EmpiricalMeasure& a, const EmpiricalMeasure& b) { return wasserstein2(a, b); });
    m.def("moment_norm", &moment_norm);

    m.def("registry_names", [] {
        std::vector<std::string> names;
        for (const auto& p : registry()) names.push_back(p.name);
        return names;
    });

    m.def(
        "lq_riccati_value",
        [](double horizon, double t, double x, const EmpiricalMeasure& pi) {
            return lq_riccati_value(LqParams{}, horizon, t, x, pi);
        },
        py::arg("horizon"), py::arg("t"), py::arg("x"), py::arg("pi"));

    m.def(
        "gain_estimate",
        [](const std::string& problem, double t, double x, const py::object& pi,
           std::size_t control_id, int k, int L, int n_steps, std::size_t particles,
           std::uint64_t seed) {
            const auto& prob = find_problem(problem);
            auto catalog = enumerate_step_controls(prob.actions, prob.horizon, k, L);
            StepControlPath path(catalog.controls.at(control_id));
            std::vector<double> x0{x};
            auto est = mkv::gain_estimate(prob.coefficients, prob.actions, path,
                                          make_sim(t, prob.horizon, n_steps, particles, seed),
                                          sampler_from(pi), x0);
            return py::make_tuple(est.mean, est.std_error);
        },
        py::arg("problem"), py::arg("t"), py::arg("x"), py::arg("pi"), py::arg("control_id") = 0,
        py::arg("k") = 2, py::arg("L") = 1, py::arg("n_steps") = 20, py::arg("particles") = 512,
        py::arg("seed") = 0);

    m.def(
        "value_direct",
        [](const std::string& problem, double t, double x, const py::object& pi, int k, int L,
           int n_steps, std::size_t particles, std::uint64_t seed) {
            const auto& prob = find_problem(problem);
            auto catalog = enumerate_step_controls(prob.actions, prob.horizon, k, L);
            std::vector<double> x0{x};
            auto dv = mkv::value_direct(prob.coefficients, prob.actions, catalog,
                                        make_sim(t, prob.horizon, n_steps, particles, seed),
                                        sampler_from(pi), x0);
            return py::make_tuple(dv.value, dv.argmax);
        },
        py::arg("problem"), py::arg("t"), py::arg("x"), py::arg("pi"), py::arg("k") = 2,
        py::arg("L") = 1, py::arg("n_steps") = 20, py::arg("particles") = 512, py::arg("seed") = 0);

    m.def(
        "value_randomized",
        [](const std::string& problem, double t, double x, const py::object& pi, int k, int L,
           int n_steps, std::size_t particles, std::uint64_t seed, double rate, int k_max,
           double nu_lo, double nu_hi, std::size_t abar) {
            const auto& prob = find_problem(problem);
            auto catalog = enumerate_step_controls(prob.actions, prob.horizon, k, L);
            MarkIntensity lambda = MarkIntensity::uniform(catalog.size(), rate);
            RandomizedValueConfig rc;
            rc.sim = make_sim(t, prob.horizon, n_steps, particles, seed);
            rc.k_max = k_max;
            rc.nu_lo = nu_lo;
            rc.nu_hi = nu_hi;
            rc.abar = abar;
            std::vector<double> x0{x};
            auto rv = mkv::value_randomized(prob.coefficients, prob.actions, catalog, lambda, rc,
                                            sampler_from(pi), x0);
            return py::make_tuple(rv.value, rv.tree_nodes);
        },
        py::arg("problem"), py::arg("t"), py::arg("x"), py::arg("pi"), py::arg("k") = 2,
        py::arg("L") = 1, py::arg("n_steps") = 10, py::arg("particles") = 256, py::arg("seed") = 0,
        py::arg("rate") = 0.0625, py::arg("k_max") = 2, py::arg("nu_lo") = 0.1,
        py::arg("nu_hi") = 50.0, py::arg("abar") = 0);

    m.def(
        "bsde_minimal",
        [](const std::string& problem, double t, double x, const py::object& pi, int k, int L,
           int n_steps, std::size_t particles, std::uint64_t seed, double rate, int k_max) {
            const auto& prob = find_problem(problem);
            auto catalog = enumerate_step_controls(prob.actions, prob.horizon, k, L);
            MarkIntensity lambda = MarkIntensity::uniform(catalog.size(), rate);
            std::vector<double> x0{x};
            bsde::JumpLattice lattice(prob.coefficients, prob.actions, catalog, lambda,
                                      bsde::RootControl{true, 0},
                                      make_sim(t, prob.horizon, n_steps, particles, seed), k_max,
                                      2'000'000, sampler_from(pi), x0);
            auto ms = bsde::minimal_solution(lattice, lambda, bsde::default_penalty_schedule(),
                                             1e-4);
            double max_dual = 0.0;
            for (double n : bsde::default_penalty_schedule())
                max_dual = std::max(max_dual, bsde::dual_check(lattice, lambda, n).rel_discrepancy);
            return py::make_tuple(ms.y_root, ms.converged, ms.max_U_plus_final, max_dual);
        },
        py::arg("problem"), py::arg("t"), py::arg("x"), py::arg("pi"), py::arg("k") = 2,
        py::arg("L") = 1, py::arg("n_steps") = 10, py::arg("particles") = 256, py::arg("seed") = 0,
        py::arg("rate") = 0.03, py::arg("k_max") = 2);

    m.def(
        "girsanov_mean",
        [](double rate, std::size_t marks, double horizon, double lo, double hi, int n_paths,
           std::uint64_t seed) {
            MarkIntensity lambda = MarkIntensity::uniform(marks, rate);
            TimeGrid grid{0.0, horizon, 10};
            IntensityControl nu;
            nu.lo = lo;
            nu.hi = hi;
            nu.grid = grid;
            nu.value = [lo, hi](int i, std::span<const std::pair<int, std::size_t>> h,
                                std::size_t m) {
                return (h.size() + i + m) % 2 == 0 ? lo : hi;
            };
            double acc = 0.0;
            for (int j = 0; j < n_paths; ++j) {
                PoissonPath p = sample_poisson_path(lambda, horizon, 1000,
                                                    rng::Key(seed).sub(j).v);
                acc += girsanov_weight(p, nu, lambda, horizon);
            }
            return acc / n_paths;
        },
        py::arg("rate") = 0.25, py::arg("marks") = 4, py::arg("horizon") = 1.0,
        py::arg("lo") = 0.5, py::arg("hi") = 2.0, py::arg("n_paths") = 4000, py::arg("seed") = 3);
}
