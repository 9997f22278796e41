#include <doctest.h>

#include <cmath>

#include "mkv/measures.hpp"
#include "mkv/rng.hpp"

using mkv::EmpiricalMeasure;
using mkv::moment_norm;
using mkv::wasserstein2;
using mkv::wasserstein2_lp;

namespace {

EmpiricalMeasure random_measure(mkv::rng::Key k, int dim, int max_atoms) {
    int atoms = 1 + static_cast<int>(mkv::rng::uniform01(k.sub(0)) * max_atoms);
    std::vector<std::vector<double>> pts(atoms, std::vector<double>(dim));
    for (int i = 0; i < atoms; ++i)
        for (int c = 0; c < dim; ++c) pts[i][c] = 2.0 * mkv::rng::normal(k.sub(1 + i * 8 + c));
    if (mkv::rng::uniform01(k.sub(777)) < 0.5) return EmpiricalMeasure::from_samples(pts);
    // random normalized weights
    std::vector<double> w(atoms);
    double total = 0.0;
    for (int i = 0; i < atoms; ++i) {
        w[i] = 0.05 + mkv::rng::uniform01(k.sub(900 + i));
        total += w[i];
    }
    double acc = 0.0;
    for (int i = 0; i + 1 < atoms; ++i) {
        w[i] /= total;
        acc += w[i];
    }
    w[atoms - 1] = 1.0 - acc;
    return EmpiricalMeasure(pts, w);
}

}  // namespace

TEST_SUITE_BEGIN("measures");

TEST_CASE("from_samples uses uniform weights in input order") {
    auto m = EmpiricalMeasure::from_samples({{1.0, 0.0}, {0.0, 1.0}});
    CHECK(m.size() == 2);
    CHECK(m.weight(0) == doctest::Approx(0.5));
    CHECK(m.point(0)[0] == 1.0);

    auto d = EmpiricalMeasure::from_samples({{3.0}});
    CHECK(d.size() == 1);
    CHECK(d.weight(0) == 1.0);

    CHECK_THROWS_AS(EmpiricalMeasure::from_samples({}), mkv::DegenerateInput);
    CHECK_THROWS_AS(EmpiricalMeasure::from_samples({{std::nan("")}}), mkv::DegenerateInput);
    CHECK_THROWS_AS(EmpiricalMeasure({{1.0}, {2.0, 3.0}}, {0.5, 0.5}), mkv::DimensionError);
}

TEST_CASE("wasserstein2 basics") {
    auto mu = EmpiricalMeasure::from_samples({{0.0}, {2.0}});
    auto nu = EmpiricalMeasure::dirac({1.0});
    CHECK(wasserstein2(mu, mu) == doctest::Approx(0.0));
    CHECK(wasserstein2(mu, nu) == doctest::Approx(1.0));

    auto dx = EmpiricalMeasure::dirac({0.0, 0.0});
    auto dy = EmpiricalMeasure::dirac({3.0, 4.0});
    CHECK(wasserstein2(dx, dy) == doctest::Approx(5.0));

    CHECK_THROWS_AS(wasserstein2(mu, dx), mkv::DimensionError);
}

TEST_CASE("capacity cap for multi-dimensional supports") {
    std::vector<std::vector<double>> pts;
    for (int i = 0; i < 40; ++i) pts.push_back({double(i), 0.0});
    auto big = EmpiricalMeasure::from_samples(pts);
    mkv::W2Options opts;
    opts.pair_cap = 100;
    CHECK_THROWS_AS(wasserstein2(big, big, opts), mkv::CapacityError);
    CHECK(mkv::wasserstein2_subsampled(big, big, 8, 1) >= 0.0);
}

TEST_CASE("moment_norm equals W2 to the Dirac at the origin") {
    CHECK(moment_norm(EmpiricalMeasure::dirac({0.0})) == doctest::Approx(0.0));
    CHECK(moment_norm(EmpiricalMeasure::from_samples({{-1.0}, {1.0}})) == doctest::Approx(1.0));
    CHECK(moment_norm(EmpiricalMeasure::from_samples({{0.0}, {2.0}})) ==
          doctest::Approx(std::sqrt(2.0)));
    for (int c = 0; c < 25; ++c) {
        auto m = random_measure(mkv::rng::Key(42).sub(c), 2, 6);
        auto origin = EmpiricalMeasure::dirac({0.0, 0.0});
        CHECK(moment_norm(m) == doctest::Approx(wasserstein2(m, origin)).epsilon(1e-9));
    }
}

TEST_CASE("metric axioms, coupling bound, and 1-D/LP consistency") {
    int cases = 0;
    for (int c = 0; c < 250; ++c) {
        mkv::rng::Key k = mkv::rng::Key(7).sub(c);
        int dim = 1 + static_cast<int>(mkv::rng::uniform01(k.sub(999)) * 3.0);
        auto a = random_measure(k.sub(1), dim, 8);
        auto b = random_measure(k.sub(2), dim, 8);
        auto d = random_measure(k.sub(3), dim, 8);

        double ab = wasserstein2(a, b);
        double ba = wasserstein2(b, a);
        double ad = wasserstein2(a, d);
        double db = wasserstein2(d, b);
        CHECK(ab == doctest::Approx(ba).epsilon(1e-12));  // symmetry
        CHECK(wasserstein2(a, a) == doctest::Approx(0.0));
        CHECK(ab <= ad + db + 1e-9);  // triangle inequality

        if (dim == 1) {
            double lp = wasserstein2_lp(a, b);
            CHECK(ab == doctest::Approx(lp).epsilon(1e-9));
        }
        ++cases;
    }
    CHECK(cases == 250);
}

TEST_CASE("coupling bound: W2(law xi, law xi') <= L2 distance of paired samples") {
    for (int c = 0; c < 100; ++c) {
        mkv::rng::Key k = mkv::rng::Key(11).sub(c);
        int n = 2 + static_cast<int>(mkv::rng::uniform01(k.sub(0)) * 14.0);
        std::vector<std::vector<double>> xs(n, std::vector<double>(1)), ys = xs;
        double msq = 0.0;
        for (int i = 0; i < n; ++i) {
            xs[i][0] = mkv::rng::normal(k.sub(10 + i));
            ys[i][0] = xs[i][0] + 0.5 * mkv::rng::normal(k.sub(500 + i));
            msq += (xs[i][0] - ys[i][0]) * (xs[i][0] - ys[i][0]);
        }
        double bound = std::sqrt(msq / n);
        double w = wasserstein2(EmpiricalMeasure::from_samples(xs),
                                EmpiricalMeasure::from_samples(ys));
        CHECK(w <= bound + 1e-9);
    }
}

TEST_CASE("serialization round-trips") {
    auto m = EmpiricalMeasure({{0.25, -1.5}, {3.0, 0.125}}, {0.75, 0.25});
    auto j = EmpiricalMeasure::from_json(m.to_json());
    CHECK(j.point(1)[1] == 0.125);
    CHECK(j.weight(0) == 0.75);
    auto cs = EmpiricalMeasure::from_csv(m.to_csv());
    CHECK(cs.size() == 2);
    CHECK(cs.point(0)[0] == 0.25);
    CHECK(cs.weight(1) == 0.25);
}

TEST_SUITE_END();
