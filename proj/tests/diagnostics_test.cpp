#include "conceptevo/diagnostics.hpp"
#include "conceptevo/error.hpp"

#include <doctest.h>

#include <cmath>
#include <numbers>
#include <set>

using namespace conceptevo;

namespace {

std::vector<double> uniform_sample(std::size_t n, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<double> v(n);
    for (auto& x : v) x = rng.uniform01();
    return v;
}

std::vector<double> normal_sample(std::size_t n, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<double> v(n);
    for (auto& x : v) {
        const double u1 = 1.0 - rng.uniform01();
        const double u2 = rng.uniform01();
        x = std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }
    return v;
}

EmbeddingSpace two_epochs(const std::vector<std::vector<double>>& a, const std::vector<std::vector<double>>& b) {
    EmbeddingSpace s;
    s.dim = a.front().size();
    for (std::size_t i = 0; i < a.size(); ++i) s.add_neuron({"m", 1, "l", static_cast<NeuronId>(i)}, a[i], Provenance::image_derived);
    for (std::size_t i = 0; i < b.size(); ++i) s.add_neuron({"m", 2, "l", static_cast<NeuronId>(i)}, b[i], Provenance::image_derived);
    return s;
}

}  // namespace

TEST_CASE("entropy of a unit uniform sample is near zero") {
    const auto v = uniform_sample(5000, 1);
    CHECK(std::abs(vasicek_entropy(v)) < 0.1);
}

TEST_CASE("entropy of a standard normal sample is near its closed form") {
    const double exact = 0.5 * std::log(2.0 * std::numbers::pi * std::numbers::e);
    CHECK(exact == doctest::Approx(1.4189).epsilon(1e-4));
    const auto v = normal_sample(5000, 2);
    CHECK(std::abs(vasicek_entropy(v) - exact) < 0.05);
}

TEST_CASE("entropy shifts by log of the scale") {
    auto v = uniform_sample(1000, 3);
    const double base = vasicek_entropy(v);
    for (auto& x : v) x = 4.0 * x - 7.0;
    CHECK(vasicek_entropy(v) == doctest::Approx(base + std::log(4.0)).epsilon(1e-9));
}

TEST_CASE("entropy needs twenty samples") {
    CHECK_THROWS_AS(vasicek_entropy(uniform_sample(19, 1)), ConfigError);
    CHECK_NOTHROW(vasicek_entropy(uniform_sample(20, 1)));
}

TEST_CASE("a collapsed cloud scores lower than a spread one") {
    Rng rng(4);
    std::vector<Point2> spread, collapsed;
    for (int i = 0; i < 500; ++i) {
        spread.push_back({rng.uniform(0, 1), rng.uniform(0, 1)});
        collapsed.push_back({0.5 + 0.01 * rng.uniform(0, 1), 0.5 + 0.01 * rng.uniform(0, 1)});
    }
    const auto a = differential_entropy(spread);
    const auto b = differential_entropy(collapsed);
    CHECK(b.mean < a.mean);
    CHECK(a.mean == doctest::Approx((a.per_dimension[0] + a.per_dimension[1]) / 2));
}

TEST_CASE("entropy of one epoch within a joint projection") {
    Projection2D p;
    Rng rng(5);
    for (int e : {1, 2}) {
        for (NeuronId n = 0; n < 40; ++n) {
            p.fitted_on.push_back({"m", e, "l", n});
            const double s = e == 1 ? 1.0 : 0.1;
            p.coords.push_back({s * rng.uniform01(), s * rng.uniform01()});
        }
    }
    const auto r1 = differential_entropy(p, "m", 1);
    const auto r2 = differential_entropy(p, "m", 2);
    CHECK(r1.epoch == 1);
    CHECK(r2.mean < r1.mean);
    CHECK_THROWS_AS(differential_entropy(p, "m", 3), ConfigError);
}

TEST_CASE("drift") {
    std::vector<std::vector<double>> a, shifted;
    Rng rng(6);
    for (int i = 0; i < 10; ++i) {
        a.push_back({rng.uniform(-1, 1), rng.uniform(-1, 1)});
        shifted.push_back({a.back()[0] + 3.0, a.back()[1] + 4.0});
    }
    SUBCASE("identical epochs have zero drift") {
        const auto r = drift(two_epochs(a, a), "m", 1, 2);
        CHECK(r.matched == 10);
        CHECK(r.mean_distance == 0.0);
    }
    SUBCASE("a rigid translation by (3, 4) drifts by 5") {
        CHECK(drift(two_epochs(a, shifted), "m", 1, 2).mean_distance == doctest::Approx(5.0).epsilon(1e-12));
    }
    SUBCASE("only matching neurons count") {
        auto fewer = shifted;
        fewer.resize(4);
        CHECK(drift(two_epochs(a, fewer), "m", 1, 2).matched == 4);
    }
    SUBCASE("nothing to match") { CHECK_THROWS_AS(drift(two_epochs(a, a), "m", 1, 9), ConfigError); }
}

TEST_CASE("k-means") {
    SUBCASE("k equal to n puts every point in its own group") {
        VectorTable t(6, 2);
        for (std::size_t i = 0; i < 6; ++i) t.row(i)[0] = static_cast<double>(i * i);
        const auto g = kmeans_groups(t, 6, 1);
        CHECK(g.inertia() == 0.0);
        CHECK(std::set<std::size_t>(g.assignment.begin(), g.assignment.end()).size() == 6);
    }
    SUBCASE("planted blobs are recovered and duplicates stay together") {
        const double centers[3][2] = {{0, 0}, {10, 0}, {0, 10}};
        VectorTable t(90, 2);
        Rng rng(7);
        for (std::size_t i = 0; i < 90; ++i) {
            t.row(i)[0] = centers[i % 3][0] + rng.uniform(-1, 1);
            t.row(i)[1] = centers[i % 3][1] + rng.uniform(-1, 1);
        }
        t.row(89)[0] = t.row(86)[0];
        t.row(89)[1] = t.row(86)[1];
        const auto g = kmeans_groups(t, 3, 3);
        CHECK(g.converged);
        for (std::size_t i = 3; i < 90; ++i) CHECK(g.assignment[i] == g.assignment[i % 3]);
        CHECK(std::set<std::size_t>(g.assignment.begin(), g.assignment.end()).size() == 3);
        CHECK(g.assignment[89] == g.assignment[86]);
        for (std::size_t i = 1; i < g.inertia_history.size(); ++i) {
            CHECK(g.inertia_history[i] <= g.inertia_history[i - 1] + 1e-12);
        }
        CHECK(kmeans_groups(t, 3, 3).assignment == g.assignment);
    }
    SUBCASE("inertia never rises on unstructured data") {
        VectorTable t(200, 3);
        Rng rng(9);
        for (std::size_t i = 0; i < 200; ++i) {
            for (auto& v : t.row(i)) v = rng.uniform01();
        }
        const auto g = kmeans_groups(t, 7, 2);
        for (std::size_t i = 1; i < g.inertia_history.size(); ++i) {
            CHECK(g.inertia_history[i] <= g.inertia_history[i - 1] + 1e-12);
        }
    }
    SUBCASE("bad k") {
        VectorTable t(5, 2);
        CHECK_THROWS_AS(kmeans_groups(t, 0, 1), ConfigError);
        CHECK_THROWS_AS(kmeans_groups(t, 6, 1), ConfigError);
    }
}
