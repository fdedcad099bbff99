#include <doctest.h>

#include <cmath>
#include <limits>
#include <set>

#include "nilm/errors.hpp"
#include "nilm/gradcheck.hpp"
#include "nilm/hash.hpp"
#include "nilm/rng.hpp"
#include "nilm/tensor.hpp"
#include "support.hpp"

using namespace nilm;

TEST_CASE("tensor construction checks shape against data") {
    CHECK_THROWS_AS(Tensor({2, 3}, std::vector<double>(5)), ShapeError);
    Tensor t({2, 3}, std::vector<double>{1, 2, 3, 4, 5, 6});
    CHECK(t(1, 2) == 6);
    CHECK(t.rows() == 2);
    CHECK(t.cols() == 3);
    CHECK(t.row(1).values() == std::vector<double>{4, 5, 6});
}

TEST_CASE("checked tensors reject NaN and infinity") {
    CHECK_THROWS_AS(Tensor::checked({2}, {1.0, std::nan("")}), NumericError);
    CHECK_THROWS_AS(Tensor::checked({1}, {std::numeric_limits<double>::infinity()}), NumericError);
    CHECK_NOTHROW(Tensor::checked({2}, {1.0, -2.0}));
}

TEST_CASE("reshape keeps data and validates element count") {
    Tensor t({2, 3}, std::vector<double>{1, 2, 3, 4, 5, 6});
    Tensor r = t.reshaped({3, 2});
    CHECK(r(2, 1) == 6);
    CHECK_THROWS_AS(t.reshaped({4, 2}), ShapeError);
}

TEST_CASE("slice0 copies one leading index") {
    Tensor t({2, 2, 2}, std::vector<double>{1, 2, 3, 4, 5, 6, 7, 8});
    Tensor s = t.slice0(1);
    CHECK(s.shape() == Shape{2, 2});
    CHECK(s.values() == std::vector<double>{5, 6, 7, 8});
}

TEST_CASE("format_double round-trips") {
    SeededRng rng(3);
    for (int i = 0; i < 200; ++i) {
        const double v = rng.normal(0.0, 1e3);
        CHECK(std::stod(format_double(v)) == v);
    }
    CHECK(format_double(0.5) == "0.5");
}

TEST_CASE("rng streams are reproducible and independent") {
    SeededRng a(42, 7), b(42, 7), c(42, 8);
    bool differs = false;
    for (int i = 0; i < 100; ++i) {
        const auto x = a.next_u64();
        CHECK(x == b.next_u64());
        differs = differs || x != c.next_u64();
    }
    CHECK(differs);

    SeededRng parent(1);
    const auto before = parent.counter();
    SeededRng k1 = parent.split({3, 4}), k2 = parent.split({4, 3});
    CHECK(parent.counter() == before);
    CHECK(k1.next_u64() != k2.next_u64());
}

TEST_CASE("rng distributions have the expected moments") {
    SeededRng rng(9);
    const int n = 100000;
    double su = 0, sn = 0, sn2 = 0;
    for (int i = 0; i < n; ++i) {
        const double u = rng.uniform();
        REQUIRE(u >= 0.0);
        REQUIRE(u < 1.0);
        su += u;
        const double z = rng.normal();
        sn += z;
        sn2 += z * z;
    }
    CHECK(su / n == doctest::Approx(0.5).epsilon(0.01));
    CHECK(std::abs(sn / n) < 0.02);
    CHECK(sn2 / n == doctest::Approx(1.0).epsilon(0.02));

    std::set<std::uint64_t> seen;
    for (int i = 0; i < 1000; ++i) {
        const auto v = rng.below(5);
        REQUIRE(v < 5);
        seen.insert(v);
    }
    CHECK(seen.size() == 5);
}

TEST_CASE("fnv1a matches published test vectors") {
    CHECK(Fnv1a().value() == 0xcbf29ce484222325ULL);
    CHECK(Fnv1a().str("a").value() == 0xaf63dc4c8601ec8cULL);
    CHECK(Fnv1a().str("foobar").value() == 0x85944171f73967e8ULL);
    CHECK(to_hex(0xabcULL) == "0000000000000abc");
}

TEST_CASE("finite differences recover an analytic gradient") {
    SeededRng rng(5);
    const Tensor x = testing::random_tensor({3, 4}, rng);
    const Tensor g = finite_diff_grad(
        [](const Tensor& t) {
            double s = 0;
            for (double v : t.data()) s += v * v * v;
            return s;
        },
        x);
    Tensor expected(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) expected[i] = 3 * x[i] * x[i];
    CHECK(max_relative_error(expected, g) < 1e-8);
    CHECK_THROWS_AS(finite_diff_grad([](const Tensor&) { return std::nan(""); }, x), NumericError);
}

TEST_CASE("max_relative_error normalises by the tensor scale") {
    const Tensor a = Tensor::vector({1.0, 2.0});
    const Tensor b = Tensor::vector({1.0, 2.2});
    CHECK(max_relative_error(a, b) == doctest::Approx(0.2 / 2.2));
    CHECK(max_relative_error(Tensor::vector({0.0}), Tensor::vector({0.0})) == 0.0);
}
