#include <doctest.h>

#include <cmath>

#include "nilm/errors.hpp"
#include "nilm/gradcheck.hpp"
#include "nilm/ops.hpp"
#include "support.hpp"

using namespace nilm;
using testing::max_abs_diff;
using testing::random_tensor;

namespace {

// Weighted sum with fixed random weights, so the gradient of `op` is probed in
// every output direction.
double probe(const Tensor& y, const Tensor& w) {
    double s = 0;
    for (std::size_t i = 0; i < y.size(); ++i) s += y[i] * w[i];
    return s;
}

}  // namespace

TEST_CASE("matmul of a row and a column is the dot product") {
    const Tensor a = Tensor::from_rows({{1, 2}});
    const Tensor b = Tensor::from_rows({{3}, {4}});
    CHECK(matmul(a, b)[0] == 11);
    CHECK_THROWS_AS(matmul(a, a), ShapeError);
}

TEST_CASE("transposed products agree with explicit transposes") {
    SeededRng rng(1);
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t m = 1 + rng.below(6), k = 1 + rng.below(6), n = 1 + rng.below(6);
        const Tensor a = random_tensor({k, m}, rng);
        const Tensor b = random_tensor({k, n}, rng);
        CHECK(max_abs_diff(matmul_tn(a, b), matmul(transpose(a), b)) < 1e-14);
        const Tensor c = random_tensor({m, k}, rng);
        const Tensor d = random_tensor({n, k}, rng);
        CHECK(max_abs_diff(matmul_nt(c, d), matmul(c, transpose(d))) < 1e-14);
    }
}

TEST_CASE("bias helpers") {
    const Tensor x = Tensor::from_rows({{1, 2}, {3, 4}});
    const Tensor y = add_bias(x, Tensor::vector({10, 20}));
    CHECK(y.values() == std::vector<double>{11, 22, 13, 24});
    CHECK(bias_grad(x).values() == std::vector<double>{4, 6});
    CHECK(column_mean(x).values() == std::vector<double>{2, 3});
}

TEST_CASE("gelu uses the exact normal CDF") {
    const Tensor y = gelu(Tensor::vector({0.0, 1.0, -1.0}));
    CHECK(y[0] == 0.0);
    CHECK(y[1] == doctest::Approx(0.8413447460685429).epsilon(1e-14));
    CHECK(y[2] == doctest::Approx(-0.15865525393145707).epsilon(1e-14));
}

TEST_CASE("softmax rows sum to one and honour the sentinel") {
    SeededRng rng(2);
    const Tensor s = random_tensor({5, 7}, rng, -30, 30);
    const Tensor p = softmax_rows(s, 1.5);
    for (std::size_t i = 0; i < 5; ++i) {
        double row = 0;
        for (std::size_t j = 0; j < 7; ++j) row += p(i, j);
        CHECK(row == doctest::Approx(1.0).epsilon(1e-12));
    }
    const Tensor m = Tensor::from_rows({{kNegMask, 1.0, 2.0}});
    CHECK(softmax_rows(m, 1.0)[0] == 0.0);
    CHECK_THROWS_AS(softmax_rows(Tensor::from_rows({{kNegMask, kNegMask}}), 1.0), DegenerateError);
    CHECK_THROWS_AS(softmax_rows(m, 0.0), DomainError);
    CHECK_THROWS_AS(softmax_rows(m, -1.0), DomainError);
}

TEST_CASE("softmax is stable for huge logits") {
    const Tensor p = softmax_rows(Tensor::from_rows({{1000.0, 999.0}}), 1.0);
    CHECK(p.all_finite());
    CHECK(p[0] == doctest::Approx(1.0 / (1.0 + std::exp(-1.0))));
}

TEST_CASE("softmax backward matches finite differences for scores and temperature") {
    SeededRng rng(3);
    Tensor s = random_tensor({3, 4}, rng, -2, 2);
    s(1, 1) = kNegMask;
    const Tensor w = random_tensor({3, 4}, rng);
    const double tau = 1.7;
    const Tensor p = softmax_rows(s, tau);
    const SoftmaxGrad g = softmax_rows_backward(p, s, w, tau);
    Tensor free_s = s;
    const Tensor num = finite_diff_grad(
        [&](const Tensor& x) {
            Tensor xs = x;
            xs(1, 1) = kNegMask;
            return probe(softmax_rows(xs, tau), w);
        },
        free_s);
    Tensor ana = g.scores;
    CHECK(ana(1, 1) == 0.0);
    ana(1, 1) = num(1, 1);
    CHECK(max_relative_error(ana, num) < 1e-7);
    const Tensor t = finite_diff_grad([&](const Tensor& x) { return probe(softmax_rows(s, x[0]), w); },
                                      Tensor::scalar(tau));
    CHECK(g.temperature == doctest::Approx(t[0]).epsilon(1e-7));
}

TEST_CASE("entropy of uniform and point masses") {
    CHECK(entropy({0.25, 0.25, 0.25, 0.25}) == doctest::Approx(std::log(4.0)));
    CHECK(entropy({1.0, 0.0}) == 0.0);
    CHECK(softmax_jacobian_diag(0.5) == 0.25);
}

TEST_CASE("conv1d with a box kernel") {
    const Tensor sig({1, 3, 1}, std::vector<double>{1, 2, 3});
    const Tensor k({1, 1, 3}, std::vector<double>{1, 1, 1});
    CHECK(conv1d(sig, k, 1, 1).values() == std::vector<double>{3, 6, 5});
    CHECK(conv1d_out_len(480, 5, 2, 1) == 480);
    CHECK_THROWS_AS(conv1d_out_len(2, 5, 0, 1), ShapeError);
}

TEST_CASE("conv1d agrees with a scalar-loop reference") {
    SeededRng rng(4);
    const std::size_t B = 2, len = 9, cin = 3, cout = 2, K = 5, pad = 2;
    const Tensor x = random_tensor({B, len, cin}, rng);
    const Tensor k = random_tensor({cout, cin, K}, rng);
    const Tensor y = conv1d(x, k, pad, 1);
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t t = 0; t < len; ++t)
            for (std::size_t o = 0; o < cout; ++o) {
                double acc = 0;
                for (std::size_t c = 0; c < cin; ++c)
                    for (std::size_t j = 0; j < K; ++j) {
                        const long src = static_cast<long>(t + j) - static_cast<long>(pad);
                        if (src >= 0 && src < static_cast<long>(len)) acc += x(b, src, c) * k(o, c, j);
                    }
                CHECK(y(b, t, o) == doctest::Approx(acc).epsilon(1e-13));
            }
}

TEST_CASE("deconv1d doubles the length and matches a scatter reference") {
    SeededRng rng(5);
    const std::size_t B = 2, len = 8, cin = 3, cout = 2, K = 4, S = 2, P = 1;
    CHECK(deconv1d_out_len(len, K, S, P) == 16);
    const Tensor x = random_tensor({B, len, cin}, rng);
    const Tensor k = random_tensor({cin, cout, K}, rng);
    const Tensor y = deconv1d(x, k, S, P);
    REQUIRE(y.shape() == Shape{B, 16, cout});
    Tensor ref({B, 16, cout});
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t i = 0; i < len; ++i)
            for (std::size_t j = 0; j < K; ++j) {
                const long t = static_cast<long>(i * S + j) - static_cast<long>(P);
                if (t < 0 || t >= 16) continue;
                for (std::size_t c = 0; c < cin; ++c)
                    for (std::size_t o = 0; o < cout; ++o) ref(b, t, o) += x(b, i, c) * k(c, o, j);
            }
    CHECK(max_abs_diff(y, ref) < 1e-13);
}

TEST_CASE("convolution adjoints match finite differences") {
    SeededRng rng(6);
    const Tensor x = random_tensor({2, 6, 2}, rng);
    const Tensor k = random_tensor({3, 2, 5}, rng);
    const Tensor w = random_tensor({2, 6, 3}, rng);
    const Conv1dGrad g = conv1d_backward(x, k, w, 2, 1);
    CHECK(max_relative_error(g.signal, finite_diff_grad([&](const Tensor& t) { return probe(conv1d(t, k, 2, 1), w); }, x)) < 1e-8);
    CHECK(max_relative_error(g.kernels, finite_diff_grad([&](const Tensor& t) { return probe(conv1d(x, t, 2, 1), w); }, k)) < 1e-8);

    const Tensor dk = random_tensor({2, 3, 4}, rng);
    const Tensor dw = random_tensor({2, 12, 3}, rng);
    const Conv1dGrad h = deconv1d_backward(x, dk, dw, 2, 1);
    CHECK(max_relative_error(h.signal, finite_diff_grad([&](const Tensor& t) { return probe(deconv1d(t, dk, 2, 1), dw); }, x)) < 1e-8);
    CHECK(max_relative_error(h.kernels, finite_diff_grad([&](const Tensor& t) { return probe(deconv1d(x, t, 2, 1), dw); }, dk)) < 1e-8);
}

TEST_CASE("max_pool2 picks the larger sample and breaks ties to the earlier one") {
    const Tensor x({1, 4, 1}, std::vector<double>{1, 3, 2, 2});
    const PoolResult p = max_pool2(x);
    CHECK(p.out.values() == std::vector<double>{3, 2});
    CHECK(p.argmax == std::vector<std::size_t>{1, 2});
    const Tensor g = max_pool2_backward(x.shape(), p.argmax, Tensor({1, 2, 1}, std::vector<double>{5, 7}));
    CHECK(g.values() == std::vector<double>{0, 5, 7, 0});
    CHECK_THROWS_AS(max_pool2(Tensor({1, 3, 1})), ShapeError);
}

TEST_CASE("layer norm output is standardised and its adjoint is correct") {
    SeededRng rng(7);
    const Tensor x = random_tensor({4, 6}, rng, -3, 3);
    const Tensor gain = random_tensor({6}, rng, 0.5, 1.5);
    const Tensor bias = random_tensor({6}, rng);
    const Tensor plain = layer_norm(x, Tensor({6}, 1.0), Tensor({6}, 0.0));
    for (std::size_t i = 0; i < 4; ++i) {
        double m = 0, v = 0;
        for (std::size_t j = 0; j < 6; ++j) m += plain(i, j) / 6;
        for (std::size_t j = 0; j < 6; ++j) v += (plain(i, j) - m) * (plain(i, j) - m) / 6;
        CHECK(std::abs(m) < 1e-12);
        CHECK(v == doctest::Approx(1.0).epsilon(1e-4));
    }
    const Tensor w = random_tensor({4, 6}, rng);
    const LayerNormGrad g = layer_norm_backward(x, gain, w);
    CHECK(max_relative_error(g.x, finite_diff_grad([&](const Tensor& t) { return probe(layer_norm(t, gain, bias), w); }, x)) < 1e-7);
    CHECK(max_relative_error(g.gain, finite_diff_grad([&](const Tensor& t) { return probe(layer_norm(x, t, bias), w); }, gain)) < 1e-7);
    CHECK(max_relative_error(g.bias, finite_diff_grad([&](const Tensor& t) { return probe(layer_norm(x, gain, t), w); }, bias)) < 1e-7);
}

TEST_CASE("gelu and relu adjoints") {
    SeededRng rng(8);
    const Tensor x = random_tensor({10}, rng, -3, 3);
    const Tensor w = random_tensor({10}, rng);
    CHECK(max_relative_error(gelu_backward(x, w), finite_diff_grad([&](const Tensor& t) { return probe(gelu(t), w); }, x)) < 1e-8);
    CHECK(max_relative_error(relu_backward(x, w), finite_diff_grad([&](const Tensor& t) { return probe(relu(t), w); }, x)) < 1e-8);
}

TEST_CASE("dropout scales survivors and is the identity at inference") {
    SeededRng rng(9);
    const Tensor x({100000}, 1.0);
    const DropoutResult d = dropout(x, 0.5, rng, true);
    std::size_t zeros = 0;
    for (double v : d.out.data()) {
        if (v == 0.0) ++zeros;
        else REQUIRE(v == 2.0);
    }
    CHECK(static_cast<double>(zeros) / 1e5 == doctest::Approx(0.5).epsilon(0.02));
    const DropoutResult e = dropout(x, 0.5, rng, false);
    CHECK(e.out == x);
    CHECK(e.scale == Tensor(x.shape(), 1.0));
    CHECK_THROWS_AS(dropout(x, 1.0, rng, true), DomainError);
    CHECK_THROWS_AS(dropout(x, -0.1, rng, true), DomainError);
}
