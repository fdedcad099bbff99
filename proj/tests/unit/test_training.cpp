#include <doctest.h>

#include <cmath>
#include <sstream>

#include "nilm/errors.hpp"
#include "nilm/gradcheck.hpp"
#include "nilm/training.hpp"
#include "support.hpp"

using namespace nilm;
using testing::random_tensor;

namespace {

// Block-aligned on/off data the oracle network decodes exactly.
WindowedDataset block_dataset(std::size_t windows, std::size_t L) {
    AlignedPair pair;
    AlignedSegment seg;
    for (std::size_t t = 0; t < windows * L; ++t) {
        const bool on = (t / 64) % 2 == 1;
        seg.appliance.push_back(on ? 400.0 : 0.0);
        seg.mains.push_back(on ? 450.0 : 50.0);
    }
    pair.segments.push_back(seg);
    return make_windows(pair, default_appliance_spec("fridge"), L, L, Split::Train);
}

WindowedDataset random_dataset(std::size_t n, std::size_t L, std::uint64_t seed) {
    SeededRng rng(seed);
    AlignedPair pair;
    AlignedSegment seg;
    bool on = false;
    for (std::size_t t = 0; t < n * L; ++t) {
        if (rng.bernoulli(0.02)) on = !on;
        const double a = on ? 150.0 + rng.normal(0, 5) : 0.0;
        seg.appliance.push_back(a);
        seg.mains.push_back(60.0 + a + std::abs(rng.normal(0, 10)));
    }
    pair.segments.push_back(seg);
    return make_windows(pair, default_appliance_spec("fridge"), L, L, Split::Train);
}

}  // namespace

TEST_CASE("masking respects the ratio and writes the mask value") {
    SeededRng rng(1);
    const Tensor x = random_tensor({10, 100}, rng);
    MaskingScheme tiny{1e-9, -1.0};
    CHECK(apply_mask(x, tiny, rng).count == 0);

    MaskingScheme s;
    const Tensor big = random_tensor({100, 1000}, rng);
    const MaskedBatch m = apply_mask(big, s, rng);
    CHECK(std::abs(static_cast<double>(m.count) / 1e5 - 0.3) < 0.01);
    for (std::size_t i = 0; i < big.size(); ++i) {
        if (m.mask[i] != 0.0) REQUIRE(m.input[i] == -1.0);
        else REQUIRE(m.input[i] == big[i]);
    }
    CHECK_THROWS_AS(apply_mask(x, MaskingScheme{0.0, -1.0}, rng), DomainError);
    CHECK_THROWS_AS(apply_mask(x, MaskingScheme{1.0, -1.0}, rng), DomainError);
}

TEST_CASE("perfect predictions leave only the margin term") {
    const Tensor truth = Tensor::from_rows({{0.1, 0.7, 0.0, 0.4}});
    const Tensor status = Tensor::from_rows({{0, 1, 0, 1}});
    const Tensor logits = Tensor::from_rows({{-40, 40, -40, 40}});
    const Tensor mask = Tensor::from_rows({{1, 1, 1, 1}});
    const LossResult r = compute_loss(truth, truth, logits, status, mask, LossConfig{});
    CHECK(r.parts.mse == 0.0);
    CHECK(r.parts.kl == 0.0);
    CHECK(r.parts.l1on == 0.0);
    CHECK(r.parts.margin < 1e-15);
    CHECK(r.parts.total < 1e-15);
}

TEST_CASE("four-position loss by hand") {
    // Masked positions 0, 1 and 3 of one window.
    const Tensor pred = Tensor::from_rows({{0.2, 0.5, 0.9, 0.1}});
    const Tensor truth = Tensor::from_rows({{0.0, 0.6, 0.9, 0.4}});
    const Tensor logits = Tensor::from_rows({{0.5, -1.0, 2.0, 1.5}});
    const Tensor status = Tensor::from_rows({{0, 1, 1, 1}});
    const Tensor mask = Tensor::from_rows({{1, 1, 0, 1}});
    const LossConfig cfg{0.1, 1.0, 1e-3};
    const LossResult r = compute_loss(pred, truth, logits, status, mask, cfg);

    const double mse = (0.2 * 0.2 + 0.1 * 0.1 + 0.3 * 0.3) / 3;
    const double margin = (std::log(1 + std::exp(0.5)) + std::log(1 + std::exp(1.0)) + std::log(1 + std::exp(-1.5))) / 3;
    const double l1 = (0.1 + 0.3) / 3;
    const double zt = std::exp(0.0) + std::exp(0.6) + std::exp(0.4);
    const double zp = std::exp(0.2) + std::exp(0.5) + std::exp(0.1);
    double kl = 0;
    for (auto [t, p] : {std::pair{0.0, 0.2}, std::pair{0.6, 0.5}, std::pair{0.4, 0.1}}) {
        const double pt = std::exp(t) / zt, pp = std::exp(p) / zp;
        kl += pt * std::log(pt / pp);
    }
    CHECK(r.parts.mse == doctest::Approx(mse).epsilon(1e-14));
    CHECK(r.parts.margin == doctest::Approx(margin).epsilon(1e-14));
    CHECK(r.parts.l1on == doctest::Approx(l1).epsilon(1e-14));
    CHECK(r.parts.kl == doctest::Approx(kl).epsilon(1e-12));
    CHECK(r.parts.positions == 3);
    CHECK(std::abs(r.parts.total - (mse + 0.1 * kl + margin + 1e-3 * l1)) < 1e-12);
    CHECK(r.grad_power[2] == 0.0);
    CHECK(r.grad_status[2] == 0.0);
}

TEST_CASE("loss components are non-negative and sum to the total") {
    SeededRng rng(2);
    for (int trial = 0; trial < 200; ++trial) {
        const Tensor p = random_tensor({3, 8}, rng, -0.5, 1.5);
        const Tensor t = random_tensor({3, 8}, rng, 0.0, 1.0);
        const Tensor z = random_tensor({3, 8}, rng, -5, 5);
        Tensor s({3, 8}), m({3, 8});
        for (std::size_t i = 0; i < 24; ++i) {
            s[i] = rng.bernoulli(0.5);
            m[i] = rng.bernoulli(0.3);
        }
        const LossConfig cfg{rng.uniform(0, 1), rng.uniform(0, 2), rng.uniform(0, 0.1)};
        const LossComponents c = compute_loss(p, t, z, s, m, cfg).parts;
        REQUIRE(c.mse >= 0);
        REQUIRE(c.kl >= -1e-15);
        REQUIRE(c.margin >= 0);
        REQUIRE(c.l1on >= 0);
        REQUIRE(std::abs(c.total - (c.mse + cfg.kl_weight * c.kl + cfg.margin_weight * c.margin +
                                    cfg.l1_on_weight * c.l1on)) <= 1e-9);
    }
}

TEST_CASE("loss gradients match finite differences") {
    SeededRng rng(3);
    const Tensor p = random_tensor({2, 6}, rng, -0.5, 1.5);
    const Tensor t = random_tensor({2, 6}, rng, 0.0, 1.0);
    const Tensor z = random_tensor({2, 6}, rng, -3, 3);
    Tensor s({2, 6}), m({2, 6});
    for (std::size_t i = 0; i < 12; ++i) {
        s[i] = i % 3 == 0;
        m[i] = i % 2 == 0 || i == 7;
    }
    const LossConfig cfg{0.3, 1.0, 0.05};
    const LossResult r = compute_loss(p, t, z, s, m, cfg);
    const Tensor gp = finite_diff_grad([&](const Tensor& x) { return compute_loss(x, t, z, s, m, cfg).parts.total; }, p);
    const Tensor gz = finite_diff_grad([&](const Tensor& x) { return compute_loss(p, t, x, s, m, cfg).parts.total; }, z);
    CHECK(max_relative_error(r.grad_power, gp) < 1e-7);
    CHECK(max_relative_error(r.grad_status, gz) < 1e-7);
}

TEST_CASE("an empty mask falls back to every position") {
    const Tensor p = Tensor::from_rows({{0.5, 0.1}});
    const Tensor t = Tensor::from_rows({{0.0, 0.1}});
    const LossResult r = compute_loss(p, t, Tensor({1, 2}), Tensor({1, 2}), Tensor({1, 2}), LossConfig{});
    CHECK(r.parts.used_fallback);
    CHECK(r.parts.positions == 2);
    CHECK(r.parts.mse == doctest::Approx(0.125));
    CHECK_THROWS_AS(compute_loss(p, t, Tensor({1, 3}), Tensor({1, 2}), Tensor({1, 2}), LossConfig{}), ShapeError);
}

TEST_CASE("adamw scalar updates") {
    SUBCASE("zero gradient and no decay") {
        Tensor w = Tensor::scalar(0.7), g = Tensor::scalar(0.0);
        AdamWState st{{1e-3, 0.9, 0.999, 1e-8, 0.0}, 0, {}, {}};
        adamw_step({{"w", &w, &g}}, st);
        CHECK(w[0] == 0.7);
    }
    SUBCASE("constant unit gradient, first step") {
        Tensor w = Tensor::scalar(0.0), g = Tensor::scalar(1.0);
        AdamWState st{{1e-4, 0.9, 0.999, 1e-8, 0.0}, 0, {}, {}};
        adamw_step({{"w", &w, &g}}, st);
        // m_hat = 1, v_hat = 1 after bias correction.
        CHECK(w[0] == doctest::Approx(-1e-4 / (1.0 + 1e-8)).epsilon(1e-12));
        adamw_step({{"w", &w, &g}}, st);
        CHECK(w[0] == doctest::Approx(-2e-4 / (1.0 + 1e-8)).epsilon(1e-10));
        CHECK(st.step == 2);
    }
    SUBCASE("decoupled decay only") {
        Tensor w = Tensor::scalar(2.0), g = Tensor::scalar(0.0);
        AdamWState st{{0.1, 0.9, 0.999, 1e-8, 0.1}, 0, {}, {}};
        adamw_step({{"w", &w, &g}}, st);
        CHECK(w[0] == doctest::Approx(2.0 * 0.99).epsilon(1e-15));
        adamw_step({{"w", &w, &g}}, st);
        CHECK(w[0] == doctest::Approx(2.0 * 0.99 * 0.99).epsilon(1e-15));
    }
    SUBCASE("zero learning rate changes nothing") {
        Tensor w = Tensor::vector({1.0, -3.0}), g = Tensor::vector({0.4, -2.0});
        AdamWState st{{0.0, 0.9, 0.999, 1e-8, 0.01}, 0, {}, {}};
        adamw_step({{"w", &w, &g}}, st);
        CHECK(w == Tensor::vector({1.0, -3.0}));
    }
    SUBCASE("non-finite gradients abort with the parameter name") {
        Tensor w = Tensor::scalar(1.0), g = Tensor::scalar(std::nan(""));
        Tensor v = Tensor::scalar(1.0), h = Tensor::scalar(1.0);
        AdamWState st;
        try {
            adamw_step({{"ok", &v, &h}, {"layer0.ffn.w1", &w, &g}}, st);
            FAIL("expected NumericError");
        } catch (const NumericError& e) {
            CHECK(std::string(e.what()).find("layer0.ffn.w1") != std::string::npos);
        }
        CHECK(v[0] == 1.0);
        CHECK(st.step == 0);
    }
}

TEST_CASE("global norm clipping") {
    ModelConfig c;
    c.window_len = 8;
    c.hidden = 4;
    NilmModel g = NilmModel::init(c).zeros_like();
    g.embed_b[0] = 3.0;
    g.power_b[0] = 4.0;
    CHECK(clip_global_norm(g, 1.0) == doctest::Approx(5.0));
    CHECK(g.embed_b[0] == doctest::Approx(0.6));
    CHECK(g.power_b[0] == doctest::Approx(0.8));
    CHECK(clip_global_norm(g, 10.0) == doctest::Approx(1.0));
    CHECK(g.power_b[0] == doctest::Approx(0.8));
}

TEST_CASE("one epoch on one batch moves the parameters") {
    ModelConfig c;
    c.window_len = 16;
    c.hidden = 8;
    const WindowedDataset d = random_dataset(4, 16, 1);
    TrainConfig tc;
    tc.epochs = 1;
    const NilmModel before = NilmModel::init(c);
    const TrainResult r = train(before, d, tc, SeededRng(1));
    REQUIRE(r.log.size() == 1);
    CHECK(!r.diverged);
    CHECK(!(r.model.embed_w == before.embed_w));
    CHECK(!(r.model.layers[0].meta->w1 == before.layers[0].meta->w1));
}

TEST_CASE("training is bit-reproducible and logs tau within bounds") {
    ModelConfig c;
    c.window_len = 16;
    c.hidden = 8;
    const WindowedDataset d = random_dataset(40, 16, 2);
    TrainConfig tc;
    tc.epochs = 3;
    tc.batch_size = 16;
    tc.optim.lr = 1e-2;
    const TrainResult a = train(NilmModel::init(c), d, tc, SeededRng(5));
    const TrainResult b = train(NilmModel::init(c), d, tc, SeededRng(5));
    std::ostringstream la, lb;
    for (const auto& row : a.log) write_epoch_log_row(la, row);
    for (const auto& row : b.log) write_epoch_log_row(lb, row);
    CHECK(la.str() == lb.str());
    CHECK(a.model.recon_w == b.model.recon_w);
    for (const auto& row : a.log)
        for (double tau : row.tau) {
            CHECK(tau > tau_lower_bound(c.d_k()));
            CHECK(tau < tau_upper_bound(c.d_k()));
        }
    const TrainResult other = train(NilmModel::init(c), d, tc, SeededRng(6));
    CHECK(!(other.model.recon_w == a.model.recon_w));
}

TEST_CASE("epoch log format") {
    EpochLog row;
    row.epoch = 3;
    row.total = 0.5;
    row.tau = {1.25, 2.0};
    std::ostringstream out;
    write_epoch_log_header(out, 2);
    write_epoch_log_row(out, row);
    CHECK(out.str() == "epoch,total_loss,mse,kl,margin,l1on,tau_layer1,tau_layer2,seconds\n3,0.5,0,0,0,0,1.25,2,0\n");
}

TEST_CASE("divergence keeps the last finite model") {
    ModelConfig c;
    c.window_len = 16;
    c.hidden = 8;
    WindowedDataset d = random_dataset(8, 16, 3);
    d.aggregate(5, 3) = std::nan("");
    TrainConfig tc;
    tc.epochs = 2;
    tc.batch_size = 4;
    const NilmModel init = NilmModel::init(c);
    const TrainResult r = train(init, d, tc, SeededRng(1));
    CHECK(r.diverged);
    CHECK(r.log.empty());
    CHECK(r.model.parameter_count() == init.parameter_count());
    bool finite = true;
    visit_model_params(r.model, [&](const std::string&, const Tensor& t) { finite = finite && t.all_finite(); });
    CHECK(finite);
}

TEST_CASE("evaluate on an oracle network is perfect") {
    const WindowedDataset d = block_dataset(8, 64);
    for (const auto& mode : {AttentionMode::standard(), AttentionMode::fixed(1.0), AttentionMode::meta()}) {
        ModelConfig c;
        c.window_len = 64;
        c.mode = mode;
        const MetricsReport r = evaluate(testing::oracle_model(c), d);
        CHECK(r.f1 == 1.0);
        CHECK(r.acc == 1.0);
        CHECK(r.n_samples == 8 * 64);
        CHECK(r.mae < 0.1);
        CHECK(r.mre < 1e-3);
    }
}

TEST_CASE("evaluate matches a brute-force recomputation") {
    ModelConfig c;
    c.window_len = 16;
    c.hidden = 8;
    const WindowedDataset d = random_dataset(10, 16, 4);
    const NilmModel m = NilmModel::init(c);
    const MetricsReport r = evaluate(m, d, 3);
    const ForwardResult f = forward(m, d.aggregate, false, SeededRng());
    std::vector<double> p, t;
    std::vector<std::uint8_t> ps, ts;
    for (std::size_t i = 0; i < d.aggregate.size(); ++i) {
        const double w = std::max(0.0, f.power[i] * d.stats.cutoff);
        p.push_back(w);
        ps.push_back(w >= d.spec.on_threshold_watts);
        t.push_back(d.target[i] * d.stats.cutoff);
        ts.push_back(d.status[i] > 0.5);
    }
    const MetricsReport ref = make_report(p, t, ps, ts);
    CHECK(r.tp == ref.tp);
    CHECK(r.fp == ref.fp);
    CHECK(r.f1 == ref.f1);
    CHECK(r.mae == doctest::Approx(ref.mae).epsilon(1e-12));
    CHECK_THROWS_AS(evaluate(m, make_windows(AlignedPair{}, d.spec, 16, 16, Split::Eval, d.stats)), DataError);
}
