#include <doctest.h>

#include <fstream>
#include <sstream>

#include "nilm/attention.hpp"
#include "nilm/checkpoint.hpp"
#include "nilm/commands.hpp"
#include "nilm/errors.hpp"
#include "nilm/model.hpp"
#include "support.hpp"

using namespace nilm;
using testing::max_abs_diff;
using testing::random_tensor;

TEST_CASE("parameter count of the default configuration") {
    // L = 480, hidden 16, 2 layers, 2 heads of d_k 8, FFN width 64.
    const std::size_t embed = 16 * 5 + 16;
    const std::size_t pos = 240 * 16;
    const std::size_t qkv = 3 * 2 * 16 * 8;
    const std::size_t out = 16 * 16 + 16;
    const std::size_t ffn = 16 * 64 + 64 + 64 * 16 + 16;
    const std::size_t norms = 4 * 16;
    const std::size_t meta = 16 * 16 + 16 + 16 + 1;
    const std::size_t recon = 16 * 16 * 4 + 16;
    const std::size_t heads = 2 * (16 + 1);
    const std::size_t standard_layer = qkv + out + ffn + norms;

    ModelConfig c;
    CHECK(NilmModel::init(c).parameter_count() == embed + pos + 2 * (standard_layer + meta) + recon + heads);
    CHECK(NilmModel::init(c).parameter_count() == 12052);
    c.mode = AttentionMode::standard();
    CHECK(NilmModel::init(c).parameter_count() == 11474);
    c.mode = AttentionMode::learned_raw();
    CHECK(NilmModel::init(c).parameter_count() == 11476);
}

TEST_CASE("config validation") {
    ModelConfig c;
    c.window_len = 31;
    CHECK_THROWS_AS(c.validate(), DomainError);
    c.window_len = 32;
    c.heads = 3;
    CHECK_THROWS_AS(c.validate(), DomainError);
    c.heads = 2;
    c.dropout = 1.0;
    CHECK_THROWS_AS(c.validate(), DomainError);
}

TEST_CASE("initialisation is seeded") {
    ModelConfig c;
    c.window_len = 32;
    const NilmModel a = NilmModel::init(c), b = NilmModel::init(c);
    CHECK(a.embed_w == b.embed_w);
    CHECK(a.layers[1].ffn_w2 == b.layers[1].ffn_w2);
    c.seed = 1;
    CHECK(!(NilmModel::init(c).embed_w == a.embed_w));
    CHECK(a.layers[0].attn.b_o == Tensor({16}));
    CHECK(a.layers[0].norm1_gain == Tensor({16}, 1.0));
}

TEST_CASE("forward produces one power and one logit per sample") {
    ModelConfig c;
    c.window_len = 32;
    const NilmModel m = NilmModel::init(c);
    SeededRng rng(1);
    const Tensor x = random_tensor({3, 32}, rng);
    const ForwardResult f = forward(m, x, false, SeededRng());
    CHECK(f.power.shape() == Shape{3, 32});
    CHECK(f.status_logits.shape() == Shape{3, 32});
    CHECK(f.encode.caches.size() == 3);
    CHECK(f.trace(2, 1).heads.size() == 2);
    CHECK(f.trace(0, 1).pooled_from_prev);
    CHECK(!f.trace(0, 0).pooled_from_prev);
    CHECK_THROWS_AS(forward(m, random_tensor({1, 30}, rng), false, SeededRng()), ShapeError);
}

TEST_CASE("training-mode forward is a fixed function for a fixed rng") {
    ModelConfig c;
    c.window_len = 16;
    const NilmModel m = NilmModel::init(c);
    SeededRng rng(2);
    const Tensor x = random_tensor({2, 16}, rng);
    const SeededRng drop(7, 1);
    CHECK(forward(m, x, true, drop).power == forward(m, x, true, drop).power);
    CHECK(!(forward(m, x, true, drop).power == forward(m, x, false, drop).power));
}

TEST_CASE("zeroed meta network matches the equivalent fixed multiplier") {
    ModelConfig c;
    c.window_len = 32;
    NilmModel meta = NilmModel::init(c);
    for (auto& layer : meta.layers) *layer.meta = layer.meta->zeros_like();
    c.mode = AttentionMode::fixed(squash_tau(0.0, c.d_k()) / std::sqrt(static_cast<double>(c.d_k())));
    NilmModel fixed = meta;
    fixed.config = c;
    for (auto& layer : fixed.layers) layer.meta.reset();
    SeededRng rng(3);
    const Tensor x = random_tensor({2, 32}, rng);
    const ForwardResult a = forward(meta, x, false, SeededRng());
    const ForwardResult b = forward(fixed, x, false, SeededRng());
    CHECK(max_abs_diff(a.power, b.power) <= 1e-6);
    CHECK(max_abs_diff(a.status_logits, b.status_logits) <= 1e-6);
}

TEST_CASE("small-model gradients match finite differences and reach every tensor") {
    for (const auto& mode : {AttentionMode::standard(), AttentionMode::learned_raw(), AttentionMode::meta()}) {
        CAPTURE(mode.to_string());
        ModelConfig c;
        c.window_len = 8;
        c.hidden = 4;
        c.mode = mode;
        const auto rows = gradcheck_model(c, 2, LossConfig{}, MaskingScheme{}, 1e-5);
        for (const auto& r : rows) {
            CAPTURE(r.parameter);
            CHECK(r.max_rel_error < 1e-5);
        }

        const NilmModel m = NilmModel::init(c);
        SeededRng rng(4);
        const Tensor x = random_tensor({2, 8}, rng);
        const ForwardResult f = forward(m, x, true, SeededRng(1));
        const NilmModel g = backward(m, f, random_tensor({2, 8}, rng), random_tensor({2, 8}, rng));
        visit_model_params(g, [&](const std::string& name, const Tensor& t) {
            CAPTURE(name);
            double norm = 0;
            for (double v : t.data()) norm += v * v;
            CHECK(norm > 0.0);
        });
    }
}

TEST_CASE("architecture hash tracks shape-determining fields only") {
    ModelConfig a;
    ModelConfig b = a;
    b.seed = 9;
    b.dropout = 0.1;
    CHECK(architecture_hash(a) == architecture_hash(b));
    b.mode = AttentionMode::standard();
    CHECK(architecture_hash(a) != architecture_hash(b));
    b = a;
    b.window_len = 32;
    CHECK(architecture_hash(a) != architecture_hash(b));
}

TEST_CASE("checkpoints round-trip bit for bit") {
    const auto dir = testing::scratch_dir("ckpt");
    for (const auto& mode : {AttentionMode::meta(), AttentionMode::learned_raw(), AttentionMode::fixed(0.125)}) {
        ModelConfig c;
        c.window_len = 16;
        c.mode = mode;
        c.seed = 5;
        const NilmModel m = NilmModel::init(c);
        save_checkpoint(dir / "m.nilm", m, {{"note", "x"}});
        const Checkpoint ck = load_checkpoint(dir / "m.nilm");
        CHECK(ck.meta.at("note") == "x");
        CHECK(ck.model.config.mode == mode);
        std::vector<const Tensor*> a, b;
        visit_model_params(m, [&](const std::string&, const Tensor& t) { a.push_back(&t); });
        visit_model_params(ck.model, [&](const std::string&, const Tensor& t) { b.push_back(&t); });
        REQUIRE(a.size() == b.size());
        for (std::size_t i = 0; i < a.size(); ++i) CHECK(*a[i] == *b[i]);
    }
}

TEST_CASE("damaged checkpoints are rejected") {
    const auto dir = testing::scratch_dir("ckpt_bad");
    ModelConfig c;
    c.window_len = 16;
    save_checkpoint(dir / "m.nilm", NilmModel::init(c));
    std::ifstream in(dir / "m.nilm", std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    std::string text = ss.str();

    std::string hidden = text;
    hidden.replace(hidden.find("meta hidden 16"), 14, "meta hidden 32");
    std::ofstream(dir / "arch.nilm", std::ios::binary) << hidden;
    CHECK_THROWS_AS(load_checkpoint(dir / "arch.nilm"), DataError);

    std::ofstream(dir / "trunc.nilm", std::ios::binary) << text.substr(0, text.size() - 100);
    CHECK_THROWS_AS(load_checkpoint(dir / "trunc.nilm"), DataError);

    std::ofstream(dir / "junk.nilm") << "hello\n";
    CHECK_THROWS_AS(load_checkpoint(dir / "junk.nilm"), DataError);
    CHECK_THROWS_AS(load_checkpoint(dir / "missing.nilm"), DataError);
}

TEST_CASE("oracle network reproduces block on/off states") {
    ModelConfig c;
    c.window_len = 16;
    c.mode = AttentionMode::meta();
    const NilmModel m = testing::oracle_model(c);
    Tensor x({1, 16});
    for (std::size_t t = 0; t < 16; ++t) x[t] = (t / 4) % 2 ? 1.3 : -0.7;
    const ForwardResult f = forward(m, x, false, SeededRng());
    for (std::size_t t = 0; t < 16; ++t) CHECK(f.power[t] == doctest::Approx(x[t] > 0 ? 1.0 : 0.0).epsilon(1e-4));
}
