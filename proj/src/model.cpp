#include "nilm/model.hpp"

#include <cmath>

#include "nilm/errors.hpp"
#include "nilm/hash.hpp"
#include "nilm/ops.hpp"

namespace nilm {

namespace {

Tensor uniform_init(Shape shape, std::size_t fan_in, SeededRng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    Tensor t(std::move(shape));
    for (auto& v : t.data()) v = rng.uniform(-bound, bound);
    return t;
}

// [B x L x H] -> [B*L x H] view copy and back.
Tensor flatten_rows(const Tensor& t) { return t.reshaped({t.size() / t.cols(), t.cols()}); }

}  // namespace

void ModelConfig::validate() const {
    if (hidden == 0 || heads == 0 || hidden % heads != 0) {
        throw DomainError("hidden (" + std::to_string(hidden) + ") must be a positive multiple of heads (" +
                          std::to_string(heads) + ")");
    }
    if (window_len < 4 || window_len % 2 != 0) {
        throw DomainError("window_len must be even and >= 4, got " + std::to_string(window_len));
    }
    if (layers == 0) throw DomainError("at least one transformer layer is required");
    if (ffn_mult == 0) throw DomainError("ffn_mult must be positive");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw DomainError("dropout must be in [0,1)");
}

NilmModel NilmModel::init(const ModelConfig& config) {
    config.validate();
    SeededRng rng(config.seed, 0x6d6f64656cULL);
    const std::size_t h = config.hidden, n = config.tokens(), f = config.ffn_mult * h;
    NilmModel m;
    m.config = config;
    m.embed_w = uniform_init({h, 1, kEmbedKernel}, kEmbedKernel, rng);
    m.embed_b = uniform_init({h}, kEmbedKernel, rng);
    m.pos_embed = Tensor({n, h});
    for (auto& v : m.pos_embed.data()) v = rng.normal(0.0, 0.02);
    for (std::size_t l = 0; l < config.layers; ++l) {
        TransformerLayer layer;
        layer.attn = AttentionParams::init(h, config.heads, rng);
        if (config.mode.uses_meta()) layer.meta = MetaNetwork::init(h, config.meta_hidden(), config.d_k(), rng);
        layer.ffn_w1 = uniform_init({h, f}, h, rng);
        layer.ffn_b1 = uniform_init({f}, h, rng);
        layer.ffn_w2 = uniform_init({f, h}, f, rng);
        layer.ffn_b2 = uniform_init({h}, f, rng);
        layer.norm1_gain = Tensor({h}, 1.0);
        layer.norm1_bias = Tensor({h});
        layer.norm2_gain = Tensor({h}, 1.0);
        layer.norm2_bias = Tensor({h});
        m.layers.push_back(std::move(layer));
    }
    m.recon_w = uniform_init({h, h, kReconKernel}, h * kReconKernel, rng);
    m.recon_b = uniform_init({h}, h * kReconKernel, rng);
    m.power_w = uniform_init({h, 1}, h, rng);
    m.power_b = uniform_init({1}, h, rng);
    m.status_w = uniform_init({h, 1}, h, rng);
    m.status_b = uniform_init({1}, h, rng);
    return m;
}

NilmModel NilmModel::zeros_like() const {
    NilmModel z = *this;
    visit_model_params(z, [](const std::string&, Tensor& t) { t.fill(0.0); });
    for (auto& layer : z.layers) {
        // tensors the current mode does not visit are zeroed too
        layer.attn.raw_tau.fill(0.0);
        if (layer.meta) *layer.meta = layer.meta->zeros_like();
    }
    return z;
}

std::size_t NilmModel::parameter_count() const {
    std::size_t n = 0;
    visit_model_params(*this, [&](const std::string&, const Tensor& t) { n += t.size(); });
    return n;
}

std::vector<NamedTensor> named_parameters(NilmModel& m) {
    std::vector<NamedTensor> out;
    visit_model_params(m, [&](const std::string& name, Tensor& t) { out.push_back({name, &t}); });
    return out;
}

std::uint64_t architecture_hash(const ModelConfig& c) {
    Fnv1a h;
    h.str("nilm-arch-v1");
    h.u64(c.window_len).u64(c.hidden).u64(c.layers).u64(c.heads).u64(c.ffn_mult);
    h.str(c.mode.to_string());
    return h.value();
}

// ---- embedding ------------------------------------------------------------

EmbedResult embed(const Tensor& aggregate, const NilmModel& model, bool training, SeededRng rng) {
    const ModelConfig& cfg = model.config;
    if (aggregate.rank() != 2 || aggregate.dim(1) != cfg.window_len) {
        throw ShapeError("embed: expected [batch x " + std::to_string(cfg.window_len) + "], got " +
                         shape_str(aggregate.shape()));
    }
    const std::size_t batch = aggregate.dim(0), n = cfg.tokens(), h = cfg.hidden;
    EmbedResult r;
    r.cache.signal = aggregate.reshaped({batch, cfg.window_len, 1});
    r.cache.conv_out = add_bias(conv1d(r.cache.signal, model.embed_w, kEmbedPadding, 1), model.embed_b);
    PoolResult pooled = max_pool2(r.cache.conv_out);
    r.cache.pool_argmax = std::move(pooled.argmax);
    Tensor pre = std::move(pooled.out);
    for (std::size_t b = 0; b < batch; ++b) {
        double* dst = pre.ptr() + b * n * h;
        for (std::size_t i = 0; i < n * h; ++i) dst[i] += model.pos_embed[i];
    }
    DropoutResult d = dropout(pre, cfg.dropout, rng, training);
    r.tokens = std::move(d.out);
    r.cache.dropout_scale = std::move(d.scale);
    return r;
}

// ---- transformer stack ----------------------------------------------------

namespace {

Tensor layer_forward(const Tensor& x, const TransformerLayer& layer, const ModelConfig& cfg, bool training,
                     SeededRng& rng, bool pool_previous, LayerCache* cache) {
    const MetaNetwork* meta = layer.meta ? &*layer.meta : nullptr;
    AttentionResult a = attention_forward(x, layer.attn, cfg.mode, meta, pool_previous ? &x : nullptr);
    DropoutResult d1 = dropout(a.output, cfg.dropout, rng, training);
    Tensor sum1 = add(x, d1.out);
    Tensor x1 = layer_norm(sum1, layer.norm1_gain, layer.norm1_bias);
    Tensor pre = add_bias(matmul(x1, layer.ffn_w1), layer.ffn_b1);
    Tensor act = gelu(pre);
    Tensor f = add_bias(matmul(act, layer.ffn_w2), layer.ffn_b2);
    DropoutResult d2 = dropout(f, cfg.dropout, rng, training);
    Tensor sum2 = add(x1, d2.out);
    Tensor out = layer_norm(sum2, layer.norm2_gain, layer.norm2_bias);
    if (cache) {
        cache->trace = std::move(a.trace);
        cache->drop1_scale = std::move(d1.scale);
        cache->sum1 = std::move(sum1);
        cache->x1 = std::move(x1);
        cache->ffn_pre = std::move(pre);
        cache->ffn_act = std::move(act);
        cache->drop2_scale = std::move(d2.scale);
        cache->sum2 = std::move(sum2);
    }
    return out;
}

// Returns dL/dx and accumulates parameter gradients into `grads`.
Tensor layer_backward(const LayerCache& c, const Tensor& grad_out, const TransformerLayer& layer,
                      TransformerLayer& grads) {
    LayerNormGrad n2 = layer_norm_backward(c.sum2, layer.norm2_gain, grad_out);
    add_to(grads.norm2_gain, n2.gain);
    add_to(grads.norm2_bias, n2.bias);
    Tensor dx1 = n2.x;
    const Tensor df = mul(n2.x, c.drop2_scale);
    add_to(grads.ffn_w2, matmul_tn(c.ffn_act, df));
    add_to(grads.ffn_b2, bias_grad(df));
    const Tensor dpre = gelu_backward(c.ffn_pre, matmul_nt(df, layer.ffn_w2));
    add_to(grads.ffn_w1, matmul_tn(c.x1, dpre));
    add_to(grads.ffn_b1, bias_grad(dpre));
    add_to(dx1, matmul_nt(dpre, layer.ffn_w1));

    LayerNormGrad n1 = layer_norm_backward(c.sum1, layer.norm1_gain, dx1);
    add_to(grads.norm1_gain, n1.gain);
    add_to(grads.norm1_bias, n1.bias);
    Tensor dx = n1.x;
    const Tensor da = mul(n1.x, c.drop1_scale);
    const MetaNetwork* meta = layer.meta ? &*layer.meta : nullptr;
    AttentionGrads ag = attention_backward(c.trace, da, layer.attn, meta);
    add_to(dx, ag.input);
    if (!ag.prev_block_out.empty()) add_to(dx, ag.prev_block_out);

    AttentionParams& ga = grads.attn;
    for (std::size_t h = 0; h < ga.heads; ++h) {
        add_to(ga.w_q[h], ag.params.w_q[h]);
        add_to(ga.w_k[h], ag.params.w_k[h]);
        add_to(ga.w_v[h], ag.params.w_v[h]);
    }
    add_to(ga.w_o, ag.params.w_o);
    add_to(ga.b_o, ag.params.b_o);
    add_to(ga.raw_tau, ag.params.raw_tau);
    if (ag.meta) {
        add_to(grads.meta->w1, ag.meta->w1);
        add_to(grads.meta->b1, ag.meta->b1);
        add_to(grads.meta->w2, ag.meta->w2);
        add_to(grads.meta->b2, ag.meta->b2);
    }
    return dx;
}

}  // namespace

Tensor encode_sample(const Tensor& x, const NilmModel& model, bool training, SeededRng& rng,
                     std::vector<LayerCache>* caches) {
    Tensor cur = x;
    if (caches) caches->assign(model.layers.size(), LayerCache{});
    for (std::size_t l = 0; l < model.layers.size(); ++l) {
        // Later blocks pool the previous block's output for the meta-network.
        cur = layer_forward(cur, model.layers[l], model.config, training, rng, l > 0,
                            caches ? &(*caches)[l] : nullptr);
    }
    return cur;
}

EncodeResult encode(const Tensor& tokens, const NilmModel& model, bool training, SeededRng rng) {
    const ModelConfig& cfg = model.config;
    if (tokens.rank() != 3 || tokens.dim(2) != cfg.hidden) {
        throw ShapeError("encode: expected [batch x n x " + std::to_string(cfg.hidden) + "], got " +
                         shape_str(tokens.shape()));
    }
    const std::size_t batch = tokens.dim(0), n = tokens.dim(1), h = cfg.hidden;
    EncodeResult r;
    r.encoded = Tensor(tokens.shape());
    r.caches.resize(batch);
    for (std::size_t b = 0; b < batch; ++b) {
        SeededRng sample_rng = rng.split(b);
        const Tensor out = encode_sample(tokens.slice0(b), model, training, sample_rng, &r.caches[b]);
        std::copy(out.data().begin(), out.data().end(), r.encoded.ptr() + b * n * h);
    }
    return r;
}

// ---- reconstruction -------------------------------------------------------

ReconstructResult reconstruct(const Tensor& encoded, const NilmModel& model) {
    const ModelConfig& cfg = model.config;
    if (encoded.rank() != 3 || encoded.dim(1) != cfg.tokens() || encoded.dim(2) != cfg.hidden) {
        throw ShapeError("reconstruct: expected [batch x " + std::to_string(cfg.tokens()) + " x " +
                         std::to_string(cfg.hidden) + "], got " + shape_str(encoded.shape()));
    }
    const std::size_t batch = encoded.dim(0);
    ReconstructResult r;
    r.deconv_out = add_bias(deconv1d(encoded, model.recon_w, kReconStride, kReconPadding), model.recon_b);
    if (r.deconv_out.dim(1) != cfg.window_len) throw ShapeError("reconstruct: deconvolution geometry mismatch");
    const Tensor rows = flatten_rows(r.deconv_out);
    r.power = add_bias(matmul(rows, model.power_w), model.power_b).reshaped({batch, cfg.window_len});
    r.status_logits = add_bias(matmul(rows, model.status_w), model.status_b).reshaped({batch, cfg.window_len});
    return r;
}

ForwardResult forward(const NilmModel& model, const Tensor& aggregate, bool training, const SeededRng& rng) {
    ForwardResult f;
    EmbedResult e = embed(aggregate, model, training, rng.split(0));
    f.embed = std::move(e.cache);
    f.tokens = std::move(e.tokens);
    f.encode = encode(f.tokens, model, training, rng.split(1));
    ReconstructResult rc = reconstruct(f.encode.encoded, model);
    f.power = std::move(rc.power);
    f.status_logits = std::move(rc.status_logits);
    f.deconv_out = std::move(rc.deconv_out);
    return f;
}

NilmModel backward(const NilmModel& model, const ForwardResult& fwd, const Tensor& grad_power,
                   const Tensor& grad_status) {
    const ModelConfig& cfg = model.config;
    if (grad_power.shape() != fwd.power.shape() || grad_status.shape() != fwd.status_logits.shape()) {
        throw ShapeError("backward: output gradient shapes do not match forward outputs");
    }
    const std::size_t batch = grad_power.dim(0), L = cfg.window_len, h = cfg.hidden, n = cfg.tokens();
    NilmModel g = model.zeros_like();

    // heads
    const Tensor rows = flatten_rows(fwd.deconv_out);
    const Tensor gp = grad_power.reshaped({batch * L, 1});
    const Tensor gs = grad_status.reshaped({batch * L, 1});
    g.power_w = matmul_tn(rows, gp);
    g.power_b = bias_grad(gp);
    g.status_w = matmul_tn(rows, gs);
    g.status_b = bias_grad(gs);
    Tensor d_rows = matmul_nt(gp, model.power_w);
    add_to(d_rows, matmul_nt(gs, model.status_w));
    const Tensor d_deconv = d_rows.reshaped({batch, L, h});
    g.recon_b = bias_grad(d_deconv);
    Conv1dGrad dc = deconv1d_backward(fwd.encode.encoded, model.recon_w, d_deconv, kReconStride, kReconPadding);
    g.recon_w = std::move(dc.kernels);

    // transformer stack, per sample, layers in reverse
    Tensor d_tokens(fwd.tokens.shape());
    for (std::size_t b = 0; b < batch; ++b) {
        Tensor dx = dc.signal.slice0(b);
        const auto& caches = fwd.encode.caches[b];
        for (std::size_t l = model.layers.size(); l-- > 0;) {
            dx = layer_backward(caches[l], dx, model.layers[l], g.layers[l]);
        }
        std::copy(dx.data().begin(), dx.data().end(), d_tokens.ptr() + b * n * h);
    }

    // embedding
    const Tensor d_pre = mul(d_tokens, fwd.embed.dropout_scale);
    for (std::size_t b = 0; b < batch; ++b) {
        const double* src = d_pre.ptr() + b * n * h;
        for (std::size_t i = 0; i < n * h; ++i) g.pos_embed[i] += src[i];
    }
    const Tensor d_conv = max_pool2_backward(fwd.embed.conv_out.shape(), fwd.embed.pool_argmax, d_pre);
    g.embed_b = bias_grad(d_conv);
    g.embed_w = conv1d_backward(fwd.embed.signal, model.embed_w, d_conv, kEmbedPadding, 1).kernels;
    return g;
}

}  // namespace nilm
