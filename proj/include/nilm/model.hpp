#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "nilm/attention.hpp"
#include "nilm/rng.hpp"
#include "nilm/tensor.hpp"

namespace nilm {

struct ModelConfig {
    std::size_t window_len = 480;
    std::size_t hidden = 16;
    std::size_t layers = 2;
    std::size_t heads = 2;
    std::size_t ffn_mult = 4;
    double dropout = 0.5;
    AttentionMode mode = AttentionMode::meta();
    std::uint64_t seed = 0;

    std::size_t tokens() const { return window_len / 2; }
    std::size_t d_k() const { return hidden / heads; }
    std::size_t meta_hidden() const { return hidden; }
    void validate() const;
};

// Geometry of the embedding and reconstruction blocks.
inline constexpr std::size_t kEmbedKernel = 5;
inline constexpr std::size_t kEmbedPadding = 2;
inline constexpr std::size_t kReconKernel = 4;
inline constexpr std::size_t kReconStride = 2;
inline constexpr std::size_t kReconPadding = 1;

struct TransformerLayer {
    AttentionParams attn;
    std::optional<MetaNetwork> meta;
    Tensor ffn_w1, ffn_b1;  // [d x ffn*d], [ffn*d]
    Tensor ffn_w2, ffn_b2;  // [ffn*d x d], [d]
    Tensor norm1_gain, norm1_bias;
    Tensor norm2_gain, norm2_bias;
};

struct NilmModel {
    ModelConfig config;
    Tensor embed_w;    // [hidden x 1 x 5]
    Tensor embed_b;    // [hidden]
    Tensor pos_embed;  // [L/2 x hidden]
    std::vector<TransformerLayer> layers;
    Tensor recon_w;  // [hidden x hidden x 4]
    Tensor recon_b;  // [hidden]
    Tensor power_w, power_b;    // [hidden x 1], [1]
    Tensor status_w, status_b;  // [hidden x 1], [1]

    static NilmModel init(const ModelConfig& config);
    // Same architecture, every tensor zero. Used as a gradient container.
    NilmModel zeros_like() const;
    std::size_t parameter_count() const;
};

// Calls f(name, tensor) for every learnable tensor in a fixed order. M may be
// const or non-const.
template <class M, class F>
void visit_model_params(M& m, F&& f) {
    f("embed.w", m.embed_w);
    f("embed.b", m.embed_b);
    f("pos_embed", m.pos_embed);
    for (std::size_t l = 0; l < m.layers.size(); ++l) {
        auto& layer = m.layers[l];
        const std::string p = "layer" + std::to_string(l) + ".";
        visit_attention_params(layer.attn, m.config.mode, p + "attn.", f);
        if (m.config.mode.uses_meta()) visit_meta_params(*layer.meta, p + "meta.", f);
        f(p + "ffn.w1", layer.ffn_w1);
        f(p + "ffn.b1", layer.ffn_b1);
        f(p + "ffn.w2", layer.ffn_w2);
        f(p + "ffn.b2", layer.ffn_b2);
        f(p + "norm1.gain", layer.norm1_gain);
        f(p + "norm1.bias", layer.norm1_bias);
        f(p + "norm2.gain", layer.norm2_gain);
        f(p + "norm2.bias", layer.norm2_bias);
    }
    f("recon.w", m.recon_w);
    f("recon.b", m.recon_b);
    f("head_power.w", m.power_w);
    f("head_power.b", m.power_b);
    f("head_status.w", m.status_w);
    f("head_status.b", m.status_b);
}

struct NamedTensor {
    std::string name;
    Tensor* tensor;
};
std::vector<NamedTensor> named_parameters(NilmModel& m);

// ---- forward --------------------------------------------------------------

struct EmbedCache {
    Tensor signal;    // [B x L x 1]
    Tensor conv_out;  // [B x L x hidden] (bias included)
    std::vector<std::size_t> pool_argmax;
    Tensor dropout_scale;
};

struct EmbedResult {
    Tensor tokens;  // [B x L/2 x hidden]
    EmbedCache cache;
};

struct LayerCache {
    AttentionTrace trace;
    Tensor drop1_scale;
    Tensor sum1;  // x + dropout(attn(x)), pre norm1
    Tensor x1;
    Tensor ffn_pre;  // pre-GELU
    Tensor ffn_act;
    Tensor drop2_scale;
    Tensor sum2;  // x1 + dropout(ffn(x1)), pre norm2
};

struct EncodeResult {
    Tensor encoded;                             // [B x n x hidden]
    std::vector<std::vector<LayerCache>> caches;  // [sample][layer]
};

struct ReconstructResult {
    Tensor power;          // [B x L]
    Tensor status_logits;  // [B x L]
    Tensor deconv_out;     // [B x L x hidden]
};

struct ForwardResult {
    Tensor power;
    Tensor status_logits;
    EmbedCache embed;
    Tensor tokens;
    EncodeResult encode;
    Tensor deconv_out;

    // Attention trace of `layer` for batch element `sample`.
    const AttentionTrace& trace(std::size_t sample, std::size_t layer) const {
        return encode.caches.at(sample).at(layer).trace;
    }
};

// conv (stride 1) -> max-pool(2) -> + positional embedding -> dropout.
EmbedResult embed(const Tensor& aggregate, const NilmModel& model, bool training, SeededRng rng);

// Stack of transformer layers applied independently per batch element.
// Dropout for sample b draws from rng.split(b).
EncodeResult encode(const Tensor& tokens, const NilmModel& model, bool training, SeededRng rng);

ReconstructResult reconstruct(const Tensor& encoded, const NilmModel& model);

// Full network. Training-mode dropout draws from substreams of `rng`, so a
// fixed rng gives a fixed function of the weights.
ForwardResult forward(const NilmModel& model, const Tensor& aggregate, bool training, const SeededRng& rng);

// Gradients of a scalar loss w.r.t. every parameter, given dL/dpower and
// dL/dstatus_logits. Returned in a model-shaped container.
NilmModel backward(const NilmModel& model, const ForwardResult& fwd, const Tensor& grad_power,
                   const Tensor& grad_status);

// Encoder-only helpers exposed for timing and diagnostics.
Tensor encode_sample(const Tensor& x, const NilmModel& model, bool training, SeededRng& rng,
                     std::vector<LayerCache>* caches);

// Hash of the architecture-determining fields (window, widths, depth, mode).
std::uint64_t architecture_hash(const ModelConfig& config);

}  // namespace nilm
