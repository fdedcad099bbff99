#pragma once

#include <cstddef>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "nilm/rng.hpp"
#include "nilm/tensor.hpp"

namespace nilm {

enum class AttentionVariant {
    Standard,                 // tau = sqrt(d_k), diagonal kept
    DiagMaskedFixedTau,       // tau = multiplier * sqrt(d_k)
    DiagMaskedLearnedRawTau,  // tau is a free scalar parameter
    DiagMaskedMetaTau,        // tau predicted per input by a MetaNetwork
};

struct AttentionMode {
    AttentionVariant variant = AttentionVariant::Standard;
    double multiplier = 1.0;  // DiagMaskedFixedTau only

    static AttentionMode standard() { return {}; }
    static AttentionMode fixed(double multiplier);
    static AttentionMode learned_raw() { return {AttentionVariant::DiagMaskedLearnedRawTau, 1.0}; }
    static AttentionMode meta() { return {AttentionVariant::DiagMaskedMetaTau, 1.0}; }

    bool masked() const { return variant != AttentionVariant::Standard; }
    bool uses_meta() const { return variant == AttentionVariant::DiagMaskedMetaTau; }
    bool uses_raw_tau() const { return variant == AttentionVariant::DiagMaskedLearnedRawTau; }

    // "standard", "masked" (= fixed:1), "fixed:<c>" with c a decimal or a
    // fraction such as 1/8, "raw", "meta". Throws UsageError.
    static AttentionMode parse(std::string_view text);
    std::string to_string() const;

    bool operator==(const AttentionMode&) const = default;
};

// Per-head projections plus the head combiner. d = heads * d_k.
struct AttentionParams {
    std::size_t heads = 0;
    std::size_t d_k = 0;
    std::vector<Tensor> w_q, w_k, w_v;  // each [d x d_k]
    Tensor w_o;                         // [(heads * d_k) x d]
    Tensor b_o;                         // [d]
    Tensor raw_tau;                     // [1]; read only by DiagMaskedLearnedRawTau

    std::size_t model_dim() const { return heads * d_k; }

    // uniform(+-1/sqrt(fan_in)) weights, zero b_o, raw_tau = sqrt(d_k).
    static AttentionParams init(std::size_t d, std::size_t heads, SeededRng& rng);
    AttentionParams zeros_like() const;
};

// tau = squash(w2^T relu(w1^T x_pooled + b1) + b2)
struct MetaNetwork {
    Tensor w1;  // [d x h]
    Tensor b1;  // [h]
    Tensor w2;  // [h x 1]
    Tensor b2;  // [1]
    std::size_t d_k = 0;

    static MetaNetwork init(std::size_t d, std::size_t hidden, std::size_t d_k, SeededRng& rng);
    MetaNetwork zeros_like() const;
};

// Visits every learnable tensor of an attention block in a fixed order.
// Works for const and non-const P.
template <class P, class F>
void visit_attention_params(P& p, const AttentionMode& mode, const std::string& prefix, F&& f) {
    for (std::size_t h = 0; h < p.w_q.size(); ++h) {
        const std::string hp = prefix + "head" + std::to_string(h) + ".";
        f(hp + "w_q", p.w_q[h]);
        f(hp + "w_k", p.w_k[h]);
        f(hp + "w_v", p.w_v[h]);
    }
    f(prefix + "w_o", p.w_o);
    f(prefix + "b_o", p.b_o);
    if (mode.uses_raw_tau()) f(prefix + "raw_tau", p.raw_tau);
}

template <class M, class F>
void visit_meta_params(M& m, const std::string& prefix, F&& f) {
    f(prefix + "w1", m.w1);
    f(prefix + "b1", m.b1);
    f(prefix + "w2", m.w2);
    f(prefix + "b2", m.b2);
}

struct AttentionHeadTrace {
    Tensor q, k, v;     // [n x d_k]
    Tensor similarity;  // pre-mask S = Q K^T
    Tensor attention;   // post-softmax A
};

struct AttentionTrace {
    AttentionMode mode;
    std::vector<AttentionHeadTrace> heads;
    double tau_used = 0.0;
    double tau_raw = 0.0;          // pre-guard value for DiagMaskedLearnedRawTau
    bool tau_guard_fired = false;  // raw tau was <= 0 and was replaced by |tau| + 1e-6
    Tensor input;                  // x [n x d]
    Tensor concat;                 // heads concatenated [n x heads*d_k]
    // Meta-network intermediates (DiagMaskedMetaTau only).
    bool pooled_from_prev = false;
    Tensor pooled;      // [d]
    Tensor meta_hidden;  // pre-ReLU [h]
    double meta_logit = 0.0;
};

struct AttentionResult {
    Tensor output;  // [n x d]
    AttentionTrace trace;
};

struct AttentionGrads {
    AttentionParams params;
    std::optional<MetaNetwork> meta;
    Tensor input;           // dL/dx
    Tensor prev_block_out;  // dL/d(prev_block_out); empty unless pooling used it
};

struct Projections {
    std::vector<Tensor> q, k, v;
};

Projections project_qkv(const Tensor& x, const AttentionParams& params);

// S_ij = Q_i . K_j
Tensor similarity(const Tensor& q, const Tensor& k);

// S_ii <- kNegMask. Requires a square matrix with n >= 2.
Tensor mask_diagonal(const Tensor& s);

// Mean over the token axis.
Tensor pool_tokens(const Tensor& x);

// Maps a raw scalar into (sqrt(d_k)/8, 8 sqrt(d_k)); strictly increasing.
double squash_tau(double raw, std::size_t d_k);
double squash_tau_derivative(double raw, std::size_t d_k);
double tau_lower_bound(std::size_t d_k);
double tau_upper_bound(std::size_t d_k);

struct MetaForward {
    Tensor hidden;  // pre-ReLU
    double logit = 0.0;
    double tau = 0.0;
};
MetaForward meta_forward(const MetaNetwork& meta, const Tensor& pooled);
double compute_tau(const MetaNetwork& meta, const Tensor& pooled);

// Softmax of the (optionally diagonal-masked) similarity at temperature tau.
Tensor attend_scores(const Tensor& similarity, bool masked, double tau);

// Multi-head attention under `mode`. For DiagMaskedMetaTau the meta-network
// pools `prev_block_out` when given, otherwise `x`.
AttentionResult attention_forward(const Tensor& x, const AttentionParams& params, const AttentionMode& mode,
                                  const MetaNetwork* meta = nullptr, const Tensor* prev_block_out = nullptr);

AttentionGrads attention_backward(const AttentionTrace& trace, const Tensor& upstream, const AttentionParams& params,
                                  const MetaNetwork* meta = nullptr);

// The array used to illustrate temperature smoothing.
std::vector<double> default_smoothing_logits();

struct SmoothingRow {
    double dk;
    std::size_t index;
    double logit;
    double prob;
};

// softmax(x / sqrt(d_k)) for every d_k.
std::vector<SmoothingRow> smoothing_study(const std::vector<double>& x, const std::vector<double>& dk_values);
void write_smoothing_csv(std::ostream& out, const std::vector<SmoothingRow>& rows);

}  // namespace nilm
