#include "nilm/attention.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <iomanip>
#include <ostream>

#include "nilm/errors.hpp"
#include "nilm/ops.hpp"

namespace nilm {

namespace {

Tensor uniform_init(Shape shape, double bound, SeededRng& rng) {
    Tensor t(std::move(shape));
    for (auto& v : t.data()) v = rng.uniform(-bound, bound);
    return t;
}

double parse_number(std::string_view s) {
    double v = 0.0;
    const auto* end = s.data() + s.size();
    auto [ptr, ec] = std::from_chars(s.data(), end, v);
    if (ec != std::errc() || ptr != end) throw UsageError("not a number: '" + std::string(s) + "'");
    return v;
}

// Columns [h*d_k, (h+1)*d_k) of a [n x heads*d_k] matrix.
Tensor head_columns(const Tensor& concat, std::size_t h, std::size_t d_k) {
    const std::size_t n = concat.dim(0), w = concat.dim(1);
    Tensor out({n, d_k});
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d_k; ++j) out(i, j) = concat.ptr()[i * w + h * d_k + j];
    return out;
}

}  // namespace

// ---- mode -----------------------------------------------------------------

AttentionMode AttentionMode::fixed(double multiplier) {
    if (!(multiplier > 0.0) || !std::isfinite(multiplier)) {
        throw DomainError("fixed tau multiplier must be positive, got " + std::to_string(multiplier));
    }
    return {AttentionVariant::DiagMaskedFixedTau, multiplier};
}

AttentionMode AttentionMode::parse(std::string_view text) {
    if (text == "standard") return standard();
    if (text == "masked") return fixed(1.0);
    if (text == "raw") return learned_raw();
    if (text == "meta") return meta();
    if (text.starts_with("fixed:")) {
        std::string_view c = text.substr(6);
        double value = 0.0;
        if (auto slash = c.find('/'); slash != std::string_view::npos) {
            const double num = parse_number(c.substr(0, slash));
            const double den = parse_number(c.substr(slash + 1));
            if (den == 0.0) throw UsageError("zero denominator in mode '" + std::string(text) + "'");
            value = num / den;
        } else {
            value = parse_number(c);
        }
        if (!(value > 0.0)) throw UsageError("fixed tau multiplier must be positive in '" + std::string(text) + "'");
        return fixed(value);
    }
    throw UsageError("unknown attention mode '" + std::string(text) + "' (standard|masked|fixed:<c>|raw|meta)");
}

std::string AttentionMode::to_string() const {
    switch (variant) {
        case AttentionVariant::Standard:
            return "standard";
        case AttentionVariant::DiagMaskedFixedTau: {
            char buf[64];
            auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), multiplier);
            return "fixed:" + std::string(buf, ptr);
        }
        case AttentionVariant::DiagMaskedLearnedRawTau:
            return "raw";
        case AttentionVariant::DiagMaskedMetaTau:
            return "meta";
    }
    return "standard";
}

// ---- parameters -----------------------------------------------------------

AttentionParams AttentionParams::init(std::size_t d, std::size_t heads, SeededRng& rng) {
    if (heads == 0 || d % heads != 0) {
        throw ShapeError("hidden dimension " + std::to_string(d) + " not divisible by " + std::to_string(heads) + " heads");
    }
    AttentionParams p;
    p.heads = heads;
    p.d_k = d / heads;
    const double bound = 1.0 / std::sqrt(static_cast<double>(d));
    for (std::size_t h = 0; h < heads; ++h) {
        p.w_q.push_back(uniform_init({d, p.d_k}, bound, rng));
        p.w_k.push_back(uniform_init({d, p.d_k}, bound, rng));
        p.w_v.push_back(uniform_init({d, p.d_k}, bound, rng));
    }
    p.w_o = uniform_init({heads * p.d_k, d}, 1.0 / std::sqrt(static_cast<double>(heads * p.d_k)), rng);
    p.b_o = Tensor({d});
    p.raw_tau = Tensor::scalar(std::sqrt(static_cast<double>(p.d_k)));
    return p;
}

AttentionParams AttentionParams::zeros_like() const {
    AttentionParams z;
    z.heads = heads;
    z.d_k = d_k;
    for (std::size_t h = 0; h < heads; ++h) {
        z.w_q.push_back(w_q[h].zeros_like());
        z.w_k.push_back(w_k[h].zeros_like());
        z.w_v.push_back(w_v[h].zeros_like());
    }
    z.w_o = w_o.zeros_like();
    z.b_o = b_o.zeros_like();
    z.raw_tau = raw_tau.zeros_like();
    return z;
}

MetaNetwork MetaNetwork::init(std::size_t d, std::size_t hidden, std::size_t d_k, SeededRng& rng) {
    MetaNetwork m;
    m.w1 = uniform_init({d, hidden}, 1.0 / std::sqrt(static_cast<double>(d)), rng);
    m.b1 = Tensor({hidden});
    m.w2 = uniform_init({hidden, 1}, 1.0 / std::sqrt(static_cast<double>(hidden)), rng);
    m.b2 = Tensor({1});
    m.d_k = d_k;
    return m;
}

MetaNetwork MetaNetwork::zeros_like() const {
    return {w1.zeros_like(), b1.zeros_like(), w2.zeros_like(), b2.zeros_like(), d_k};
}

// ---- building blocks ------------------------------------------------------

Projections project_qkv(const Tensor& x, const AttentionParams& params) {
    if (x.rank() != 2 || x.dim(1) != params.model_dim()) {
        throw ShapeError("project_qkv: input " + shape_str(x.shape()) + " vs model dim " +
                         std::to_string(params.model_dim()));
    }
    Projections p;
    for (std::size_t h = 0; h < params.heads; ++h) {
        p.q.push_back(matmul(x, params.w_q[h]));
        p.k.push_back(matmul(x, params.w_k[h]));
        p.v.push_back(matmul(x, params.w_v[h]));
    }
    return p;
}

Tensor similarity(const Tensor& q, const Tensor& k) { return matmul_nt(q, k); }

Tensor mask_diagonal(const Tensor& s) {
    if (s.rank() != 2 || s.dim(0) != s.dim(1)) throw ShapeError("mask_diagonal: not square " + shape_str(s.shape()));
    const std::size_t n = s.dim(0);
    if (n < 2) throw DegenerateError("mask_diagonal: a single token has no other token to attend to");
    Tensor out = s;
    for (std::size_t i = 0; i < n; ++i) out(i, i) = kNegMask;
    return out;
}

Tensor pool_tokens(const Tensor& x) { return column_mean(x); }

double tau_lower_bound(std::size_t d_k) { return std::sqrt(static_cast<double>(d_k)) / 8.0; }
double tau_upper_bound(std::size_t d_k) { return 8.0 * std::sqrt(static_cast<double>(d_k)); }

double squash_tau(double raw, std::size_t d_k) {
    const double lo = tau_lower_bound(d_k), hi = tau_upper_bound(d_k);
    const double sig = 1.0 / (1.0 + std::exp(-raw));
    // a saturated sigmoid would land exactly on a bound
    return std::clamp(lo * (63.0 * sig + 1.0), std::nextafter(lo, hi), std::nextafter(hi, lo));
}

double squash_tau_derivative(double raw, std::size_t d_k) {
    const double sig = 1.0 / (1.0 + std::exp(-raw));
    return tau_lower_bound(d_k) * 63.0 * sig * (1.0 - sig);
}

MetaForward meta_forward(const MetaNetwork& meta, const Tensor& pooled) {
    if (pooled.size() != meta.w1.dim(0)) {
        throw ShapeError("compute_tau: pooled " + shape_str(pooled.shape()) + " vs w1 " + shape_str(meta.w1.shape()));
    }
    const std::size_t d = meta.w1.dim(0), h = meta.w1.dim(1);
    MetaForward out;
    out.hidden = meta.b1;
    for (std::size_t i = 0; i < d; ++i)
        for (std::size_t j = 0; j < h; ++j) out.hidden[j] += pooled[i] * meta.w1(i, j);
    out.logit = meta.b2[0];
    for (std::size_t j = 0; j < h; ++j) out.logit += std::max(out.hidden[j], 0.0) * meta.w2[j];
    out.tau = squash_tau(out.logit, meta.d_k);
    return out;
}

double compute_tau(const MetaNetwork& meta, const Tensor& pooled) { return meta_forward(meta, pooled).tau; }

Tensor attend_scores(const Tensor& sim, bool masked, double tau) {
    return masked ? softmax_rows(mask_diagonal(sim), tau) : softmax_rows(sim, tau);
}

// ---- forward / backward ---------------------------------------------------

AttentionResult attention_forward(const Tensor& x, const AttentionParams& params, const AttentionMode& mode,
                                  const MetaNetwork* meta, const Tensor* prev_block_out) {
    if (mode.uses_meta() && meta == nullptr) throw DomainError("meta-network temperature requires a MetaNetwork");
    AttentionResult res;
    AttentionTrace& tr = res.trace;
    tr.mode = mode;
    tr.input = x;

    const double sqrt_dk = std::sqrt(static_cast<double>(params.d_k));
    switch (mode.variant) {
        case AttentionVariant::Standard:
            tr.tau_used = sqrt_dk;
            break;
        case AttentionVariant::DiagMaskedFixedTau:
            tr.tau_used = mode.multiplier * sqrt_dk;
            break;
        case AttentionVariant::DiagMaskedLearnedRawTau:
            tr.tau_raw = params.raw_tau[0];
            if (tr.tau_raw > 0.0) {
                tr.tau_used = tr.tau_raw;
            } else {
                tr.tau_used = std::abs(tr.tau_raw) + 1e-6;
                tr.tau_guard_fired = true;
            }
            break;
        case AttentionVariant::DiagMaskedMetaTau: {
            tr.pooled_from_prev = prev_block_out != nullptr;
            tr.pooled = pool_tokens(prev_block_out ? *prev_block_out : x);
            MetaForward mf = meta_forward(*meta, tr.pooled);
            tr.meta_hidden = std::move(mf.hidden);
            tr.meta_logit = mf.logit;
            tr.tau_used = mf.tau;
            break;
        }
    }
    if (!std::isfinite(tr.tau_used)) throw NumericError("attention temperature is not finite");

    Projections proj = project_qkv(x, params);
    const std::size_t n = x.dim(0), d_k = params.d_k, width = params.heads * d_k;
    tr.concat = Tensor({n, width});
    for (std::size_t h = 0; h < params.heads; ++h) {
        AttentionHeadTrace ht;
        ht.q = std::move(proj.q[h]);
        ht.k = std::move(proj.k[h]);
        ht.v = std::move(proj.v[h]);
        ht.similarity = similarity(ht.q, ht.k);
        ht.attention = attend_scores(ht.similarity, mode.masked(), tr.tau_used);
        const Tensor head_out = matmul(ht.attention, ht.v);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < d_k; ++j) tr.concat(i, h * d_k + j) = head_out(i, j);
        tr.heads.push_back(std::move(ht));
    }
    res.output = add_bias(matmul(tr.concat, params.w_o), params.b_o);
    if (!res.output.all_finite()) throw NumericError("attention_forward: non-finite activations");
    return res;
}

AttentionGrads attention_backward(const AttentionTrace& tr, const Tensor& upstream, const AttentionParams& params,
                                  const MetaNetwork* meta) {
    const std::size_t n = tr.input.dim(0), d = params.model_dim(), d_k = params.d_k;
    if (upstream.shape() != Shape{n, d}) {
        throw ShapeError("attention_backward: upstream " + shape_str(upstream.shape()) + " vs output [" +
                         std::to_string(n) + "x" + std::to_string(d) + "]");
    }
    if (tr.heads.size() != params.heads) throw ShapeError("attention_backward: trace/params head count mismatch");
    const AttentionMode& mode = tr.mode;
    if (mode.uses_meta() && meta == nullptr) throw DomainError("meta-network temperature requires a MetaNetwork");

    AttentionGrads g;
    g.params = params.zeros_like();
    g.input = Tensor({n, d});
    g.params.b_o = bias_grad(upstream);
    g.params.w_o = matmul_tn(tr.concat, upstream);
    const Tensor d_concat = matmul_nt(upstream, params.w_o);

    double d_tau = 0.0;
    for (std::size_t h = 0; h < params.heads; ++h) {
        const AttentionHeadTrace& ht = tr.heads[h];
        const Tensor d_head = head_columns(d_concat, h, d_k);
        const Tensor d_attn = matmul_nt(d_head, ht.v);
        const Tensor d_v = matmul_tn(ht.attention, d_head);
        const Tensor scores = mode.masked() ? mask_diagonal(ht.similarity) : ht.similarity;
        const SoftmaxGrad sg = softmax_rows_backward(ht.attention, scores, d_attn, tr.tau_used);
        d_tau += sg.temperature;
        // masked diagonal entries carry zero gradient by construction
        const Tensor d_q = matmul(sg.scores, ht.k);
        const Tensor d_k_mat = matmul_tn(sg.scores, ht.q);
        g.params.w_q[h] = matmul_tn(tr.input, d_q);
        g.params.w_k[h] = matmul_tn(tr.input, d_k_mat);
        g.params.w_v[h] = matmul_tn(tr.input, d_v);
        add_to(g.input, matmul_nt(d_q, params.w_q[h]));
        add_to(g.input, matmul_nt(d_k_mat, params.w_k[h]));
        add_to(g.input, matmul_nt(d_v, params.w_v[h]));
    }

    if (mode.uses_raw_tau()) {
        g.params.raw_tau[0] = tr.tau_raw > 0.0 ? d_tau : -d_tau;
    } else if (mode.uses_meta()) {
        MetaNetwork mg = meta->zeros_like();
        const double d_logit = d_tau * squash_tau_derivative(tr.meta_logit, meta->d_k);
        const std::size_t hdim = meta->w1.dim(1), din = meta->w1.dim(0);
        mg.b2[0] = d_logit;
        Tensor d_pre({hdim});
        for (std::size_t j = 0; j < hdim; ++j) {
            const double act = std::max(tr.meta_hidden[j], 0.0);
            mg.w2[j] = d_logit * act;
            d_pre[j] = tr.meta_hidden[j] > 0.0 ? d_logit * meta->w2[j] : 0.0;
        }
        mg.b1 = d_pre;
        Tensor d_pooled({din});
        for (std::size_t i = 0; i < din; ++i) {
            for (std::size_t j = 0; j < hdim; ++j) {
                mg.w1(i, j) = tr.pooled[i] * d_pre[j];
                d_pooled[i] += meta->w1(i, j) * d_pre[j];
            }
        }
        g.meta = std::move(mg);
        Tensor& pool_target = tr.pooled_from_prev ? (g.prev_block_out = Tensor({n, d})) : g.input;
        const double inv_n = 1.0 / static_cast<double>(n);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < d; ++j) pool_target(i, j) += d_pooled[j] * inv_n;
    }
    return g;
}

// ---- smoothing diagnostic -------------------------------------------------

std::vector<double> default_smoothing_logits() { return {0.1081, 0.4376, 0.7697, 0.1929, 0.3626, 2.8451}; }

std::vector<SmoothingRow> smoothing_study(const std::vector<double>& x, const std::vector<double>& dk_values) {
    std::vector<SmoothingRow> rows;
    const Tensor logits({1, x.size()}, x);
    for (double dk : dk_values) {
        if (!(dk > 0.0)) throw DomainError("smoothing_study: d_k must be positive");
        const Tensor p = softmax_rows(logits, std::sqrt(dk));
        for (std::size_t i = 0; i < x.size(); ++i) rows.push_back({dk, i, x[i], p[i]});
    }
    return rows;
}

void write_smoothing_csv(std::ostream& out, const std::vector<SmoothingRow>& rows) {
    out << "dk,index,logit,prob\n";
    for (const auto& r : rows) {
        out << format_double(r.dk) << ',' << r.index << ',' << format_double(r.logit) << ',' << format_double(r.prob)
            << '\n';
    }
}

}  // namespace nilm
