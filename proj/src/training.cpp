#include "nilm/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <ostream>

#include "nilm/errors.hpp"
#include "nilm/ops.hpp"

namespace nilm {

void LossConfig::validate() const {
    if (kl_weight < 0.0 || margin_weight < 0.0 || l1_on_weight < 0.0) throw DomainError("loss weights must be >= 0");
}

void MaskingScheme::validate() const {
    if (!(ratio > 0.0 && ratio < 1.0)) throw DomainError("masking ratio must lie in (0, 1)");
}

MaskedBatch apply_mask(const Tensor& aggregate, const MaskingScheme& scheme, SeededRng& rng) {
    scheme.validate();
    MaskedBatch out{aggregate, Tensor(aggregate.shape()), 0};
    for (std::size_t i = 0; i < aggregate.size(); ++i) {
        if (rng.bernoulli(scheme.ratio)) {
            out.input[i] = scheme.mask_value;
            out.mask[i] = 1.0;
            ++out.count;
        }
    }
    return out;
}

namespace {

double softplus(double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }
double sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

}  // namespace

LossResult compute_loss(const Tensor& pred_power, const Tensor& true_power, const Tensor& status_logits,
                        const Tensor& true_status, const Tensor& mask, const LossConfig& cfg) {
    cfg.validate();
    const Shape& s = pred_power.shape();
    if (s.size() != 2 || true_power.shape() != s || status_logits.shape() != s || true_status.shape() != s ||
        mask.shape() != s) {
        throw ShapeError("compute_loss: expected matching [batch x L] tensors");
    }
    const std::size_t B = s[0], L = s[1];

    std::vector<std::uint8_t> use(B * L, 0);
    std::size_t m = 0;
    for (std::size_t i = 0; i < B * L; ++i)
        if (mask[i] != 0.0) {
            use[i] = 1;
            ++m;
        }
    LossResult r{{}, Tensor(s), Tensor(s)};
    if (m == 0) {
        std::fill(use.begin(), use.end(), 1);
        m = B * L;
        r.parts.used_fallback = true;
    }
    if (m == 0) throw ShapeError("compute_loss: empty batch");
    r.parts.positions = m;
    const double inv_m = 1.0 / static_cast<double>(m);

    double mse = 0.0, margin = 0.0, l1 = 0.0;
    for (std::size_t i = 0; i < B * L; ++i) {
        if (!use[i]) continue;
        const double d = pred_power[i] - true_power[i];
        mse += d * d;
        r.grad_power[i] += 2.0 * d * inv_m;

        const double y = true_status[i] > 0.5 ? 1.0 : -1.0;
        const double z = status_logits[i];
        margin += softplus(-y * z);
        r.grad_status[i] = cfg.margin_weight * (-y * sigmoid(-y * z)) * inv_m;

        if (y > 0.0) {
            l1 += std::abs(d);
            const double sg = d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0);
            r.grad_power[i] += cfg.l1_on_weight * sg * inv_m;
        }
    }
    r.parts.mse = mse * inv_m;
    r.parts.margin = margin * inv_m;
    r.parts.l1on = l1 * inv_m;

    // Per-window KL over the window's masked positions.
    std::size_t windows = 0;
    for (std::size_t b = 0; b < B; ++b) {
        bool any = false;
        for (std::size_t t = 0; t < L; ++t) any = any || use[b * L + t];
        if (any) ++windows;
    }
    double kl = 0.0;
    std::vector<double> p(L), q(L);
    for (std::size_t b = 0; b < B && windows > 0; ++b) {
        double tmax = -HUGE_VAL, pmax = -HUGE_VAL;
        for (std::size_t t = 0; t < L; ++t) {
            const std::size_t i = b * L + t;
            if (!use[i]) continue;
            tmax = std::max(tmax, true_power[i]);
            pmax = std::max(pmax, pred_power[i]);
        }
        if (tmax == -HUGE_VAL) continue;
        double zt = 0.0, zp = 0.0;
        for (std::size_t t = 0; t < L; ++t) {
            const std::size_t i = b * L + t;
            if (!use[i]) continue;
            zt += std::exp(true_power[i] - tmax);
            zp += std::exp(pred_power[i] - pmax);
        }
        const double lzt = std::log(zt), lzp = std::log(zp);
        double klw = 0.0;
        for (std::size_t t = 0; t < L; ++t) {
            const std::size_t i = b * L + t;
            if (!use[i]) continue;
            const double logp = true_power[i] - tmax - lzt;
            const double logq = pred_power[i] - pmax - lzp;
            p[t] = std::exp(logp);
            q[t] = std::exp(logq);
            klw += p[t] * (logp - logq);
        }
        kl += klw;
        const double w = cfg.kl_weight / static_cast<double>(windows);
        for (std::size_t t = 0; t < L; ++t) {
            const std::size_t i = b * L + t;
            if (use[i]) r.grad_power[i] += w * (q[t] - p[t]);
        }
    }
    r.parts.kl = windows > 0 ? kl / static_cast<double>(windows) : 0.0;
    r.parts.total = r.parts.mse + cfg.kl_weight * r.parts.kl + cfg.margin_weight * r.parts.margin +
                    cfg.l1_on_weight * r.parts.l1on;
    return r;
}

void adamw_step(const std::vector<ParamRef>& params, AdamWState& state) {
    for (const auto& p : params) {
        if (p.value->shape() != p.grad->shape()) throw ShapeError("adamw_step: gradient shape mismatch for " + p.name);
        if (!p.grad->all_finite()) throw NumericError("non-finite gradient in parameter " + p.name);
    }
    if (state.m.empty()) {
        for (const auto& p : params) {
            state.m.emplace_back(p.value->shape());
            state.v.emplace_back(p.value->shape());
        }
    }
    if (state.m.size() != params.size()) throw ShapeError("adamw_step: optimizer state does not match parameters");
    const AdamWConfig& c = state.config;
    ++state.step;
    const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.step));
    const double decay = 1.0 - c.lr * c.weight_decay;
    for (std::size_t k = 0; k < params.size(); ++k) {
        Tensor& w = *params[k].value;
        const Tensor& g = *params[k].grad;
        Tensor& m = state.m[k];
        Tensor& v = state.v[k];
        if (m.shape() != w.shape()) throw ShapeError("adamw_step: moment shape mismatch for " + params[k].name);
        for (std::size_t i = 0; i < w.size(); ++i) {
            m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g[i];
            v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g[i] * g[i];
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            w[i] = w[i] * decay - c.lr * mhat / (std::sqrt(vhat) + c.eps);
        }
    }
}

namespace {

std::vector<ParamRef> pair_params(NilmModel& model, const NilmModel& grads) {
    std::vector<ParamRef> refs;
    visit_model_params(model, [&](const std::string& name, Tensor& t) { refs.push_back({name, &t, nullptr}); });
    std::size_t i = 0;
    visit_model_params(grads, [&](const std::string& name, const Tensor& t) {
        if (i >= refs.size() || refs[i].name != name) throw ShapeError("gradient container does not match model");
        refs[i++].grad = &t;
    });
    if (i != refs.size()) throw ShapeError("gradient container does not match model");
    return refs;
}

}  // namespace

void adamw_step(NilmModel& model, const NilmModel& grads, AdamWState& state) {
    adamw_step(pair_params(model, grads), state);
}

double clip_global_norm(NilmModel& grads, double max_norm) {
    double sq = 0.0;
    visit_model_params(grads, [&](const std::string&, const Tensor& t) {
        for (double v : t.data()) sq += v * v;
    });
    const double norm = std::sqrt(sq);
    if (max_norm > 0.0 && norm > max_norm) {
        const double f = max_norm / norm;
        visit_model_params(grads, [&](const std::string&, Tensor& t) {
            for (double& v : t.data()) v *= f;
        });
    }
    return norm;
}

namespace {

Tensor gather_rows(const Tensor& src, const std::vector<std::size_t>& idx) {
    const std::size_t L = src.dim(1);
    Tensor out({idx.size(), L});
    for (std::size_t r = 0; r < idx.size(); ++r)
        std::copy_n(src.ptr() + idx[r] * L, L, out.ptr() + r * L);
    return out;
}

constexpr std::uint64_t kShuffleKey = 0;
constexpr std::uint64_t kMaskKey = 1;
constexpr std::uint64_t kDropoutKey = 2;

}  // namespace

TrainResult train(NilmModel model, const WindowedDataset& data, const TrainConfig& cfg, const SeededRng& rng,
                  const EpochCallback& on_epoch) {
    if (data.size() == 0) throw DataError("train: empty dataset");
    if (cfg.batch_size == 0) throw DomainError("train: batch size must be positive");
    if (data.window_len != model.config.window_len) throw ShapeError("train: window length differs from the model");
    cfg.loss.validate();
    cfg.masking.validate();

    TrainResult result;
    AdamWState opt{cfg.optim, 0, {}, {}};
    const std::size_t n = data.size();
    const std::size_t layers = model.config.layers;
    std::vector<std::size_t> order(n);

    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        std::iota(order.begin(), order.end(), std::size_t{0});
        SeededRng shuffle = rng.split({epoch, kShuffleKey});
        for (std::size_t i = n - 1; i > 0; --i) std::swap(order[i], order[shuffle.below(i + 1)]);

        EpochLog log;
        log.epoch = epoch;
        log.tau.assign(layers, 0.0);
        std::size_t batches = 0, tau_samples = 0;
        for (std::size_t start = 0; start < n; start += cfg.batch_size) {
            const std::size_t b = (start / cfg.batch_size);
            const std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(start),
                                               order.begin() + static_cast<std::ptrdiff_t>(std::min(n, start + cfg.batch_size)));
            SeededRng mask_rng = rng.split({epoch, b, kMaskKey});
            const MaskedBatch mb = apply_mask(gather_rows(data.aggregate, idx), cfg.masking, mask_rng);
            const Tensor target = gather_rows(data.target, idx);
            const Tensor status = gather_rows(data.status, idx);

            ForwardResult fwd;
            LossResult loss;
            NilmModel grads;
            try {
                fwd = forward(model, mb.input, true, rng.split({epoch, b, kDropoutKey}));
                loss = compute_loss(fwd.power, target, fwd.status_logits, status, mb.mask, cfg.loss);
                if (!std::isfinite(loss.parts.total)) throw NumericError("loss is not finite");
                grads = backward(model, fwd, loss.grad_power, loss.grad_status);
                clip_global_norm(grads, cfg.clip_norm);
                adamw_step(model, grads, opt);
            } catch (const NumericError& e) {
                result.diverged = true;
                result.divergence = "epoch " + std::to_string(epoch) + ", batch " + std::to_string(b) + ": " + e.what();
                result.model = std::move(model);
                return result;
            }
            log.total += loss.parts.total;
            log.mse += loss.parts.mse;
            log.kl += loss.parts.kl;
            log.margin += loss.parts.margin;
            log.l1on += loss.parts.l1on;
            for (std::size_t s = 0; s < idx.size(); ++s) {
                for (std::size_t l = 0; l < layers; ++l) {
                    const AttentionTrace& tr = fwd.trace(s, l);
                    log.tau[l] += tr.tau_used;
                    if (tr.tau_guard_fired) ++log.guard_events;
                }
                ++tau_samples;
            }
            ++batches;
        }
        const double nb = static_cast<double>(batches);
        log.total /= nb;
        log.mse /= nb;
        log.kl /= nb;
        log.margin /= nb;
        log.l1on /= nb;
        for (double& t : log.tau) t /= static_cast<double>(tau_samples);
        if (cfg.record_wall_clock) {
            log.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        }
        result.log.push_back(log);
        if (on_epoch) on_epoch(log);
    }
    result.model = std::move(model);
    return result;
}

void write_epoch_log_header(std::ostream& out, std::size_t layers) {
    out << "epoch,total_loss,mse,kl,margin,l1on";
    for (std::size_t l = 1; l <= layers; ++l) out << ",tau_layer" << l;
    out << ",seconds\n";
}

void write_epoch_log_row(std::ostream& out, const EpochLog& row) {
    out << row.epoch << ',' << format_double(row.total) << ',' << format_double(row.mse) << ','
        << format_double(row.kl) << ',' << format_double(row.margin) << ',' << format_double(row.l1on);
    for (double t : row.tau) out << ',' << format_double(t);
    out << ',' << format_double(row.seconds) << '\n';
}

Predictions predict(const NilmModel& model, const WindowedDataset& data, std::size_t batch_size) {
    if (data.size() == 0) throw DataError("evaluate: empty dataset");
    if (data.window_len != model.config.window_len) throw ShapeError("evaluate: window length differs from the model");
    if (batch_size == 0) batch_size = 64;
    const std::size_t n = data.size(), L = data.window_len;
    Predictions p;
    p.power.reserve(n * L);
    p.true_power.reserve(n * L);
    p.status.reserve(n * L);
    p.true_status.reserve(n * L);
    const SeededRng unused;
    for (std::size_t start = 0; start < n; start += batch_size) {
        std::vector<std::size_t> idx(std::min(batch_size, n - start));
        std::iota(idx.begin(), idx.end(), start);
        const ForwardResult fwd = forward(model, gather_rows(data.aggregate, idx), false, unused);
        for (std::size_t r = 0; r < idx.size(); ++r) {
            for (std::size_t t = 0; t < L; ++t) {
                const double watts = std::max(0.0, denormalize_target(fwd.power(r, t), data.stats));
                p.power.push_back(watts);
                p.status.push_back(watts >= data.spec.on_threshold_watts ? 1 : 0);
                p.true_power.push_back(denormalize_target(data.target(idx[r], t), data.stats));
                p.true_status.push_back(data.status(idx[r], t) > 0.5 ? 1 : 0);
            }
        }
    }
    return p;
}

MetricsReport evaluate(const NilmModel& model, const WindowedDataset& data, std::size_t batch_size) {
    const Predictions p = predict(model, data, batch_size);
    return make_report(p.power, p.true_power, p.status, p.true_status);
}

}  // namespace nilm
