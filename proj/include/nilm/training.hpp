#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "nilm/data.hpp"
#include "nilm/metrics.hpp"
#include "nilm/model.hpp"
#include "nilm/rng.hpp"
#include "nilm/tensor.hpp"

namespace nilm {

struct LossConfig {
    double kl_weight = 0.1;
    double margin_weight = 1.0;
    double l1_on_weight = 1e-3;

    void validate() const;
};

struct MaskingScheme {
    double ratio = 0.3;
    double mask_value = -1.0;  // normalised units

    void validate() const;
};

struct MaskedBatch {
    Tensor input;  // aggregate with masked positions overwritten
    Tensor mask;   // 1 where masked, else 0
    std::size_t count = 0;
};

// Each position is masked independently with probability `ratio`.
MaskedBatch apply_mask(const Tensor& aggregate, const MaskingScheme& scheme, SeededRng& rng);

struct LossComponents {
    double total = 0.0;
    double mse = 0.0;
    double kl = 0.0;
    double margin = 0.0;
    double l1on = 0.0;
    std::size_t positions = 0;  // positions the loss was averaged over
    bool used_fallback = false;  // mask was empty, so all positions were used
};

struct LossResult {
    LossComponents parts;
    Tensor grad_power;   // dL/dpred_power
    Tensor grad_status;  // dL/dstatus_logits
};

// total = mse + kl_w * kl + margin_w * margin + l1_w * l1on, over masked
// positions. mse, margin and l1on are divided by the masked count; kl is the
// per-window KL(softmax(true) || softmax(pred)) over that window's masked
// positions, averaged over windows that contain any. An empty mask falls back
// to every position.
LossResult compute_loss(const Tensor& pred_power, const Tensor& true_power, const Tensor& status_logits,
                        const Tensor& true_status, const Tensor& mask, const LossConfig& cfg);

struct AdamWConfig {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
};

struct AdamWState {
    AdamWConfig config;
    std::uint64_t step = 0;
    std::vector<Tensor> m, v;  // allocated on the first step
};

struct ParamRef {
    std::string name;
    Tensor* value;
    const Tensor* grad;
};

// p <- p - lr*wd*p, then the bias-corrected Adam update. Throws NumericError
// naming the first parameter whose gradient is not finite; nothing is
// modified in that case.
void adamw_step(const std::vector<ParamRef>& params, AdamWState& state);
void adamw_step(NilmModel& model, const NilmModel& grads, AdamWState& state);

// Scales every gradient so the global L2 norm is at most max_norm. Returns
// the norm before clipping.
double clip_global_norm(NilmModel& grads, double max_norm);

struct TrainConfig {
    std::size_t epochs = 100;
    std::size_t batch_size = 64;
    LossConfig loss;
    MaskingScheme masking;
    AdamWConfig optim;
    double clip_norm = 1.0;  // <= 0 disables clipping
    bool record_wall_clock = false;  // otherwise `seconds` is logged as 0
};

struct EpochLog {
    std::size_t epoch = 0;  // 1-based
    double total = 0.0, mse = 0.0, kl = 0.0, margin = 0.0, l1on = 0.0;
    std::vector<double> tau;  // mean tau used per layer
    double seconds = 0.0;
    std::size_t guard_events = 0;  // raw-tau guard activations this epoch
};

struct TrainResult {
    NilmModel model;  // last model with a finite loss
    std::vector<EpochLog> log;
    bool diverged = false;
    std::string divergence;
};

using EpochCallback = std::function<void(const EpochLog&)>;

// Shuffled mini-batches; shuffling, masking and dropout draw from
// substreams of `rng` keyed by (epoch, batch), so results are bit-identical
// for identical inputs.
TrainResult train(NilmModel model, const WindowedDataset& data, const TrainConfig& cfg, const SeededRng& rng,
                  const EpochCallback& on_epoch = {});

void write_epoch_log_header(std::ostream& out, std::size_t layers);
void write_epoch_log_row(std::ostream& out, const EpochLog& row);

struct Predictions {
    std::vector<double> power;        // watts, clamped >= 0
    std::vector<double> true_power;   // watts
    std::vector<std::uint8_t> status;  // thresholded power
    std::vector<std::uint8_t> true_status;
};

// Unmasked inference over every window, flattened in window order.
Predictions predict(const NilmModel& model, const WindowedDataset& data, std::size_t batch_size = 64);

// Throws DataError for an empty dataset.
MetricsReport evaluate(const NilmModel& model, const WindowedDataset& data, std::size_t batch_size = 64);

}  // namespace nilm
