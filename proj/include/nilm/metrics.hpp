#pragma once

#include <cstdint>
#include <span>
#include <string>

#include <json.hpp>

namespace nilm {

struct ConfusionCounts {
    std::uint64_t tp = 0, tn = 0, fp = 0, fn = 0;

    std::uint64_t total() const { return tp + tn + fp + fn; }
    ConfusionCounts& operator+=(const ConfusionCounts& o);
    bool operator==(const ConfusionCounts&) const = default;
};

ConfusionCounts confusion(std::span<const std::uint8_t> predicted, std::span<const std::uint8_t> truth);

// (TP + TN) / N. Throws DomainError for zero samples.
double accuracy(const ConfusionCounts& c);

// TP / (TP + (FP + FN) / 2). When TP + FP + FN == 0 the score is undefined;
// 0 is returned and `degenerate` (if given) is set.
double f1(const ConfusionCounts& c, bool* degenerate = nullptr);

// Mean over samples of |pred - truth| / max(truth). Throws DegenerateError
// when max(truth) <= 0.
double mre(std::span<const double> pred, std::span<const double> truth);
// The sum form, sum |pred - truth| / max(truth), kept for audit.
double mre_sum(std::span<const double> pred, std::span<const double> truth);

// Mean absolute error.
double mae(std::span<const double> pred, std::span<const double> truth);

struct MetricsReport {
    std::uint64_t tp = 0, tn = 0, fp = 0, fn = 0;
    double acc = 0.0, f1 = 0.0, mre = 0.0, mae = 0.0;
    std::uint64_t n_samples = 0;
    bool degenerate_f1 = false;
};

// Builds a report from power values (watts) and binary status. If the truth
// never exceeds 0 W, MRE is taken relative to the largest prediction instead
// (0 when that is also 0).
MetricsReport make_report(std::span<const double> pred_power, std::span<const double> true_power,
                          std::span<const std::uint8_t> pred_status, std::span<const std::uint8_t> true_status);

// JSON object with exactly the MetricsReport field names.
nlohmann::ordered_json to_json(const MetricsReport& r);
MetricsReport report_from_json(const nlohmann::json& j);

}  // namespace nilm
