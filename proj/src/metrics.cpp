#include "nilm/metrics.hpp"

#include <algorithm>
#include <cmath>

#include "nilm/errors.hpp"

namespace nilm {

ConfusionCounts& ConfusionCounts::operator+=(const ConfusionCounts& o) {
    tp += o.tp;
    tn += o.tn;
    fp += o.fp;
    fn += o.fn;
    return *this;
}

ConfusionCounts confusion(std::span<const std::uint8_t> predicted, std::span<const std::uint8_t> truth) {
    if (predicted.size() != truth.size()) throw ShapeError("confusion: length mismatch");
    ConfusionCounts c;
    for (std::size_t i = 0; i < truth.size(); ++i) {
        const bool p = predicted[i] != 0, t = truth[i] != 0;
        if (p && t) ++c.tp;
        else if (!p && !t) ++c.tn;
        else if (p) ++c.fp;
        else ++c.fn;
    }
    return c;
}

double accuracy(const ConfusionCounts& c) {
    if (c.total() == 0) throw DomainError("accuracy: zero samples");
    return static_cast<double>(c.tp + c.tn) / static_cast<double>(c.total());
}

double f1(const ConfusionCounts& c, bool* degenerate) {
    const bool undefined = c.tp + c.fp + c.fn == 0;
    if (degenerate) *degenerate = undefined;
    if (undefined) return 0.0;
    return static_cast<double>(c.tp) / (static_cast<double>(c.tp) + 0.5 * static_cast<double>(c.fp + c.fn));
}

namespace {

void check_lengths(std::span<const double> a, std::span<const double> b, const char* what) {
    if (a.size() != b.size()) throw ShapeError(std::string(what) + ": length mismatch");
    if (a.empty()) throw DomainError(std::string(what) + ": zero samples");
}

double abs_error_sum(std::span<const double> pred, std::span<const double> truth) {
    double s = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) s += std::abs(pred[i] - truth[i]);
    return s;
}

}  // namespace

double mre_sum(std::span<const double> pred, std::span<const double> truth) {
    check_lengths(pred, truth, "mre");
    const double peak = *std::max_element(truth.begin(), truth.end());
    if (!(peak > 0.0)) throw DegenerateError("mre: max(truth) is not positive");
    return abs_error_sum(pred, truth) / peak;
}

double mre(std::span<const double> pred, std::span<const double> truth) {
    return mre_sum(pred, truth) / static_cast<double>(pred.size());
}

double mae(std::span<const double> pred, std::span<const double> truth) {
    check_lengths(pred, truth, "mae");
    return abs_error_sum(pred, truth) / static_cast<double>(pred.size());
}

MetricsReport make_report(std::span<const double> pred_power, std::span<const double> true_power,
                          std::span<const std::uint8_t> pred_status, std::span<const std::uint8_t> true_status) {
    if (pred_power.size() != true_power.size() || pred_status.size() != true_status.size() ||
        pred_power.size() != pred_status.size()) {
        throw ShapeError("make_report: length mismatch");
    }
    const ConfusionCounts c = confusion(pred_status, true_status);
    MetricsReport r;
    r.tp = c.tp;
    r.tn = c.tn;
    r.fp = c.fp;
    r.fn = c.fn;
    r.n_samples = c.total();
    r.acc = accuracy(c);
    r.f1 = f1(c, &r.degenerate_f1);
    r.mae = mae(pred_power, true_power);
    const double truth_peak = *std::max_element(true_power.begin(), true_power.end());
    if (truth_peak > 0.0) {
        r.mre = mre(pred_power, true_power);
    } else {
        const double pred_peak = *std::max_element(pred_power.begin(), pred_power.end());
        r.mre = pred_peak > 0.0 ? r.mae / pred_peak : 0.0;
    }
    return r;
}

nlohmann::ordered_json to_json(const MetricsReport& r) {
    nlohmann::ordered_json j;
    j["tp"] = r.tp;
    j["tn"] = r.tn;
    j["fp"] = r.fp;
    j["fn"] = r.fn;
    j["acc"] = r.acc;
    j["f1"] = r.f1;
    j["mre"] = r.mre;
    j["mae"] = r.mae;
    j["n_samples"] = r.n_samples;
    j["degenerate_f1"] = r.degenerate_f1;
    return j;
}

MetricsReport report_from_json(const nlohmann::json& j) {
    MetricsReport r;
    r.tp = j.at("tp").get<std::uint64_t>();
    r.tn = j.at("tn").get<std::uint64_t>();
    r.fp = j.at("fp").get<std::uint64_t>();
    r.fn = j.at("fn").get<std::uint64_t>();
    r.acc = j.at("acc").get<double>();
    r.f1 = j.at("f1").get<double>();
    r.mre = j.at("mre").get<double>();
    r.mae = j.at("mae").get<double>();
    r.n_samples = j.at("n_samples").get<std::uint64_t>();
    r.degenerate_f1 = j.at("degenerate_f1").get<bool>();
    return r;
}

}  // namespace nilm
