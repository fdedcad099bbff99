#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "nilm/errors.hpp"
#include "nilm/metrics.hpp"
#include "nilm/rng.hpp"

using namespace nilm;

TEST_CASE("f1 and accuracy on a small confusion table") {
    // 8 samples: 3 TP, 1 FP, 1 FN, 3 TN.
    const std::vector<std::uint8_t> pred = {1, 1, 1, 1, 0, 0, 0, 0};
    const std::vector<std::uint8_t> truth = {1, 1, 1, 0, 1, 0, 0, 0};
    const ConfusionCounts c = confusion(pred, truth);
    CHECK(c == ConfusionCounts{3, 3, 1, 1});
    CHECK(accuracy(c) == 0.75);
    bool degenerate = true;
    CHECK(f1(c, &degenerate) == 0.75);
    CHECK(!degenerate);
}

TEST_CASE("degenerate confusion tables") {
    bool degenerate = false;
    CHECK(f1(ConfusionCounts{0, 10, 0, 0}, &degenerate) == 0.0);
    CHECK(degenerate);
    CHECK(accuracy(ConfusionCounts{0, 10, 0, 0}) == 1.0);
    CHECK_THROWS_AS(accuracy(ConfusionCounts{}), DomainError);
    CHECK_THROWS_AS(confusion(std::vector<std::uint8_t>{1}, std::vector<std::uint8_t>{1, 0}), ShapeError);
}

TEST_CASE("mre and mae by hand") {
    const std::vector<double> truth = {0, 10}, pred = {0, 0};
    CHECK(mre(pred, truth) == 0.5);
    CHECK(mre_sum(pred, truth) == 1.0);
    CHECK(mae(std::vector<double>{1, 3}, std::vector<double>{2, 2}) == 1.0);
    CHECK_THROWS_AS(mre(pred, std::vector<double>{0, 0}), DegenerateError);
}

TEST_CASE("report falls back when the truth is all zero") {
    const std::vector<double> zeros = {0, 0, 0, 0};
    const std::vector<std::uint8_t> off = {0, 0, 0, 0};
    MetricsReport r = make_report(zeros, zeros, off, off);
    CHECK(r.mre == 0.0);
    CHECK(r.acc == 1.0);
    CHECK(r.f1 == 0.0);
    CHECK(r.degenerate_f1);
    r = make_report(std::vector<double>{0, 4, 0, 0}, zeros, off, off);
    CHECK(r.mre == doctest::Approx(0.25));
}

TEST_CASE("metrics agree with scalar-loop references on random data") {
    SeededRng rng(11);
    for (int trial = 0; trial < 1000; ++trial) {
        const std::size_t n = 1 + rng.below(200);
        const bool all_off = trial % 10 == 0;
        std::vector<double> p(n), t(n);
        std::vector<std::uint8_t> ps(n), ts(n);
        for (std::size_t i = 0; i < n; ++i) {
            t[i] = all_off ? 0.0 : (rng.bernoulli(0.3) ? rng.uniform(0, 500) : 0.0);
            p[i] = rng.bernoulli(0.5) ? rng.uniform(0, 500) : 0.0;
            ts[i] = t[i] >= 50 ? 1 : 0;
            ps[i] = all_off ? 0 : (p[i] >= 50 ? 1 : 0);
        }
        const MetricsReport r = make_report(p, t, ps, ts);

        double tp = 0, tn = 0, fp = 0, fn = 0, abs_sum = 0, peak = 0, ppeak = 0;
        for (std::size_t i = 0; i < n; ++i) {
            if (ps[i] && ts[i]) ++tp;
            else if (!ps[i] && !ts[i]) ++tn;
            else if (ps[i]) ++fp;
            else ++fn;
            abs_sum += std::abs(p[i] - t[i]);
            peak = std::max(peak, t[i]);
            ppeak = std::max(ppeak, p[i]);
        }
        const double ref_mae = abs_sum / n;
        double ref_mre = 0;
        if (peak > 0) {
            for (std::size_t i = 0; i < n; ++i) ref_mre += std::abs(p[i] - t[i]) / peak;
            ref_mre /= n;
        } else {
            ref_mre = ppeak > 0 ? ref_mae / ppeak : 0.0;
        }
        const double denom = tp + 0.5 * (fp + fn);
        REQUIRE(r.tp == tp);
        REQUIRE(r.fp == fp);
        REQUIRE(r.fn == fn);
        REQUIRE(r.tn == tn);
        REQUIRE(std::abs(r.acc - (tp + tn) / n) <= 1e-12);
        REQUIRE(std::abs(r.f1 - (denom > 0 ? tp / denom : 0.0)) <= 1e-12);
        REQUIRE(r.degenerate_f1 == (denom == 0));
        REQUIRE(std::abs(r.mae - ref_mae) <= 1e-12);
        REQUIRE(std::abs(r.mre - ref_mre) <= 1e-12);
    }
}

TEST_CASE("json report has exactly the ten fields") {
    MetricsReport r;
    r.tp = 3;
    r.f1 = 0.5;
    const auto j = to_json(r);
    std::vector<std::string> keys;
    for (auto it = j.begin(); it != j.end(); ++it) keys.push_back(it.key());
    CHECK(keys == std::vector<std::string>{"tp", "tn", "fp", "fn", "acc", "f1", "mre", "mae", "n_samples",
                                           "degenerate_f1"});
    const MetricsReport back = report_from_json(nlohmann::json::parse(j.dump()));
    CHECK(back.tp == 3);
    CHECK(back.f1 == 0.5);
}
