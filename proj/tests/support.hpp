#pragma once

#include <cmath>
#include <filesystem>
#include <string>

#include "nilm/rng.hpp"
#include "nilm/tensor.hpp"

namespace nilm::testing {

inline Tensor random_tensor(Shape shape, SeededRng& rng, double lo = -1.0, double hi = 1.0) {
    Tensor t(std::move(shape));
    for (double& v : t.data()) v = rng.uniform(lo, hi);
    return t;
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

// Fresh, empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
    const auto dir = std::filesystem::temp_directory_path() / ("nilm_test_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

}  // namespace nilm::testing

#include "nilm/model.hpp"

namespace nilm::testing {

// Hand-set network that reproduces the on/off state of a block-aligned
// signal whose blocks start on even samples: the embedding copies x into
// channel 0 and -x into channel 1, attention and feed-forward weights are
// zero so each layer norm emits +-sqrt(hidden/2), the deconvolution copies
// token floor(t/2) to sample t, and the power head maps the sign to {0, 1}.
inline NilmModel oracle_model(ModelConfig config) {
    config.dropout = 0.0;
    NilmModel m = NilmModel::init(config).zeros_like();
    for (auto& layer : m.layers) {
        layer.norm1_gain.fill(1.0);
        layer.norm2_gain.fill(1.0);
        layer.attn.raw_tau.fill(1.0);
    }
    m.embed_w(0, 0, 2) = 1.0;
    m.embed_w(1, 0, 2) = -1.0;
    m.recon_w(0, 0, 1) = 1.0;
    m.recon_w(0, 0, 2) = 1.0;
    m.power_w[0] = 0.5 / std::sqrt(static_cast<double>(config.hidden) / 2.0);
    m.power_b[0] = 0.5;
    return m;
}

}  // namespace nilm::testing
