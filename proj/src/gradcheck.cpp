#include "nilm/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "nilm/errors.hpp"

namespace nilm {

Tensor finite_diff_grad(const std::function<double(const Tensor&)>& f, const Tensor& x, double eps) {
    Tensor probe = x;
    Tensor grad(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double orig = probe[i];
        probe[i] = orig + eps;
        const double up = f(probe);
        probe[i] = orig - eps;
        const double down = f(probe);
        probe[i] = orig;
        if (!std::isfinite(up) || !std::isfinite(down)) {
            throw NumericError("finite_diff_grad: non-finite objective at coordinate " + std::to_string(i));
        }
        grad[i] = (up - down) / (2.0 * eps);
    }
    return grad;
}

double max_relative_error(const Tensor& analytic, const Tensor& numeric, double floor) {
    if (analytic.shape() != numeric.shape()) {
        throw ShapeError("max_relative_error: " + shape_str(analytic.shape()) + " vs " + shape_str(numeric.shape()));
    }
    double diff = 0.0, scale = floor;
    for (std::size_t i = 0; i < analytic.size(); ++i) {
        diff = std::max(diff, std::abs(analytic[i] - numeric[i]));
        scale = std::max({scale, std::abs(analytic[i]), std::abs(numeric[i])});
    }
    return diff / scale;
}

}  // namespace nilm
