#pragma once

#include <functional>

#include "nilm/tensor.hpp"

namespace nilm {

inline constexpr double kFiniteDiffEps = 1e-5;

// Central differences (f(x + eps e_i) - f(x - eps e_i)) / (2 eps) for every
// coordinate of x. Throws NumericError if f returns a non-finite value.
Tensor finite_diff_grad(const std::function<double(const Tensor&)>& f, const Tensor& x,
                        double eps = kFiniteDiffEps);

// max_i |a_i - b_i| / max(max_i |a_i|, max_i |b_i|, floor): the error of a
// whole gradient tensor relative to its own scale.
double max_relative_error(const Tensor& analytic, const Tensor& numeric, double floor = 1e-12);

}  // namespace nilm
