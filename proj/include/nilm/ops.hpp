#pragma once

// Dense kernels with hand-written adjoints. Every function is pure; the
// backward of an operation takes the forward inputs (not a cache) and
// recomputes whatever it needs.

#include <cstddef>
#include <vector>

#include "nilm/rng.hpp"
#include "nilm/tensor.hpp"

namespace nilm {

// Similarity entries equal to this value are treated as removed by the
// softmax: they receive exactly zero probability and zero gradient.
inline constexpr double kNegMask = -1e9;

inline constexpr double kLayerNormEps = 1e-5;

// ---- linear algebra -------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);
// a^T * b for a [k x m], b [k x n].
Tensor matmul_tn(const Tensor& a, const Tensor& b);
// a * b^T for a [m x k], b [n x k].
Tensor matmul_nt(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

// ---- elementwise ----------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
// acc += x, shapes must match exactly.
void add_to(Tensor& acc, const Tensor& x);

// Adds `bias` [d] to every row of x [... x d].
Tensor add_bias(const Tensor& x, const Tensor& bias);
// Gradient of add_bias w.r.t. bias: column sums over all rows.
Tensor bias_grad(const Tensor& grad);

double sum(const Tensor& x);
double mean(const Tensor& x);
// Mean over the rows of x [n x d] -> [d].
Tensor column_mean(const Tensor& x);

Tensor relu(const Tensor& x);
Tensor relu_backward(const Tensor& x, const Tensor& grad);
// Exact (erf) GELU.
Tensor gelu(const Tensor& x);
Tensor gelu_backward(const Tensor& x, const Tensor& grad);

// ---- softmax --------------------------------------------------------------

// Row-wise softmax of s / temperature over the last axis, stabilised by
// row-max subtraction. Entries equal to kNegMask map to exactly 0.
Tensor softmax_rows(const Tensor& s, double temperature);

struct SoftmaxGrad {
    Tensor scores;       // dL/ds
    double temperature;  // dL/dtau
};

// Adjoint of softmax_rows given its output `probs`, its input `scores`, and
// the upstream gradient.
SoftmaxGrad softmax_rows_backward(const Tensor& probs, const Tensor& scores, const Tensor& grad,
                                  double temperature);

// Diagonal of the softmax Jacobian, p * (1 - p).
double softmax_jacobian_diag(double p);

// Shannon entropy (nats) of one probability row.
double entropy(const std::vector<double>& p);

// ---- convolution ----------------------------------------------------------

// signal [batch x len x ch_in], kernels [ch_out x ch_in x k]; cross-correlation
// with zero padding.
Tensor conv1d(const Tensor& signal, const Tensor& kernels, std::size_t padding, std::size_t stride);

struct Conv1dGrad {
    Tensor signal;
    Tensor kernels;
};
Conv1dGrad conv1d_backward(const Tensor& signal, const Tensor& kernels, const Tensor& grad,
                           std::size_t padding, std::size_t stride);

// Transposed convolution. tokens [batch x len x ch_in], kernels
// [ch_in x ch_out x k]; output length (len-1)*stride - 2*padding + k.
Tensor deconv1d(const Tensor& tokens, const Tensor& kernels, std::size_t stride, std::size_t padding);

Conv1dGrad deconv1d_backward(const Tensor& tokens, const Tensor& kernels, const Tensor& grad,
                             std::size_t stride, std::size_t padding);

std::size_t conv1d_out_len(std::size_t len, std::size_t k, std::size_t padding, std::size_t stride);
std::size_t deconv1d_out_len(std::size_t len, std::size_t k, std::size_t stride, std::size_t padding);

// Max pooling with window 2 and stride 2 along axis 1 of [batch x len x ch].
struct PoolResult {
    Tensor out;
    std::vector<std::size_t> argmax;  // flat input index per output element
};
PoolResult max_pool2(const Tensor& x);
Tensor max_pool2_backward(const Shape& input_shape, const std::vector<std::size_t>& argmax, const Tensor& grad);

// ---- normalisation / regularisation ---------------------------------------

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = kLayerNormEps);

struct LayerNormGrad {
    Tensor x;
    Tensor gain;
    Tensor bias;
};
LayerNormGrad layer_norm_backward(const Tensor& x, const Tensor& gain, const Tensor& grad,
                                  double eps = kLayerNormEps);

struct DropoutResult {
    Tensor out;
    Tensor scale;  // per-element multiplier: 0 or 1/(1-ratio); all ones when inactive
};
DropoutResult dropout(const Tensor& x, double ratio, SeededRng& rng, bool training);

}  // namespace nilm
