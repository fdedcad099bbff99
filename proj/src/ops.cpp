#include "nilm/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "nilm/errors.hpp"

namespace nilm {

namespace {

void require_rank(const Tensor& t, std::size_t rank, const char* what) {
    if (t.rank() != rank) {
        throw ShapeError(std::string(what) + ": expected rank " + std::to_string(rank) + ", got " +
                         shape_str(t.shape()));
    }
}

void require_same(const Tensor& a, const Tensor& b, const char* what) {
    if (a.shape() != b.shape()) {
        throw ShapeError(std::string(what) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    }
}

}  // namespace

// ---- linear algebra -------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
    require_rank(a, 2, "matmul");
    require_rank(b, 2, "matmul");
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    if (b.dim(0) != k) {
        throw ShapeError("matmul: inner dimensions disagree, " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
    }
    Tensor out({m, n});
    const double* __restrict pa = a.ptr();
    const double* __restrict pb = b.ptr();
    double* __restrict po = out.ptr();
    for (std::size_t i = 0; i < m; ++i) {
        double* __restrict orow = po + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = pa[i * k + p];
            const double* brow = pb + p * n;
            for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
        }
    }
    return out;
}

Tensor matmul_tn(const Tensor& a, const Tensor& b) {
    require_rank(a, 2, "matmul_tn");
    require_rank(b, 2, "matmul_tn");
    const std::size_t k = a.dim(0), m = a.dim(1), n = b.dim(1);
    if (b.dim(0) != k) {
        throw ShapeError("matmul_tn: leading dimensions disagree, " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    }
    Tensor out({m, n});
    const double* __restrict pa = a.ptr();
    const double* __restrict pb = b.ptr();
    double* __restrict po = out.ptr();
    for (std::size_t p = 0; p < k; ++p) {
        const double* arow = pa + p * m;
        const double* brow = pb + p * n;
        for (std::size_t i = 0; i < m; ++i) {
            const double av = arow[i];
            double* __restrict orow = po + i * n;
            for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
        }
    }
    return out;
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
    require_rank(a, 2, "matmul_nt");
    require_rank(b, 2, "matmul_nt");
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(0);
    if (b.dim(1) != k) {
        throw ShapeError("matmul_nt: trailing dimensions disagree, " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    }
    Tensor out({m, n});
    const double* __restrict pa = a.ptr();
    const double* __restrict pb = b.ptr();
    double* __restrict po = out.ptr();
    for (std::size_t i = 0; i < m; ++i) {
        const double* arow = pa + i * k;
        for (std::size_t j = 0; j < n; ++j) {
            const double* brow = pb + j * k;
            double acc = 0.0;
            for (std::size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
            po[i * n + j] = acc;
        }
    }
    return out;
}

Tensor transpose(const Tensor& a) {
    require_rank(a, 2, "transpose");
    const std::size_t m = a.dim(0), n = a.dim(1);
    Tensor out({n, m});
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out(j, i) = a(i, j);
    return out;
}

// ---- elementwise ----------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
    require_same(a, b, "add");
    Tensor out = a;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += b[i];
    return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
    require_same(a, b, "sub");
    Tensor out = a;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b[i];
    return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
    require_same(a, b, "mul");
    Tensor out = a;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b[i];
    return out;
}

Tensor scale(const Tensor& a, double s) {
    Tensor out = a;
    for (auto& v : out.data()) v *= s;
    return out;
}

void add_to(Tensor& acc, const Tensor& x) {
    require_same(acc, x, "add_to");
    double* pa = acc.ptr();
    const double* px = x.ptr();
    for (std::size_t i = 0; i < acc.size(); ++i) pa[i] += px[i];
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
    const std::size_t d = x.cols();
    if (bias.size() != d) {
        throw ShapeError("add_bias: bias " + shape_str(bias.shape()) + " vs input " + shape_str(x.shape()));
    }
    Tensor out = x;
    double* po = out.ptr();
    const double* pb = bias.ptr();
    const std::size_t rows = x.rows();
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < d; ++j) po[r * d + j] += pb[j];
    return out;
}

Tensor bias_grad(const Tensor& grad) {
    const std::size_t d = grad.cols();
    Tensor out({d});
    const double* pg = grad.ptr();
    const std::size_t rows = grad.rows();
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < d; ++j) out[j] += pg[r * d + j];
    return out;
}

double sum(const Tensor& x) {
    double acc = 0.0;
    for (double v : x.data()) acc += v;
    return acc;
}

double mean(const Tensor& x) {
    if (x.empty()) throw ShapeError("mean of empty tensor");
    return sum(x) / static_cast<double>(x.size());
}

Tensor column_mean(const Tensor& x) {
    require_rank(x, 2, "column_mean");
    const std::size_t n = x.dim(0);
    if (n == 0) throw ShapeError("column_mean: no rows");
    Tensor out = bias_grad(x);
    for (auto& v : out.data()) v /= static_cast<double>(n);
    return out;
}

Tensor relu(const Tensor& x) {
    Tensor out = x;
    for (auto& v : out.data()) v = v > 0.0 ? v : 0.0;
    return out;
}

Tensor relu_backward(const Tensor& x, const Tensor& grad) {
    require_same(x, grad, "relu_backward");
    Tensor out = grad;
    for (std::size_t i = 0; i < out.size(); ++i)
        if (!(x[i] > 0.0)) out[i] = 0.0;
    return out;
}

Tensor gelu(const Tensor& x) {
    Tensor out = x;
    for (auto& v : out.data()) v = 0.5 * v * (1.0 + std::erf(v * std::numbers::sqrt2 / 2.0));
    return out;
}

Tensor gelu_backward(const Tensor& x, const Tensor& grad) {
    require_same(x, grad, "gelu_backward");
    const double inv_sqrt_2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
    Tensor out = grad;
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double v = x[i];
        const double cdf = 0.5 * (1.0 + std::erf(v * std::numbers::sqrt2 / 2.0));
        const double pdf = inv_sqrt_2pi * std::exp(-0.5 * v * v);
        out[i] *= cdf + v * pdf;
    }
    return out;
}

// ---- softmax --------------------------------------------------------------

Tensor softmax_rows(const Tensor& s, double temperature) {
    if (!(temperature > 0.0) || !std::isfinite(temperature)) {
        throw DomainError("softmax temperature must be positive and finite, got " + std::to_string(temperature));
    }
    const std::size_t m = s.cols();
    const std::size_t rows = s.rows();
    Tensor out(s.shape());
    const double* ps = s.ptr();
    double* po = out.ptr();
    for (std::size_t r = 0; r < rows; ++r) {
        const double* srow = ps + r * m;
        double* orow = po + r * m;
        double row_max = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < m; ++j)
            if (srow[j] != kNegMask) row_max = std::max(row_max, srow[j]);
        if (row_max == -std::numeric_limits<double>::infinity()) {
            throw DegenerateError("softmax row " + std::to_string(r) + " has no unmasked entry");
        }
        double total = 0.0;
        for (std::size_t j = 0; j < m; ++j) {
            if (srow[j] == kNegMask) {
                orow[j] = 0.0;
            } else {
                orow[j] = std::exp((srow[j] - row_max) / temperature);
                total += orow[j];
            }
        }
        const double inv = 1.0 / total;
        for (std::size_t j = 0; j < m; ++j) orow[j] *= inv;
    }
    return out;
}

SoftmaxGrad softmax_rows_backward(const Tensor& probs, const Tensor& scores, const Tensor& grad,
                                  double temperature) {
    require_same(probs, grad, "softmax_rows_backward");
    require_same(probs, scores, "softmax_rows_backward");
    const std::size_t m = probs.cols();
    const std::size_t rows = probs.rows();
    SoftmaxGrad out{Tensor(probs.shape()), 0.0};
    const double* pp = probs.ptr();
    const double* ps = scores.ptr();
    const double* pg = grad.ptr();
    double* pd = out.scores.ptr();
    double dtau = 0.0;
    for (std::size_t r = 0; r < rows; ++r) {
        const std::size_t base = r * m;
        double dot = 0.0;
        for (std::size_t j = 0; j < m; ++j) dot += pp[base + j] * pg[base + j];
        for (std::size_t j = 0; j < m; ++j) {
            if (ps[base + j] == kNegMask) continue;
            // gradient w.r.t. z = s / tau
            const double dz = pp[base + j] * (pg[base + j] - dot);
            pd[base + j] = dz / temperature;
            dtau -= dz * ps[base + j];
        }
    }
    out.temperature = dtau / (temperature * temperature);
    return out;
}

double softmax_jacobian_diag(double p) {
    if (!(p >= 0.0 && p <= 1.0)) throw DomainError("probability out of [0,1]: " + std::to_string(p));
    return p * (1.0 - p);
}

double entropy(const std::vector<double>& p) {
    double h = 0.0;
    for (double v : p)
        if (v > 0.0) h -= v * std::log(v);
    return h;
}

// ---- convolution ----------------------------------------------------------

std::size_t conv1d_out_len(std::size_t len, std::size_t k, std::size_t padding, std::size_t stride) {
    if (stride == 0) throw ShapeError("conv1d: stride must be >= 1");
    const long long span = static_cast<long long>(len) + 2 * static_cast<long long>(padding) - static_cast<long long>(k);
    if (span < 0) {
        throw ShapeError("conv1d: kernel " + std::to_string(k) + " longer than padded input " +
                         std::to_string(len + 2 * padding));
    }
    return static_cast<std::size_t>(span) / stride + 1;
}

std::size_t deconv1d_out_len(std::size_t len, std::size_t k, std::size_t stride, std::size_t padding) {
    if (stride == 0 || len == 0 || k == 0) throw ShapeError("deconv1d: invalid geometry");
    const long long out = (static_cast<long long>(len) - 1) * static_cast<long long>(stride) -
                          2 * static_cast<long long>(padding) + static_cast<long long>(k);
    if (out < 1) throw ShapeError("deconv1d: output length " + std::to_string(out) + " < 1");
    return static_cast<std::size_t>(out);
}

Tensor conv1d(const Tensor& signal, const Tensor& kernels, std::size_t padding, std::size_t stride) {
    require_rank(signal, 3, "conv1d signal");
    require_rank(kernels, 3, "conv1d kernels");
    const std::size_t batch = signal.dim(0), len = signal.dim(1), cin = signal.dim(2);
    const std::size_t cout = kernels.dim(0), k = kernels.dim(2);
    if (kernels.dim(1) != cin) {
        throw ShapeError("conv1d: kernels " + shape_str(kernels.shape()) + " vs signal " + shape_str(signal.shape()));
    }
    const std::size_t out_len = conv1d_out_len(len, k, padding, stride);
    Tensor out({batch, out_len, cout});
    for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t t = 0; t < out_len; ++t) {
            for (std::size_t j = 0; j < k; ++j) {
                const long long pos = static_cast<long long>(t * stride + j) - static_cast<long long>(padding);
                if (pos < 0 || pos >= static_cast<long long>(len)) continue;
                const double* xin = signal.ptr() + (b * len + static_cast<std::size_t>(pos)) * cin;
                double* o = out.ptr() + (b * out_len + t) * cout;
                for (std::size_t co = 0; co < cout; ++co) {
                    const double* w = kernels.ptr() + co * cin * k + j;
                    double acc = 0.0;
                    for (std::size_t ci = 0; ci < cin; ++ci) acc += xin[ci] * w[ci * k];
                    o[co] += acc;
                }
            }
        }
    }
    return out;
}

Conv1dGrad conv1d_backward(const Tensor& signal, const Tensor& kernels, const Tensor& grad,
                           std::size_t padding, std::size_t stride) {
    const std::size_t batch = signal.dim(0), len = signal.dim(1), cin = signal.dim(2);
    const std::size_t cout = kernels.dim(0), k = kernels.dim(2);
    const std::size_t out_len = conv1d_out_len(len, k, padding, stride);
    if (grad.shape() != Shape{batch, out_len, cout}) {
        throw ShapeError("conv1d_backward: gradient " + shape_str(grad.shape()));
    }
    Conv1dGrad g{Tensor(signal.shape()), Tensor(kernels.shape())};
    for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t t = 0; t < out_len; ++t) {
            const double* go = grad.ptr() + (b * out_len + t) * cout;
            for (std::size_t j = 0; j < k; ++j) {
                const long long pos = static_cast<long long>(t * stride + j) - static_cast<long long>(padding);
                if (pos < 0 || pos >= static_cast<long long>(len)) continue;
                const std::size_t off = (b * len + static_cast<std::size_t>(pos)) * cin;
                const double* xin = signal.ptr() + off;
                double* gx = g.signal.ptr() + off;
                for (std::size_t co = 0; co < cout; ++co) {
                    const double gv = go[co];
                    const double* w = kernels.ptr() + co * cin * k + j;
                    double* gw = g.kernels.ptr() + co * cin * k + j;
                    for (std::size_t ci = 0; ci < cin; ++ci) {
                        gx[ci] += gv * w[ci * k];
                        gw[ci * k] += gv * xin[ci];
                    }
                }
            }
        }
    }
    return g;
}

Tensor deconv1d(const Tensor& tokens, const Tensor& kernels, std::size_t stride, std::size_t padding) {
    require_rank(tokens, 3, "deconv1d tokens");
    require_rank(kernels, 3, "deconv1d kernels");
    const std::size_t batch = tokens.dim(0), len = tokens.dim(1), cin = tokens.dim(2);
    const std::size_t cout = kernels.dim(1), k = kernels.dim(2);
    if (kernels.dim(0) != cin) {
        throw ShapeError("deconv1d: kernels " + shape_str(kernels.shape()) + " vs tokens " + shape_str(tokens.shape()));
    }
    const std::size_t out_len = deconv1d_out_len(len, k, stride, padding);
    Tensor out({batch, out_len, cout});
    for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t i = 0; i < len; ++i) {
            const double* xin = tokens.ptr() + (b * len + i) * cin;
            for (std::size_t j = 0; j < k; ++j) {
                const long long pos = static_cast<long long>(i * stride + j) - static_cast<long long>(padding);
                if (pos < 0 || pos >= static_cast<long long>(out_len)) continue;
                double* o = out.ptr() + (b * out_len + static_cast<std::size_t>(pos)) * cout;
                for (std::size_t ci = 0; ci < cin; ++ci) {
                    const double xv = xin[ci];
                    const double* w = kernels.ptr() + ci * cout * k + j;
                    for (std::size_t co = 0; co < cout; ++co) o[co] += xv * w[co * k];
                }
            }
        }
    }
    return out;
}

Conv1dGrad deconv1d_backward(const Tensor& tokens, const Tensor& kernels, const Tensor& grad,
                             std::size_t stride, std::size_t padding) {
    const std::size_t batch = tokens.dim(0), len = tokens.dim(1), cin = tokens.dim(2);
    const std::size_t cout = kernels.dim(1), k = kernels.dim(2);
    const std::size_t out_len = deconv1d_out_len(len, k, stride, padding);
    if (grad.shape() != Shape{batch, out_len, cout}) {
        throw ShapeError("deconv1d_backward: gradient " + shape_str(grad.shape()));
    }
    Conv1dGrad g{Tensor(tokens.shape()), Tensor(kernels.shape())};
    for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t i = 0; i < len; ++i) {
            const double* xin = tokens.ptr() + (b * len + i) * cin;
            double* gx = g.signal.ptr() + (b * len + i) * cin;
            for (std::size_t j = 0; j < k; ++j) {
                const long long pos = static_cast<long long>(i * stride + j) - static_cast<long long>(padding);
                if (pos < 0 || pos >= static_cast<long long>(out_len)) continue;
                const double* go = grad.ptr() + (b * out_len + static_cast<std::size_t>(pos)) * cout;
                for (std::size_t ci = 0; ci < cin; ++ci) {
                    const double* w = kernels.ptr() + ci * cout * k + j;
                    double* gw = g.kernels.ptr() + ci * cout * k + j;
                    double acc = 0.0;
                    for (std::size_t co = 0; co < cout; ++co) {
                        acc += go[co] * w[co * k];
                        gw[co * k] += go[co] * xin[ci];
                    }
                    gx[ci] += acc;
                }
            }
        }
    }
    return g;
}

PoolResult max_pool2(const Tensor& x) {
    require_rank(x, 3, "max_pool2");
    const std::size_t batch = x.dim(0), len = x.dim(1), ch = x.dim(2);
    if (len < 2 || len % 2 != 0) throw ShapeError("max_pool2: length must be even and >= 2");
    const std::size_t out_len = len / 2;
    PoolResult r{Tensor({batch, out_len, ch}), std::vector<std::size_t>(batch * out_len * ch)};
    for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t t = 0; t < out_len; ++t) {
            for (std::size_t c = 0; c < ch; ++c) {
                const std::size_t i0 = (b * len + 2 * t) * ch + c;
                const std::size_t i1 = i0 + ch;
                const std::size_t o = (b * out_len + t) * ch + c;
                // ties resolve to the earlier sample
                const std::size_t pick = x[i1] > x[i0] ? i1 : i0;
                r.out[o] = x[pick];
                r.argmax[o] = pick;
            }
        }
    }
    return r;
}

Tensor max_pool2_backward(const Shape& input_shape, const std::vector<std::size_t>& argmax, const Tensor& grad) {
    if (grad.size() != argmax.size()) throw ShapeError("max_pool2_backward: gradient size mismatch");
    Tensor out(input_shape);
    for (std::size_t o = 0; o < argmax.size(); ++o) out[argmax[o]] += grad[o];
    return out;
}

// ---- normalisation / regularisation ---------------------------------------

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
    const std::size_t d = x.cols();
    if (d == 0) throw ShapeError("layer_norm: empty last axis");
    if (gain.size() != d || bias.size() != d) throw ShapeError("layer_norm: affine parameters do not match last axis");
    Tensor out(x.shape());
    const std::size_t rows = x.rows();
    for (std::size_t r = 0; r < rows; ++r) {
        const double* xr = x.ptr() + r * d;
        double* yr = out.ptr() + r * d;
        double mu = 0.0;
        for (std::size_t j = 0; j < d; ++j) mu += xr[j];
        mu /= static_cast<double>(d);
        double var = 0.0;
        for (std::size_t j = 0; j < d; ++j) var += (xr[j] - mu) * (xr[j] - mu);
        var /= static_cast<double>(d);
        const double inv = 1.0 / std::sqrt(var + eps);
        for (std::size_t j = 0; j < d; ++j) yr[j] = (xr[j] - mu) * inv * gain[j] + bias[j];
    }
    return out;
}

LayerNormGrad layer_norm_backward(const Tensor& x, const Tensor& gain, const Tensor& grad, double eps) {
    require_same(x, grad, "layer_norm_backward");
    const std::size_t d = x.cols();
    const std::size_t rows = x.rows();
    LayerNormGrad g{Tensor(x.shape()), Tensor({d}), Tensor({d})};
    std::vector<double> xhat(d), dxhat(d);
    for (std::size_t r = 0; r < rows; ++r) {
        const double* xr = x.ptr() + r * d;
        const double* gr = grad.ptr() + r * d;
        double* dx = g.x.ptr() + r * d;
        double mu = 0.0;
        for (std::size_t j = 0; j < d; ++j) mu += xr[j];
        mu /= static_cast<double>(d);
        double var = 0.0;
        for (std::size_t j = 0; j < d; ++j) var += (xr[j] - mu) * (xr[j] - mu);
        var /= static_cast<double>(d);
        const double inv = 1.0 / std::sqrt(var + eps);
        double mean_dxhat = 0.0, mean_dxhat_xhat = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            xhat[j] = (xr[j] - mu) * inv;
            dxhat[j] = gr[j] * gain[j];
            g.gain[j] += gr[j] * xhat[j];
            g.bias[j] += gr[j];
            mean_dxhat += dxhat[j];
            mean_dxhat_xhat += dxhat[j] * xhat[j];
        }
        mean_dxhat /= static_cast<double>(d);
        mean_dxhat_xhat /= static_cast<double>(d);
        for (std::size_t j = 0; j < d; ++j) dx[j] = inv * (dxhat[j] - mean_dxhat - xhat[j] * mean_dxhat_xhat);
    }
    return g;
}

DropoutResult dropout(const Tensor& x, double ratio, SeededRng& rng, bool training) {
    if (!(ratio >= 0.0 && ratio < 1.0)) throw DomainError("dropout ratio must be in [0,1), got " + std::to_string(ratio));
    if (!training || ratio == 0.0) return {x, Tensor(x.shape(), 1.0)};
    DropoutResult r{Tensor(x.shape()), Tensor(x.shape())};
    const double keep_scale = 1.0 / (1.0 - ratio);
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double s = rng.uniform() < ratio ? 0.0 : keep_scale;
        r.scale[i] = s;
        r.out[i] = x[i] * s;
    }
    return r;
}

}  // namespace nilm
