#include "nilm/tensor.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <numeric>

#include "nilm/errors.hpp"

namespace nilm {

std::string shape_str(const Shape& shape) {
    std::string out = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) out += "x";
        out += std::to_string(shape[i]);
    }
    return out + "]";
}

std::size_t shape_numel(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (shape_numel(shape_) != data_.size()) {
        throw ShapeError("tensor shape " + shape_str(shape_) + " does not match " +
                         std::to_string(data_.size()) + " elements");
    }
}

Tensor Tensor::checked(Shape shape, std::vector<double> data) {
    Tensor t(std::move(shape), std::move(data));
    if (!t.all_finite()) throw NumericError("non-finite value in checked tensor " + shape_str(t.shape()));
    return t;
}

Tensor Tensor::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
    const std::size_t n = rows.size();
    const std::size_t m = n ? rows.begin()->size() : 0;
    std::vector<double> data;
    data.reserve(n * m);
    for (const auto& r : rows) {
        if (r.size() != m) throw ShapeError("ragged rows in Tensor::from_rows");
        data.insert(data.end(), r.begin(), r.end());
    }
    return Tensor({n, m}, std::move(data));
}

Tensor Tensor::vector(std::vector<double> v) {
    const std::size_t n = v.size();
    return Tensor({n}, std::move(v));
}

Tensor Tensor::reshaped(Shape shape) const {
    if (shape_numel(shape) != data_.size()) {
        throw ShapeError("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
    }
    return Tensor(std::move(shape), data_);
}

bool Tensor::all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

Tensor Tensor::row(std::size_t i) const {
    const std::size_t c = cols();
    if (i >= rows()) throw ShapeError("row index out of range for " + shape_str(shape_));
    return Tensor({c}, std::vector<double>(data_.begin() + i * c, data_.begin() + (i + 1) * c));
}

Tensor Tensor::slice0(std::size_t index) const {
    if (shape_.empty() || index >= shape_[0]) throw ShapeError("slice index out of range for " + shape_str(shape_));
    Shape sub(shape_.begin() + 1, shape_.end());
    if (sub.empty()) sub = {1};
    const std::size_t n = shape_numel(sub);
    return Tensor(sub, std::vector<double>(data_.begin() + index * n, data_.begin() + (index + 1) * n));
}

std::string format_double(double v) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, ptr);
}

}  // namespace nilm
