#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace nilm {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

// Dense row-major array of doubles. All arithmetic in the library runs in
// 64-bit so that training, inference and gradient checks share one path.
class Tensor {
   public:
    Tensor() = default;
    explicit Tensor(Shape shape, double fill = 0.0);
    Tensor(Shape shape, std::vector<double> data);

    // Same as the (shape, data) constructor but rejects NaN/Inf.
    static Tensor checked(Shape shape, std::vector<double> data);
    static Tensor scalar(double v) { return Tensor({1}, std::vector<double>{v}); }
    static Tensor from_rows(std::initializer_list<std::initializer_list<double>> rows);
    static Tensor vector(std::vector<double> v);

    const Shape& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    std::span<double> data() { return data_; }
    std::span<const double> data() const { return data_; }
    double* ptr() { return data_.data(); }
    const double* ptr() const { return data_.data(); }
    const std::vector<double>& values() const { return data_; }

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }
    double& operator()(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }
    double operator()(std::size_t i, std::size_t j) const { return data_[i * shape_[1] + j]; }
    double& operator()(std::size_t i, std::size_t j, std::size_t k) {
        return data_[(i * shape_[1] + j) * shape_[2] + k];
    }
    double operator()(std::size_t i, std::size_t j, std::size_t k) const {
        return data_[(i * shape_[1] + j) * shape_[2] + k];
    }

    // Size of the last axis; a rank-0/empty tensor reports 0.
    std::size_t cols() const { return shape_.empty() ? 0 : shape_.back(); }
    std::size_t rows() const { return cols() == 0 ? 0 : data_.size() / cols(); }

    Tensor reshaped(Shape shape) const;
    bool all_finite() const;
    void fill(double v);
    Tensor zeros_like() const { return Tensor(shape_); }

    // Copies row `i` of a rank-2 view (all leading axes flattened).
    Tensor row(std::size_t i) const;
    // Slice along axis 0.
    Tensor slice0(std::size_t index) const;

    bool operator==(const Tensor& other) const = default;

   private:
    Shape shape_;
    std::vector<double> data_;
};

// Shortest decimal text that round-trips to the same double.
std::string format_double(double v);

}  // namespace nilm
