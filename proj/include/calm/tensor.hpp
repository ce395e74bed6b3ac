#pragma once

#include <cstddef>
#include <initializer_list>
#include <string>
#include <vector>

#include "calm/errors.hpp"

namespace calm {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& shape);

// Dense row-major array of doubles. A 1-D tensor of length n behaves as a
// 1 x n row wherever a matrix is expected.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape, double fill = 0.0);
    Tensor(Shape shape, std::vector<double> values);

    static Tensor matrix(std::size_t rows, std::size_t cols,
                         std::initializer_list<double> values);
    static Tensor vector(std::initializer_list<double> values);

    const Shape& shape() const { return shape_; }
    std::size_t size() const { return values_.size(); }
    std::size_t cols() const { return shape_.empty() ? 0 : shape_.back(); }
    std::size_t rows() const { return cols() == 0 ? 0 : values_.size() / cols(); }

    double* data() { return values_.data(); }
    const double* data() const { return values_.data(); }
    std::vector<double>& values() { return values_; }
    const std::vector<double>& values() const { return values_; }

    double& operator[](std::size_t i) { return values_[i]; }
    double operator[](std::size_t i) const { return values_[i]; }
    double& at(std::size_t r, std::size_t c) { return values_[r * cols() + c]; }
    double at(std::size_t r, std::size_t c) const { return values_[r * cols() + c]; }

    bool all_finite() const;

    friend bool operator==(const Tensor&, const Tensor&) = default;

private:
    Shape shape_;
    std::vector<double> values_;
};

std::size_t shape_product(const Shape& shape);

}  // namespace calm
