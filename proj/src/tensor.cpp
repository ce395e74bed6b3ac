#include "calm/tensor.hpp"

#include <cmath>
#include <functional>
#include <numeric>

namespace calm {

std::string shape_str(const Shape& shape) {
    std::string out = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) out += "x";
        out += std::to_string(shape[i]);
    }
    return out + "]";
}

std::size_t shape_product(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                           std::multiplies<>());
}

Tensor::Tensor(Shape shape, double fill)
    : shape_(std::move(shape)), values_(shape_product(shape_), fill) {
    for (auto d : shape_)
        if (d == 0) throw DimensionError("tensor dimension must be positive: " + shape_str(shape_));
}

Tensor::Tensor(Shape shape, std::vector<double> values)
    : shape_(std::move(shape)), values_(std::move(values)) {
    for (auto d : shape_)
        if (d == 0) throw DimensionError("tensor dimension must be positive: " + shape_str(shape_));
    if (shape_product(shape_) != values_.size())
        throw DimensionError("shape " + shape_str(shape_) + " does not hold " +
                             std::to_string(values_.size()) + " values");
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols,
                      std::initializer_list<double> values) {
    return Tensor({rows, cols}, std::vector<double>(values));
}

Tensor Tensor::vector(std::initializer_list<double> values) {
    return Tensor({values.size()}, std::vector<double>(values));
}

bool Tensor::all_finite() const {
    for (double v : values_)
        if (!std::isfinite(v)) return false;
    return true;
}

}  // namespace calm
