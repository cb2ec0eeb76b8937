#include "remap/diff/tensor.hpp"

#include <algorithm>
#include <functional>
#include <numeric>
#include <sstream>

#include "remap/common/errors.hpp"

namespace remap::diff {

std::size_t element_count(std::span<const std::size_t> dims) {
    return std::accumulate(dims.begin(), dims.end(), std::size_t{1}, std::multiplies<>());
}

Tensor::Tensor(std::vector<std::size_t> dims, double fill)
    : shape(std::move(dims)), values(element_count(shape), fill) {}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, double fill) {
    return Tensor({rows, cols}, fill);
}

Tensor Tensor::row(std::vector<double> data) {
    Tensor t;
    t.shape = {1, data.size()};
    t.values = std::move(data);
    return t;
}

Tensor Tensor::from(std::vector<std::size_t> dims, std::vector<double> data) {
    if (element_count(dims) != data.size()) {
        throw ConfigError("tensor data length " + std::to_string(data.size()) +
                          " does not match shape element count " +
                          std::to_string(element_count(dims)));
    }
    Tensor t;
    t.shape = std::move(dims);
    t.values = std::move(data);
    return t;
}

std::size_t Tensor::rows() const {
    if (shape.empty()) return values.empty() ? 0 : 1;
    return shape.size() == 1 ? 1 : shape[0];
}

std::size_t Tensor::cols() const {
    if (shape.empty()) return values.size();
    if (shape.size() == 1) return shape[0];
    return element_count(std::span(shape).subspan(1));
}

bool Tensor::all_finite() const {
    auto finite = [](double x) { return std::isfinite(x); };
    return std::all_of(values.begin(), values.end(), finite) &&
           std::all_of(grad.begin(), grad.end(), finite);
}

void Tensor::zero_grad() { std::fill(grad.begin(), grad.end(), 0.0); }

std::string Tensor::shape_string() const {
    std::ostringstream out;
    out << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) out << (i ? "x" : "") << shape[i];
    out << ']';
    return out.str();
}

}  // namespace remap::diff
