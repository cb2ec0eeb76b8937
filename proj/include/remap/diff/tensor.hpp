#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace remap::diff {

/// Dense row-major array of doubles. Rank-2 is the working case: rows index
/// candidates (or batch items), columns index units. Higher ranks are viewed
/// as shape[0] rows by the product of the remaining dimensions.
struct Tensor {
    std::vector<std::size_t> shape;
    std::vector<double> values;
    /// Empty until a gradient is accumulated; then the same length as values.
    std::vector<double> grad;

    Tensor() = default;
    explicit Tensor(std::vector<std::size_t> dims, double fill = 0.0);

    static Tensor matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
    static Tensor row(std::vector<double> data);
    /// Throws ConfigError when the element count does not match the shape.
    static Tensor from(std::vector<std::size_t> dims, std::vector<double> data);

    std::size_t size() const { return values.size(); }
    std::size_t rows() const;
    std::size_t cols() const;

    double& operator()(std::size_t r, std::size_t c) { return values[r * cols() + c]; }
    double operator()(std::size_t r, std::size_t c) const { return values[r * cols() + c]; }

    std::span<double> row_span(std::size_t r) { return {values.data() + r * cols(), cols()}; }
    std::span<const double> row_span(std::size_t r) const {
        return {values.data() + r * cols(), cols()};
    }

    bool all_finite() const;
    void zero_grad();
    std::string shape_string() const;
};

std::size_t element_count(std::span<const std::size_t> dims);

/// A named tensor the optimizer may update. Frozen parameters keep their
/// values no matter what gradients reach them.
struct Parameter {
    std::string name;
    Tensor tensor;
    bool trainable = true;
};

}  // namespace remap::diff
