#pragma once

#include <span>
#include <string_view>
#include <vector>

#include "remap/diff/tape.hpp"

namespace remap::diff {

/// Elementwise and concatenating nonlinearities. The concatenating ones
/// widen their input: CReLU, Sq and ReluSquare by 2x, CReS by 4x.
enum class Activation {
    Identity,
    Relu,
    Tanh,
    Sigmoid,
    Elu,         // alpha = 1
    CRelu,       // ReLU(x) ⊕ ReLU(-x)
    Sq,          // x ⊕ x²
    CReS,        // ReLU(x) ⊕ ReLU(-x) ⊕ ReLU²(x) ⊕ ReLU²(-x)
    ReluSquare,  // ReLU(x) ⊕ x²
};

std::size_t width_multiplier(Activation a);
std::string_view activation_name(Activation a);
/// Accepts relu, tanh, sigmoid, elu, crelu, sq, cres, relu-plus-square, identity.
Activation parse_activation(std::string_view name);

/// output = x·Wᵀ + b with W shaped out×in and b shaped out.
Var affine(Tape& tape, Var x, Parameter& weight, Parameter& bias);

/// Affine map applied to the column concatenation of `parts`. Parts with a
/// single row are shared by every output row and their product is computed
/// once, so scene-level inputs do not scale with the candidate count.
Var affine_concat(Tape& tape, std::span<const Var> parts, Parameter& weight, Parameter& bias);

/// Column concatenation; single-row parts broadcast to the common row count.
Var concat(Tape& tape, std::span<const Var> parts);
Var slice_cols(Tape& tape, Var x, std::size_t begin, std::size_t end);
/// Same values, new rows x cols view (row-major order is preserved).
Var reshape(Tape& tape, Var x, std::size_t rows, std::size_t cols);

Var activate(Tape& tape, Activation a, Var x);
Var crelu(Tape& tape, Var x);
Var sq(Tape& tape, Var x);
Var cres(Tape& tape, Var x);
Var relu_square(Tape& tape, Var x);
/// Named elementwise activation: relu, tanh, sigmoid or elu.
Var pointwise(Tape& tape, std::string_view name, Var x);

/// Elementwise product with broadcasting of unit rows and/or unit columns of `b`.
Var mul(Tape& tape, Var a, Var b);
Var add(Tape& tape, Var a, Var b);
/// Row-wise outer product: out[n, i*q + j] = a[n, i] * b[n, j]. Unit rows broadcast.
Var outer_rows(Tape& tape, Var a, Var b);
Var softmax_rows(Tape& tape, Var x);
Var sum(Tape& tape, Var x);

/// Step function mapped to ±scale logits; carries no gradient.
Var heaviside_logit(Tape& tape, Var x, double scale);

/// One supervised entry of a logit matrix.
struct LossTerm {
    std::size_t row = 0;
    std::size_t col = 0;
    double target = 0.0;
};

/// Mean sigmoid cross-entropy over `terms` (a 1x1 result). Throws InputError
/// when a target lies outside [0, 1] or an index is out of range.
Var sigmoid_cross_entropy(Tape& tape, Var logits, std::span<const LossTerm> terms);

/// Scalar forms used by logging and tests.
double sigmoid(double z);
double sigmoid_cross_entropy(double logit, double target);

/// Layer-level vote: scores = (⊕_ω x_ω)·W + b with W shaped (Ω·L)×Ω,
/// p = softmax(scores) per row, output = Σ_ω p_ω x_ω. When `probs` is
/// non-null it receives the N×Ω vote probabilities.
Var layer_vote_mix(Tape& tape, std::span<const Var> layers, Parameter& weight, Parameter& bias,
                   Tensor* probs = nullptr);

/// Unit-level vote: for every unit j, scores = W_j·(x_0[j], …, x_{Ω-1}[j]) + b_j
/// with W shaped L×Ω×Ω (score index major) and b shaped L×Ω. When `probs` is
/// non-null it receives N×(L·Ω) probabilities, unit-major.
Var unit_vote_mix(Tape& tape, std::span<const Var> layers, Parameter& weight, Parameter& bias,
                  Tensor* probs = nullptr);

}  // namespace remap::diff
