#include "remap/diff/ops.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "remap/common/errors.hpp"

namespace remap::diff {
namespace {

// Id the next pushed node will receive; closures capture it before the push.
Var next_var(const Tape& tape) { return Var{tape.size()}; }

std::size_t common_rows(const Tape& tape, std::span<const Var> parts) {
    std::size_t rows = 1;
    for (Var p : parts) {
        const std::size_t r = tape.value(p).rows();
        if (r == 1) continue;
        if (rows != 1 && rows != r) {
            throw ConfigError("row count mismatch: " + std::to_string(rows) + " vs " +
                              std::to_string(r));
        }
        rows = r;
    }
    return rows;
}

bool any_needs_grad(const Tape& tape, std::span<const Var> vars) {
    return std::any_of(vars.begin(), vars.end(), [&](Var v) { return tape.needs_grad(v); });
}

double relu(double x) { return x > 0 ? x : 0.0; }

template <typename F, typename D>
Var elementwise(Tape& tape, Var x, F f, D df) {
    const Tensor& in = tape.value(x);
    Tensor out(in.shape);
    for (std::size_t i = 0; i < in.size(); ++i) out.values[i] = f(in.values[i]);
    const Var y = next_var(tape);
    return tape.push(std::move(out), tape.needs_grad(x), [x, y, df](Tape& t) {
        const Tensor& in = t.value(x);
        const auto& gy = t.grad(y);
        auto& gx = t.grad(x);
        for (std::size_t i = 0; i < in.size(); ++i) gx[i] += gy[i] * df(in.values[i]);
    });
}

// Concatenating activation: each input row of width C becomes `Blocks`
// consecutive blocks of width C, block b holding forward(b, x).
template <std::size_t Blocks, typename F, typename D>
Var blockwise(Tape& tape, Var x, F forward, D derivative) {
    const Tensor& in = tape.value(x);
    const std::size_t rows = in.rows(), cols = in.cols();
    Tensor out = Tensor::matrix(rows, Blocks * cols);
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < cols; ++c) {
            const double v = in.values[r * cols + c];
            for (std::size_t b = 0; b < Blocks; ++b) {
                out.values[r * Blocks * cols + b * cols + c] = forward(b, v);
            }
        }
    }
    const Var y = next_var(tape);
    return tape.push(std::move(out), tape.needs_grad(x), [x, y, derivative](Tape& t) {
        const Tensor& in = t.value(x);
        const std::size_t rows = in.rows(), cols = in.cols();
        const auto& gy = t.grad(y);
        auto& gx = t.grad(x);
        for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t c = 0; c < cols; ++c) {
                const double v = in.values[r * cols + c];
                double g = 0.0;
                for (std::size_t b = 0; b < Blocks; ++b) {
                    g += gy[r * Blocks * cols + b * cols + c] * derivative(b, v);
                }
                gx[r * cols + c] += g;
            }
        }
    });
}

// Broadcast index for an operand with `rows`x`cols` against an output shape.
struct Broadcast {
    std::size_t rows, cols;
    std::size_t index(std::size_t r, std::size_t c) const {
        return (rows == 1 ? 0 : r) * cols + (cols == 1 ? 0 : c);
    }
};

std::size_t broadcast_dim(std::size_t a, std::size_t b, const char* what) {
    if (a == b || b == 1) return a;
    if (a == 1) return b;
    throw ConfigError(std::string("cannot broadcast ") + what + " " + std::to_string(a) +
                      " against " + std::to_string(b));
}

template <typename F, typename DA, typename DB>
Var binary_broadcast(Tape& tape, Var a, Var b, F f, DA da, DB db) {
    const Tensor& ta = tape.value(a);
    const Tensor& tb = tape.value(b);
    const Broadcast ba{ta.rows(), ta.cols()}, bb{tb.rows(), tb.cols()};
    const std::size_t rows = broadcast_dim(ba.rows, bb.rows, "rows");
    const std::size_t cols = broadcast_dim(ba.cols, bb.cols, "cols");
    Tensor out = Tensor::matrix(rows, cols);
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c)
            out.values[r * cols + c] = f(ta.values[ba.index(r, c)], tb.values[bb.index(r, c)]);
    const Var y = next_var(tape);
    const bool ng = tape.needs_grad(a) || tape.needs_grad(b);
    return tape.push(std::move(out), ng, [=](Tape& t) {
        const Tensor& ta = t.value(a);
        const Tensor& tb = t.value(b);
        const auto& gy = t.grad(y);
        const bool need_a = t.needs_grad(a), need_b = t.needs_grad(b);
        for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t c = 0; c < cols; ++c) {
                const double va = ta.values[ba.index(r, c)], vb = tb.values[bb.index(r, c)];
                const double g = gy[r * cols + c];
                if (need_a) t.grad(a)[ba.index(r, c)] += g * da(va, vb);
                if (need_b) t.grad(b)[bb.index(r, c)] += g * db(va, vb);
            }
        }
    });
}

void check_vote_layers(const Tape& tape, std::span<const Var> layers, std::size_t& width) {
    if (layers.empty()) throw ConfigError("vote over an empty module set");
    width = tape.value(layers[0]).cols();
    for (Var l : layers) {
        if (tape.value(l).cols() != width) {
            throw ConfigError("vote layers differ in width: " + std::to_string(width) + " vs " +
                              std::to_string(tape.value(l).cols()));
        }
    }
}

}  // namespace

std::size_t width_multiplier(Activation a) {
    switch (a) {
        case Activation::CRelu:
        case Activation::Sq:
        case Activation::ReluSquare:
            return 2;
        case Activation::CReS:
            return 4;
        default:
            return 1;
    }
}

std::string_view activation_name(Activation a) {
    switch (a) {
        case Activation::Identity: return "identity";
        case Activation::Relu: return "relu";
        case Activation::Tanh: return "tanh";
        case Activation::Sigmoid: return "sigmoid";
        case Activation::Elu: return "elu";
        case Activation::CRelu: return "crelu";
        case Activation::Sq: return "sq";
        case Activation::CReS: return "cres";
        case Activation::ReluSquare: return "relu-plus-square";
    }
    return "?";
}

Activation parse_activation(std::string_view name) {
    for (Activation a : {Activation::Identity, Activation::Relu, Activation::Tanh,
                         Activation::Sigmoid, Activation::Elu, Activation::CRelu, Activation::Sq,
                         Activation::CReS, Activation::ReluSquare}) {
        if (activation_name(a) == name) return a;
    }
    throw ConfigError("unknown activation '" + std::string(name) + "'");
}

Var affine(Tape& tape, Var x, Parameter& weight, Parameter& bias) {
    const Var parts[] = {x};
    return affine_concat(tape, parts, weight, bias);
}

Var affine_concat(Tape& tape, std::span<const Var> parts, Parameter& weight, Parameter& bias) {
    if (parts.empty()) throw ConfigError("affine over no inputs");
    const std::size_t rows = common_rows(tape, parts);
    std::size_t in_width = 0;
    for (Var p : parts) in_width += tape.value(p).cols();
    const Tensor& w = weight.tensor;
    if (w.shape.size() != 2 || w.shape[1] != in_width) {
        throw ConfigError("affine '" + weight.name + "': weight " + w.shape_string() +
                          " does not accept input width " + std::to_string(in_width));
    }
    const std::size_t out_width = w.shape[0];
    if (bias.tensor.size() != out_width) {
        throw ConfigError("affine '" + bias.name + "': bias length " +
                          std::to_string(bias.tensor.size()) + " vs output width " +
                          std::to_string(out_width));
    }

    Tensor out = Tensor::matrix(rows, out_width);
    std::vector<double> shared(bias.tensor.values);
    std::size_t offset = 0;
    for (Var p : parts) {
        const Tensor& xp = tape.value(p);
        const std::size_t pc = xp.cols();
        if (xp.rows() == 1) {
            for (std::size_t o = 0; o < out_width; ++o) {
                const double* wr = w.values.data() + o * in_width + offset;
                double acc = 0.0;
                for (std::size_t k = 0; k < pc; ++k) acc += wr[k] * xp.values[k];
                shared[o] += acc;
            }
        }
        offset += pc;
    }
    for (std::size_t n = 0; n < rows; ++n)
        std::copy(shared.begin(), shared.end(), out.values.begin() + n * out_width);
    offset = 0;
    for (Var p : parts) {
        const Tensor& xp = tape.value(p);
        const std::size_t pc = xp.cols();
        if (xp.rows() != 1) {
            for (std::size_t n = 0; n < rows; ++n) {
                const double* xr = xp.values.data() + n * pc;
                double* yr = out.values.data() + n * out_width;
                for (std::size_t o = 0; o < out_width; ++o) {
                    const double* wr = w.values.data() + o * in_width + offset;
                    double acc = 0.0;
                    for (std::size_t k = 0; k < pc; ++k) acc += wr[k] * xr[k];
                    yr[o] += acc;
                }
            }
        }
        offset += pc;
    }

    const Var wv = tape.parameter(weight);
    const Var bv = tape.parameter(bias);
    std::vector<Var> inputs(parts.begin(), parts.end());
    const Var y = next_var(tape);
    const bool ng = any_needs_grad(tape, parts) || tape.needs_grad(wv) || tape.needs_grad(bv);
    return tape.push(std::move(out), ng, [inputs, wv, bv, y, rows, in_width, out_width](Tape& t) {
        const auto& gy = t.grad(y);
        const Tensor& w = t.value(wv);
        std::vector<double> col_sum(out_width, 0.0);
        for (std::size_t n = 0; n < rows; ++n)
            for (std::size_t o = 0; o < out_width; ++o) col_sum[o] += gy[n * out_width + o];
        if (t.needs_grad(bv)) {
            auto& gb = t.grad(bv);
            for (std::size_t o = 0; o < out_width; ++o) gb[o] += col_sum[o];
        }
        const bool need_w = t.needs_grad(wv);
        std::size_t offset = 0;
        for (Var p : inputs) {
            const Tensor& xp = t.value(p);
            const std::size_t pc = xp.cols();
            const bool need_x = t.needs_grad(p);
            if (xp.rows() == 1) {
                if (need_w) {
                    auto& gw = t.grad(wv);
                    for (std::size_t o = 0; o < out_width; ++o)
                        for (std::size_t k = 0; k < pc; ++k)
                            gw[o * in_width + offset + k] += col_sum[o] * xp.values[k];
                }
                if (need_x) {
                    auto& gx = t.grad(p);
                    for (std::size_t o = 0; o < out_width; ++o)
                        for (std::size_t k = 0; k < pc; ++k)
                            gx[k] += col_sum[o] * w.values[o * in_width + offset + k];
                }
            } else {
                for (std::size_t n = 0; n < rows; ++n) {
                    const double* xr = xp.values.data() + n * pc;
                    for (std::size_t o = 0; o < out_width; ++o) {
                        const double g = gy[n * out_width + o];
                        if (g == 0.0) continue;
                        if (need_w) {
                            double* gwr = t.grad(wv).data() + o * in_width + offset;
                            for (std::size_t k = 0; k < pc; ++k) gwr[k] += g * xr[k];
                        }
                        if (need_x) {
                            double* gxr = t.grad(p).data() + n * pc;
                            const double* wr = w.values.data() + o * in_width + offset;
                            for (std::size_t k = 0; k < pc; ++k) gxr[k] += g * wr[k];
                        }
                    }
                }
            }
            offset += pc;
        }
    });
}

Var concat(Tape& tape, std::span<const Var> parts) {
    if (parts.empty()) throw ConfigError("concat of no inputs");
    const std::size_t rows = common_rows(tape, parts);
    std::size_t width = 0;
    for (Var p : parts) width += tape.value(p).cols();
    Tensor out = Tensor::matrix(rows, width);
    std::size_t offset = 0;
    for (Var p : parts) {
        const Tensor& xp = tape.value(p);
        const std::size_t pc = xp.cols();
        for (std::size_t n = 0; n < rows; ++n) {
            const double* src = xp.values.data() + (xp.rows() == 1 ? 0 : n) * pc;
            std::copy(src, src + pc, out.values.begin() + n * width + offset);
        }
        offset += pc;
    }
    std::vector<Var> inputs(parts.begin(), parts.end());
    const Var y = next_var(tape);
    return tape.push(std::move(out), any_needs_grad(tape, parts), [inputs, y, rows, width](Tape& t) {
        const auto& gy = t.grad(y);
        std::size_t offset = 0;
        for (Var p : inputs) {
            const Tensor& xp = t.value(p);
            const std::size_t pc = xp.cols();
            if (t.needs_grad(p)) {
                auto& gx = t.grad(p);
                for (std::size_t n = 0; n < rows; ++n) {
                    const std::size_t src_row = xp.rows() == 1 ? 0 : n;
                    for (std::size_t k = 0; k < pc; ++k)
                        gx[src_row * pc + k] += gy[n * width + offset + k];
                }
            }
            offset += pc;
        }
    });
}

Var slice_cols(Tape& tape, Var x, std::size_t begin, std::size_t end) {
    const Tensor& in = tape.value(x);
    const std::size_t rows = in.rows(), cols = in.cols();
    if (begin > end || end > cols) {
        throw ConfigError("column slice [" + std::to_string(begin) + ", " + std::to_string(end) +
                          ") out of range for width " + std::to_string(cols));
    }
    const std::size_t width = end - begin;
    Tensor out = Tensor::matrix(rows, width);
    for (std::size_t n = 0; n < rows; ++n)
        std::copy_n(in.values.begin() + n * cols + begin, width, out.values.begin() + n * width);
    const Var y = next_var(tape);
    return tape.push(std::move(out), tape.needs_grad(x), [x, y, rows, cols, begin, width](Tape& t) {
        const auto& gy = t.grad(y);
        auto& gx = t.grad(x);
        for (std::size_t n = 0; n < rows; ++n)
            for (std::size_t k = 0; k < width; ++k) gx[n * cols + begin + k] += gy[n * width + k];
    });
}

Var crelu(Tape& tape, Var x) {
    return blockwise<2>(
        tape, x, [](std::size_t b, double v) { return b == 0 ? relu(v) : relu(-v); },
        [](std::size_t b, double v) {
            if (b == 0) return v > 0 ? 1.0 : 0.0;
            return v < 0 ? -1.0 : 0.0;
        });
}

Var sq(Tape& tape, Var x) {
    return blockwise<2>(
        tape, x, [](std::size_t b, double v) { return b == 0 ? v : v * v; },
        [](std::size_t b, double v) { return b == 0 ? 1.0 : 2.0 * v; });
}

Var cres(Tape& tape, Var x) {
    return blockwise<4>(
        tape, x,
        [](std::size_t b, double v) {
            switch (b) {
                case 0: return relu(v);
                case 1: return relu(-v);
                case 2: return relu(v) * relu(v);
                default: return relu(-v) * relu(-v);
            }
        },
        [](std::size_t b, double v) {
            switch (b) {
                case 0: return v > 0 ? 1.0 : 0.0;
                case 1: return v < 0 ? -1.0 : 0.0;
                case 2: return 2.0 * relu(v);
                default: return -2.0 * relu(-v);
            }
        });
}

Var relu_square(Tape& tape, Var x) {
    return blockwise<2>(
        tape, x, [](std::size_t b, double v) { return b == 0 ? relu(v) : v * v; },
        [](std::size_t b, double v) {
            if (b == 0) return v > 0 ? 1.0 : 0.0;
            return 2.0 * v;
        });
}

Var activate(Tape& tape, Activation a, Var x) {
    switch (a) {
        case Activation::Identity:
            return x;
        case Activation::Relu:
            return elementwise(tape, x, relu, [](double v) { return v > 0 ? 1.0 : 0.0; });
        case Activation::Tanh:
            return elementwise(
                tape, x, [](double v) { return std::tanh(v); },
                [](double v) {
                    const double th = std::tanh(v);
                    return 1.0 - th * th;
                });
        case Activation::Sigmoid:
            return elementwise(
                tape, x, [](double v) { return sigmoid(v); },
                [](double v) {
                    const double s = sigmoid(v);
                    return s * (1.0 - s);
                });
        case Activation::Elu:
            return elementwise(
                tape, x, [](double v) { return v > 0 ? v : std::expm1(v); },
                [](double v) { return v > 0 ? 1.0 : std::exp(v); });
        case Activation::CRelu:
            return crelu(tape, x);
        case Activation::Sq:
            return sq(tape, x);
        case Activation::CReS:
            return cres(tape, x);
        case Activation::ReluSquare:
            return relu_square(tape, x);
    }
    throw ConfigError("unhandled activation");
}

Var pointwise(Tape& tape, std::string_view name, Var x) {
    const Activation a = parse_activation(name);
    if (width_multiplier(a) != 1 || a == Activation::Identity) {
        throw ConfigError("'" + std::string(name) + "' is not a pointwise activation");
    }
    return activate(tape, a, x);
}

Var mul(Tape& tape, Var a, Var b) {
    return binary_broadcast(
        tape, a, b, [](double x, double y) { return x * y; }, [](double, double y) { return y; },
        [](double x, double) { return x; });
}

Var add(Tape& tape, Var a, Var b) {
    return binary_broadcast(
        tape, a, b, [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
        [](double, double) { return 1.0; });
}

Var outer_rows(Tape& tape, Var a, Var b) {
    const Var parts[] = {a, b};
    const std::size_t rows = common_rows(tape, parts);
    const Tensor& ta = tape.value(a);
    const Tensor& tb = tape.value(b);
    const std::size_t p = ta.cols(), q = tb.cols();
    const bool a_shared = ta.rows() == 1, b_shared = tb.rows() == 1;
    Tensor out = Tensor::matrix(rows, p * q);
    for (std::size_t n = 0; n < rows; ++n) {
        const double* ar = ta.values.data() + (a_shared ? 0 : n) * p;
        const double* br = tb.values.data() + (b_shared ? 0 : n) * q;
        for (std::size_t i = 0; i < p; ++i)
            for (std::size_t j = 0; j < q; ++j) out.values[n * p * q + i * q + j] = ar[i] * br[j];
    }
    const Var y = next_var(tape);
    const bool ng = tape.needs_grad(a) || tape.needs_grad(b);
    return tape.push(std::move(out), ng, [=](Tape& t) {
        const Tensor& ta = t.value(a);
        const Tensor& tb = t.value(b);
        const auto& gy = t.grad(y);
        const bool need_a = t.needs_grad(a), need_b = t.needs_grad(b);
        for (std::size_t n = 0; n < rows; ++n) {
            const std::size_t ra = a_shared ? 0 : n, rb = b_shared ? 0 : n;
            for (std::size_t i = 0; i < p; ++i) {
                for (std::size_t j = 0; j < q; ++j) {
                    const double g = gy[n * p * q + i * q + j];
                    if (need_a) t.grad(a)[ra * p + i] += g * tb.values[rb * q + j];
                    if (need_b) t.grad(b)[rb * q + j] += g * ta.values[ra * p + i];
                }
            }
        }
    });
}

Var softmax_rows(Tape& tape, Var x) {
    const Tensor& in = tape.value(x);
    const std::size_t rows = in.rows(), cols = in.cols();
    Tensor out = Tensor::matrix(rows, cols);
    for (std::size_t n = 0; n < rows; ++n) {
        const double* xr = in.values.data() + n * cols;
        double* yr = out.values.data() + n * cols;
        const double mx = *std::max_element(xr, xr + cols);
        double total = 0.0;
        for (std::size_t k = 0; k < cols; ++k) total += (yr[k] = std::exp(xr[k] - mx));
        for (std::size_t k = 0; k < cols; ++k) yr[k] /= total;
    }
    const Var y = next_var(tape);
    return tape.push(std::move(out), tape.needs_grad(x), [x, y, rows, cols](Tape& t) {
        const Tensor& yv = t.value(y);
        const auto& gy = t.grad(y);
        auto& gx = t.grad(x);
        for (std::size_t n = 0; n < rows; ++n) {
            double dot = 0.0;
            for (std::size_t k = 0; k < cols; ++k) dot += gy[n * cols + k] * yv.values[n * cols + k];
            for (std::size_t k = 0; k < cols; ++k)
                gx[n * cols + k] += yv.values[n * cols + k] * (gy[n * cols + k] - dot);
        }
    });
}

Var sum(Tape& tape, Var x) {
    const Tensor& in = tape.value(x);
    double total = 0.0;
    for (double v : in.values) total += v;
    const Var y = next_var(tape);
    return tape.push(Tensor::from({1, 1}, {total}), tape.needs_grad(x), [x, y](Tape& t) {
        const double g = t.grad(y)[0];
        for (double& gx : t.grad(x)) gx += g;
    });
}

Var reshape(Tape& tape, Var x, std::size_t rows, std::size_t cols) {
    const Tensor& in = tape.value(x);
    if (rows * cols != in.size()) {
        throw ConfigError("cannot reshape " + in.shape_string() + " to " + std::to_string(rows) + "x" +
                          std::to_string(cols));
    }
    Tensor out = Tensor::matrix(rows, cols);
    out.values = in.values;
    const Var y = next_var(tape);
    return tape.push(std::move(out), tape.needs_grad(x), [x, y](Tape& t) {
        const auto& gy = t.grad(y);
        auto& gx = t.grad(x);
        for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i];
    });
}

Var heaviside_logit(Tape& tape, Var x, double scale) {
    const Tensor& in = tape.value(x);
    Tensor out(in.shape);
    for (std::size_t i = 0; i < in.size(); ++i) out.values[i] = in.values[i] > 0 ? scale : -scale;
    return tape.push(std::move(out), false, {});
}

double sigmoid(double z) {
    if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
    const double e = std::exp(z);
    return e / (1.0 + e);
}

double sigmoid_cross_entropy(double logit, double target) {
    if (!(target >= 0.0 && target <= 1.0)) {
        throw InputError("cross-entropy target " + std::to_string(target) + " outside [0, 1]");
    }
    // log(1 + e^z) - t z, written so that neither branch overflows.
    return std::max(logit, 0.0) - logit * target + std::log1p(std::exp(-std::abs(logit)));
}

Var sigmoid_cross_entropy(Tape& tape, Var logits, std::span<const LossTerm> terms) {
    if (terms.empty()) throw InputError("cross-entropy over zero terms");
    const Tensor& z = tape.value(logits);
    const std::size_t rows = z.rows(), cols = z.cols();
    double total = 0.0;
    for (const LossTerm& term : terms) {
        if (term.row >= rows || term.col >= cols) {
            throw InputError("loss term (" + std::to_string(term.row) + ", " +
                             std::to_string(term.col) + ") outside logits " + z.shape_string());
        }
        total += sigmoid_cross_entropy(z(term.row, term.col), term.target);
    }
    const double scale = 1.0 / static_cast<double>(terms.size());
    std::vector<LossTerm> kept(terms.begin(), terms.end());
    const Var y = next_var(tape);
    return tape.push(Tensor::from({1, 1}, {total * scale}), tape.needs_grad(logits),
                     [logits, y, kept = std::move(kept), scale, cols](Tape& t) {
                         const double g = t.grad(y)[0] * scale;
                         const Tensor& z = t.value(logits);
                         auto& gz = t.grad(logits);
                         for (const LossTerm& term : kept) {
                             const std::size_t i = term.row * cols + term.col;
                             gz[i] += g * (sigmoid(z.values[i]) - term.target);
                         }
                     });
}

Var layer_vote_mix(Tape& tape, std::span<const Var> layers, Parameter& weight, Parameter& bias,
                   Tensor* probs) {
    std::size_t width = 0;
    check_vote_layers(tape, layers, width);
    const std::size_t count = layers.size();
    const std::size_t rows = common_rows(tape, layers);
    const Tensor& w = weight.tensor;
    if (w.shape.size() != 2 || w.shape[0] != count * width || w.shape[1] != count) {
        throw ConfigError("layer vote '" + weight.name + "': weight " + w.shape_string() +
                          " expected [" + std::to_string(count * width) + "x" +
                          std::to_string(count) + "]");
    }
    if (bias.tensor.size() != count) throw ConfigError("layer vote bias length mismatch");

    std::vector<const double*> xs(count);
    auto row_ptr = [&](const Tensor& t, std::size_t n) {
        return t.values.data() + (t.rows() == 1 ? 0 : n) * width;
    };
    Tensor p = Tensor::matrix(rows, count);
    Tensor out = Tensor::matrix(rows, width);
    std::vector<double> scores(count);
    for (std::size_t n = 0; n < rows; ++n) {
        for (std::size_t m = 0; m < count; ++m) xs[m] = row_ptr(tape.value(layers[m]), n);
        for (std::size_t k = 0; k < count; ++k) scores[k] = bias.tensor.values[k];
        for (std::size_t m = 0; m < count; ++m)
            for (std::size_t l = 0; l < width; ++l) {
                const double xv = xs[m][l];
                const double* wr = w.values.data() + (m * width + l) * count;
                for (std::size_t k = 0; k < count; ++k) scores[k] += xv * wr[k];
            }
        const double mx = *std::max_element(scores.begin(), scores.end());
        double total = 0.0;
        for (std::size_t k = 0; k < count; ++k) total += (p(n, k) = std::exp(scores[k] - mx));
        for (std::size_t k = 0; k < count; ++k) p(n, k) /= total;
        for (std::size_t k = 0; k < count; ++k)
            for (std::size_t l = 0; l < width; ++l) out(n, l) += p(n, k) * xs[k][l];
    }
    if (probs != nullptr) *probs = p;

    const Var wv = tape.parameter(weight);
    const Var bv = tape.parameter(bias);
    std::vector<Var> inputs(layers.begin(), layers.end());
    const Var y = next_var(tape);
    const bool ng = any_needs_grad(tape, layers) || tape.needs_grad(wv) || tape.needs_grad(bv);
    return tape.push(std::move(out), ng,
                     [inputs, wv, bv, y, rows, width, count, p = std::move(p)](Tape& t) {
                         const auto& gy = t.grad(y);
                         const Tensor& w = t.value(wv);
                         std::vector<double> gp(count), gs(count);
                         for (std::size_t n = 0; n < rows; ++n) {
                             const double* g = gy.data() + n * width;
                             for (std::size_t m = 0; m < count; ++m) {
                                 const Tensor& xm = t.value(inputs[m]);
                                 const double* xr =
                                     xm.values.data() + (xm.rows() == 1 ? 0 : n) * width;
                                 double acc = 0.0;
                                 for (std::size_t l = 0; l < width; ++l) acc += g[l] * xr[l];
                                 gp[m] = acc;
                             }
                             double mean = 0.0;
                             for (std::size_t k = 0; k < count; ++k) mean += p(n, k) * gp[k];
                             for (std::size_t k = 0; k < count; ++k) gs[k] = p(n, k) * (gp[k] - mean);
                             if (t.needs_grad(bv)) {
                                 auto& gb = t.grad(bv);
                                 for (std::size_t k = 0; k < count; ++k) gb[k] += gs[k];
                             }
                             for (std::size_t m = 0; m < count; ++m) {
                                 const Tensor& xm = t.value(inputs[m]);
                                 const std::size_t xrow = xm.rows() == 1 ? 0 : n;
                                 const double* xr = xm.values.data() + xrow * width;
                                 if (t.needs_grad(wv)) {
                                     auto& gw = t.grad(wv);
                                     for (std::size_t l = 0; l < width; ++l)
                                         for (std::size_t k = 0; k < count; ++k)
                                             gw[(m * width + l) * count + k] += gs[k] * xr[l];
                                 }
                                 if (t.needs_grad(inputs[m])) {
                                     auto& gx = t.grad(inputs[m]);
                                     for (std::size_t l = 0; l < width; ++l) {
                                         double acc = p(n, m) * g[l];
                                         const double* wr = w.values.data() + (m * width + l) * count;
                                         for (std::size_t k = 0; k < count; ++k) acc += gs[k] * wr[k];
                                         gx[xrow * width + l] += acc;
                                     }
                                 }
                             }
                         }
                     });
}

Var unit_vote_mix(Tape& tape, std::span<const Var> layers, Parameter& weight, Parameter& bias,
                  Tensor* probs) {
    std::size_t width = 0;
    check_vote_layers(tape, layers, width);
    const std::size_t count = layers.size();
    const std::size_t rows = common_rows(tape, layers);
    const Tensor& w = weight.tensor;
    if (w.size() != width * count * count || bias.tensor.size() != width * count) {
        throw ConfigError("unit vote '" + weight.name + "': weight " + w.shape_string() +
                          " expected " + std::to_string(width) + "x" + std::to_string(count) +
                          "x" + std::to_string(count));
    }
    auto at = [&](const Tensor& t, std::size_t n, std::size_t l) {
        return t.values[(t.rows() == 1 ? 0 : n) * width + l];
    };
    Tensor p = Tensor::matrix(rows, width * count);
    Tensor out = Tensor::matrix(rows, width);
    std::vector<double> xs(count), scores(count);
    for (std::size_t n = 0; n < rows; ++n) {
        for (std::size_t j = 0; j < width; ++j) {
            for (std::size_t m = 0; m < count; ++m) xs[m] = at(tape.value(layers[m]), n, j);
            for (std::size_t k = 0; k < count; ++k) {
                double s = bias.tensor.values[j * count + k];
                const double* wr = w.values.data() + (j * count + k) * count;
                for (std::size_t m = 0; m < count; ++m) s += wr[m] * xs[m];
                scores[k] = s;
            }
            const double mx = *std::max_element(scores.begin(), scores.end());
            double total = 0.0;
            for (std::size_t k = 0; k < count; ++k) total += (scores[k] = std::exp(scores[k] - mx));
            double y = 0.0;
            for (std::size_t k = 0; k < count; ++k) {
                const double pk = scores[k] / total;
                p(n, j * count + k) = pk;
                y += pk * xs[k];
            }
            out(n, j) = y;
        }
    }
    if (probs != nullptr) *probs = p;

    const Var wv = tape.parameter(weight);
    const Var bv = tape.parameter(bias);
    std::vector<Var> inputs(layers.begin(), layers.end());
    const Var y = next_var(tape);
    const bool ng = any_needs_grad(tape, layers) || tape.needs_grad(wv) || tape.needs_grad(bv);
    return tape.push(std::move(out), ng,
                     [inputs, wv, bv, y, rows, width, count, p = std::move(p)](Tape& t) {
                         const auto& gy = t.grad(y);
                         const Tensor& yv = t.value(y);
                         const Tensor& w = t.value(wv);
                         const bool need_w = t.needs_grad(wv), need_b = t.needs_grad(bv);
                         std::vector<double> xs(count), gs(count);
                         for (std::size_t n = 0; n < rows; ++n) {
                             for (std::size_t j = 0; j < width; ++j) {
                                 const double g = gy[n * width + j];
                                 if (g == 0.0) continue;
                                 const double yval = yv(n, j);
                                 for (std::size_t m = 0; m < count; ++m) {
                                     const Tensor& xm = t.value(inputs[m]);
                                     xs[m] = xm.values[(xm.rows() == 1 ? 0 : n) * width + j];
                                 }
                                 for (std::size_t k = 0; k < count; ++k)
                                     gs[k] = p(n, j * count + k) * g * (xs[k] - yval);
                                 if (need_b) {
                                     auto& gb = t.grad(bv);
                                     for (std::size_t k = 0; k < count; ++k) gb[j * count + k] += gs[k];
                                 }
                                 if (need_w) {
                                     auto& gw = t.grad(wv);
                                     for (std::size_t k = 0; k < count; ++k)
                                         for (std::size_t m = 0; m < count; ++m)
                                             gw[(j * count + k) * count + m] += gs[k] * xs[m];
                                 }
                                 for (std::size_t m = 0; m < count; ++m) {
                                     if (!t.needs_grad(inputs[m])) continue;
                                     const Tensor& xm = t.value(inputs[m]);
                                     double acc = g * p(n, j * count + m);
                                     for (std::size_t k = 0; k < count; ++k)
                                         acc += gs[k] * w.values[(j * count + k) * count + m];
                                     t.grad(inputs[m])[(xm.rows() == 1 ? 0 : n) * width + j] += acc;
                                 }
                             }
                         }
                     });
}

}  // namespace remap::diff
