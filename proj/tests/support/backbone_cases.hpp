#pragma once

// Finite-difference cases for the encoder's own ops.

#include "remap/backbone/encoder.hpp"
#include "support/gradient_suite.hpp"

namespace remap::testing {

inline std::vector<OpCase> backbone_op_cases() {
    using namespace remap::diff;
    std::vector<OpCase> cases;
    for (int stride : {1, 2}) {
        backbone::ConvGeometry g{5, 6, 2, 3, stride, 3};
        cases.push_back({"conv2d_stride" + std::to_string(stride),
                         {{2, 5 * 6 * 2}, {3, 9 * 2}, {3}},
                         [=](Tape& t, std::vector<Parameter>& ps) {
                             return backbone::conv2d(t, t.parameter(ps[0]), ps[1], ps[2], g);
                         },
                         false});
    }
    cases.push_back({"softmax_cross_entropy", {{3, 4}}, [](Tape& t, std::vector<Parameter>& ps) {
                         return backbone::softmax_cross_entropy(t, t.parameter(ps[0]), {0, 3, 1});
                     }, false});
    return cases;
}

}  // namespace remap::testing
