#pragma once

// Per-attention-class two-layer feed-forward expanders mapping compact
// [rho x d] prefix rows to full [rho x 2dL] key/value rows. One expander per
// class, shared by the general prefix and every control prefix of that class.

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "cpfx/config.hpp"
#include "cpfx/tensor.hpp"

namespace cpfx {

struct ClassExpander {
    AttentionClass cls = AttentionClass::E;
    Parameter W1;  // [d, k]
    Parameter b1;  // [1, k]
    Parameter W2;  // [k, 2dL]
    Parameter b2;  // [1, 2dL]

    static std::shared_ptr<ClassExpander> init(AttentionClass cls, int d, int k,
                                               int L, uint64_t seed,
                                               const std::string& name_prefix = "reparam");

    // row-wise: W2 * tanh(W1 * row + b1) + b2
    Tensor expand(const Tensor& compact) const;

    std::vector<Parameter*> params();
    uint64_t param_elems() const;
    std::shared_ptr<ClassExpander> clone(const std::string& name_prefix, uint64_t seed) const;
};

}  // namespace cpfx
