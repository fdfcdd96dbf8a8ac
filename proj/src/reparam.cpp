#include "cpfx/reparam.hpp"

#include <cmath>

#include "cpfx/rng.hpp"

namespace cpfx {

namespace {

Tensor normal_init(size_t rows, size_t cols, double std, std::mt19937_64& rng) {
    Tensor t(rows, cols);
    for (auto& v : t.data()) v = rand_normal(rng, 0.0, std);
    return t;
}

}  // namespace

std::shared_ptr<ClassExpander> ClassExpander::init(AttentionClass cls, int d, int k,
                                                   int L, uint64_t seed,
                                                   const std::string& name_prefix) {
    auto e = std::make_shared<ClassExpander>();
    e->cls = cls;
    const std::string base = name_prefix + "." + to_string(cls) + ".";
    const int out = 2 * d * L;
    auto rng = named_rng(seed, base);
    e->W1 = Parameter(base + "W1", normal_init(d, k, 1.0 / std::sqrt(double(d)), rng));
    e->b1 = Parameter(base + "b1", Tensor(1, k));
    e->W2 = Parameter(base + "W2", normal_init(k, out, 1.0 / std::sqrt(double(k)), rng));
    e->b2 = Parameter(base + "b2", Tensor(1, out));
    return e;
}

Tensor ClassExpander::expand(const Tensor& compact) const {
    if (compact.cols() != W1.value.rows())
        throw std::invalid_argument("expand: compact column count must equal d");
    Tensor h = tanh_op(add_rowvec(matmul(compact, W1.value), b1.value));
    return add_rowvec(matmul(h, W2.value), b2.value);
}

std::vector<Parameter*> ClassExpander::params() {
    return {&W1, &b1, &W2, &b2};
}

uint64_t ClassExpander::param_elems() const {
    return W1.value.numel() + b1.value.numel() + W2.value.numel() + b2.value.numel();
}

std::shared_ptr<ClassExpander> ClassExpander::clone(const std::string& name_prefix,
                                                    uint64_t seed) const {
    auto e = std::make_shared<ClassExpander>();
    e->cls = cls;
    const std::string base = name_prefix + "." + to_string(cls) + ".";
    auto rng = named_rng(seed, base);
    e->W1 = Parameter(base + "W1", normal_init(W1.value.rows(), W1.value.cols(),
                                               1.0 / std::sqrt(double(W1.value.rows())), rng));
    e->b1 = Parameter(base + "b1", Tensor(1, b1.value.cols()));
    e->W2 = Parameter(base + "W2", normal_init(W2.value.rows(), W2.value.cols(),
                                               1.0 / std::sqrt(double(W2.value.rows())), rng));
    e->b2 = Parameter(base + "b2", Tensor(1, b2.value.cols()));
    return e;
}

}  // namespace cpfx
