#pragma once

// shared helpers for the unit tests: finite-difference oracle and small
// random-tensor generators

#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "cpfx/tensor.hpp"

namespace cpfx::testutil {

inline Tensor random_tensor(size_t r, size_t c, std::mt19937_64& rng,
                            bool requires_grad = true, double scale = 1.0) {
    Tensor t(r, c, requires_grad);
    std::normal_distribution<double> d(0.0, scale);
    for (auto& v : t.data()) v = d(rng);
    return t;
}

// max over entries of |analytic - central_fd| / max(|analytic|, |fd|, 1e-8)
// for every listed leaf; `build` must construct a fresh scalar loss from the
// current leaf values on each call. Differences below abs_guard are treated
// as zero: central differences of fp64 losses bottom out around
// eps * |loss| / (2h), so tiny-gradient entries otherwise report pure
// cancellation noise.
inline double max_fd_rel_error(const std::function<Tensor()>& build,
                               const std::vector<Tensor>& leaves,
                               double h = 1e-5, double abs_guard = 1e-9) {
    for (const Tensor& leaf : leaves) leaf.node()->grad.clear();
    Tensor loss = build();
    backward(loss);
    double worst = 0.0;
    for (const Tensor& leaf : leaves) {
        Tensor l = leaf;  // shares the node
        for (size_t i = 0; i < l.numel(); ++i) {
            const double saved = l.data()[i];
            l.data()[i] = saved + h;
            const double up = build().item();
            l.data()[i] = saved - h;
            const double down = build().item();
            l.data()[i] = saved;
            const double fd = (up - down) / (2.0 * h);
            const double an = l.has_grad() ? l.grad()[i] : 0.0;
            if (std::fabs(an - fd) <= abs_guard) continue;
            const double denom = std::max({std::fabs(an), std::fabs(fd), 1e-8});
            worst = std::max(worst, std::fabs(an - fd) / denom);
        }
    }
    return worst;
}

}  // namespace cpfx::testutil
