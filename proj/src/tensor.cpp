#include "cpfx/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <unordered_set>

namespace cpfx {

namespace {

thread_local uint64_t g_macs = 0;
thread_local bool g_grad_enabled = true;

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// a[M,K] * b[K,N] += into c
void gemm_nn(const double* a, const double* b, double* c,
             size_t M, size_t K, size_t N) {
    for (size_t i = 0; i < M; ++i) {
        const double* ai = a + i * K;
        double* ci = c + i * N;
        for (size_t k = 0; k < K; ++k) {
            const double aik = ai[k];
            const double* bk = b + k * N;
            for (size_t j = 0; j < N; ++j) ci[j] += aik * bk[j];
        }
    }
    g_macs += static_cast<uint64_t>(M) * K * N;
}

// a[M,K] * b[N,K]^T += into c[M,N]
void gemm_nt(const double* a, const double* b, double* c,
             size_t M, size_t K, size_t N) {
    for (size_t i = 0; i < M; ++i) {
        const double* ai = a + i * K;
        double* ci = c + i * N;
        for (size_t j = 0; j < N; ++j) {
            const double* bj = b + j * K;
            double acc = 0.0;
            for (size_t k = 0; k < K; ++k) acc += ai[k] * bj[k];
            ci[j] += acc;
        }
    }
    g_macs += static_cast<uint64_t>(M) * K * N;
}

// a[K,M]^T * b[K,N] += into c[M,N]
void gemm_tn(const double* a, const double* b, double* c,
             size_t M, size_t K, size_t N) {
    for (size_t k = 0; k < K; ++k) {
        const double* ak = a + k * M;
        const double* bk = b + k * N;
        for (size_t i = 0; i < M; ++i) {
            const double aki = ak[i];
            double* ci = c + i * N;
            for (size_t j = 0; j < N; ++j) ci[j] += aki * bk[j];
        }
    }
    g_macs += static_cast<uint64_t>(M) * K * N;
}

std::shared_ptr<TensorNode> make_node(size_t rows, size_t cols, bool requires_grad) {
    auto n = std::make_shared<TensorNode>();
    n->rows = rows;
    n->cols = cols;
    n->val.assign(rows * cols, 0.0);
    n->requires_grad = requires_grad;
    return n;
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.rows() != b.rows() || a.cols() != b.cols())
        throw std::invalid_argument(std::string(op) + ": shape mismatch");
}

}  // namespace

uint64_t mac_count() { return g_macs; }
void mac_reset() { g_macs = 0; }

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }
bool grad_enabled() { return g_grad_enabled; }

Tensor wrap(std::shared_ptr<TensorNode> n) {
    Tensor t;
    t.node_ = std::move(n);
    return t;
}

Tensor::Tensor(size_t rows, size_t cols, bool requires_grad)
    : node_(make_node(rows, cols, requires_grad)) {}

Tensor Tensor::scalar(double v) {
    Tensor t(1, 1, false);
    t.node_->val[0] = v;
    return t;
}

Tensor Tensor::from(std::vector<double> data, size_t rows, size_t cols,
                    bool requires_grad) {
    if (data.size() != rows * cols)
        throw std::invalid_argument("Tensor::from: data length != rows*cols");
    Tensor t;
    t.node_ = std::make_shared<TensorNode>();
    t.node_->rows = rows;
    t.node_->cols = cols;
    t.node_->val = std::move(data);
    t.node_->requires_grad = requires_grad;
    return t;
}

double Tensor::item() const {
    if (numel() != 1) throw std::invalid_argument("item: tensor is not scalar");
    return node_->val[0];
}

Tensor Tensor::detach() const {
    return Tensor::from(node_->val, rows(), cols(), false);
}

Parameter::Parameter(std::string name_, Tensor value_, bool frozen_)
    : name(std::move(name_)), value(std::move(value_)), frozen(frozen_) {
    value.node()->requires_grad = !frozen;
}

namespace {

Tensor binary_result(const Tensor& a, const Tensor& b, size_t rows, size_t cols) {
    const bool rg = g_grad_enabled && (a.requires_grad() || b.requires_grad());
    auto n = make_node(rows, cols, rg);
    if (rg) n->parents = {a.node(), b.node()};
    return wrap(n);
}

Tensor unary_result(const Tensor& a, size_t rows, size_t cols) {
    const bool rg = g_grad_enabled && a.requires_grad();
    auto n = make_node(rows, cols, rg);
    if (rg) n->parents = {a.node()};
    return wrap(n);
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.cols() != b.rows()) throw std::invalid_argument("matmul: inner dim mismatch");
    const size_t M = a.rows(), K = a.cols(), N = b.cols();
    Tensor out = binary_result(a, b, M, N);
    gemm_nn(a.data().data(), b.data().data(), out.data().data(), M, K, N);
    if (out.requires_grad()) {
        auto an = a.node(), bn = b.node();
        out.node()->backprop = [an, bn, M, K, N](TensorNode& o) {
            if (an->requires_grad) {
                an->ensure_grad();
                gemm_nt(o.grad.data(), bn->val.data(), an->grad.data(), M, N, K);
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                gemm_tn(an->val.data(), o.grad.data(), bn->grad.data(), K, M, N);
            }
        };
    }
    return out;
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
    if (a.cols() != b.cols()) throw std::invalid_argument("matmul_nt: inner dim mismatch");
    const size_t M = a.rows(), K = a.cols(), N = b.rows();
    Tensor out = binary_result(a, b, M, N);
    gemm_nt(a.data().data(), b.data().data(), out.data().data(), M, K, N);
    if (out.requires_grad()) {
        auto an = a.node(), bn = b.node();
        out.node()->backprop = [an, bn, M, K, N](TensorNode& o) {
            if (an->requires_grad) {
                an->ensure_grad();
                gemm_nn(o.grad.data(), bn->val.data(), an->grad.data(), M, N, K);
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                gemm_tn(o.grad.data(), an->val.data(), bn->grad.data(), N, M, K);
            }
        };
    }
    return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "add");
    Tensor out = binary_result(a, b, a.rows(), a.cols());
    const size_t n = out.numel();
    for (size_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] + b.data()[i];
    if (out.requires_grad()) {
        auto an = a.node(), bn = b.node();
        out.node()->backprop = [an, bn, n](TensorNode& o) {
            if (an->requires_grad) {
                an->ensure_grad();
                for (size_t i = 0; i < n; ++i) an->grad[i] += o.grad[i];
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                for (size_t i = 0; i < n; ++i) bn->grad[i] += o.grad[i];
            }
        };
    }
    return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "sub");
    Tensor out = binary_result(a, b, a.rows(), a.cols());
    const size_t n = out.numel();
    for (size_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] - b.data()[i];
    if (out.requires_grad()) {
        auto an = a.node(), bn = b.node();
        out.node()->backprop = [an, bn, n](TensorNode& o) {
            if (an->requires_grad) {
                an->ensure_grad();
                for (size_t i = 0; i < n; ++i) an->grad[i] += o.grad[i];
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                for (size_t i = 0; i < n; ++i) bn->grad[i] -= o.grad[i];
            }
        };
    }
    return out;
}

Tensor hadamard(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "hadamard");
    Tensor out = binary_result(a, b, a.rows(), a.cols());
    const size_t n = out.numel();
    for (size_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] * b.data()[i];
    if (out.requires_grad()) {
        auto an = a.node(), bn = b.node();
        out.node()->backprop = [an, bn, n](TensorNode& o) {
            if (an->requires_grad) {
                an->ensure_grad();
                for (size_t i = 0; i < n; ++i) an->grad[i] += o.grad[i] * bn->val[i];
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                for (size_t i = 0; i < n; ++i) bn->grad[i] += o.grad[i] * an->val[i];
            }
        };
    }
    return out;
}

Tensor scale(const Tensor& a, double c) {
    Tensor out = unary_result(a, a.rows(), a.cols());
    const size_t n = out.numel();
    for (size_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] * c;
    if (out.requires_grad()) {
        auto an = a.node();
        out.node()->backprop = [an, c, n](TensorNode& o) {
            an->ensure_grad();
            for (size_t i = 0; i < n; ++i) an->grad[i] += o.grad[i] * c;
        };
    }
    return out;
}

Tensor add_rowvec(const Tensor& a, const Tensor& bias) {
    if (bias.rows() != 1 || bias.cols() != a.cols())
        throw std::invalid_argument("add_rowvec: bias must be [1, cols]");
    Tensor out = binary_result(a, bias, a.rows(), a.cols());
    const size_t R = a.rows(), C = a.cols();
    for (size_t r = 0; r < R; ++r)
        for (size_t c = 0; c < C; ++c)
            out.data()[r * C + c] = a.data()[r * C + c] + bias.data()[c];
    if (out.requires_grad()) {
        auto an = a.node(), bn = bias.node();
        out.node()->backprop = [an, bn, R, C](TensorNode& o) {
            if (an->requires_grad) {
                an->ensure_grad();
                for (size_t i = 0; i < R * C; ++i) an->grad[i] += o.grad[i];
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                for (size_t r = 0; r < R; ++r)
                    for (size_t c = 0; c < C; ++c) bn->grad[c] += o.grad[r * C + c];
            }
        };
    }
    return out;
}

Tensor tanh_op(const Tensor& a) {
    Tensor out = unary_result(a, a.rows(), a.cols());
    const size_t n = out.numel();
    for (size_t i = 0; i < n; ++i) out.data()[i] = std::tanh(a.data()[i]);
    if (out.requires_grad()) {
        auto an = a.node();
        out.node()->backprop = [an, n](TensorNode& o) {
            an->ensure_grad();
            for (size_t i = 0; i < n; ++i)
                an->grad[i] += o.grad[i] * (1.0 - o.val[i] * o.val[i]);
        };
    }
    return out;
}

Tensor gelu(const Tensor& a) {
    Tensor out = unary_result(a, a.rows(), a.cols());
    const size_t n = out.numel();
    constexpr double inv_sqrt2 = 0.7071067811865475244;
    for (size_t i = 0; i < n; ++i) {
        const double x = a.data()[i];
        out.data()[i] = 0.5 * x * (1.0 + std::erf(x * inv_sqrt2));
    }
    if (out.requires_grad()) {
        auto an = a.node();
        out.node()->backprop = [an, n](TensorNode& o) {
            an->ensure_grad();
            constexpr double inv_sqrt2pi = 0.3989422804014326779;
            for (size_t i = 0; i < n; ++i) {
                const double x = an->val[i];
                const double cdf = 0.5 * (1.0 + std::erf(x * inv_sqrt2));
                const double pdf = inv_sqrt2pi * std::exp(-0.5 * x * x);
                an->grad[i] += o.grad[i] * (cdf + x * pdf);
            }
        };
    }
    return out;
}

Tensor relu(const Tensor& a) {
    Tensor out = unary_result(a, a.rows(), a.cols());
    const size_t n = out.numel();
    for (size_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] > 0.0 ? a.data()[i] : 0.0;
    if (out.requires_grad()) {
        auto an = a.node();
        out.node()->backprop = [an, n](TensorNode& o) {
            an->ensure_grad();
            for (size_t i = 0; i < n; ++i)
                if (an->val[i] > 0.0) an->grad[i] += o.grad[i];
        };
    }
    return out;
}

Tensor concat_rows(const Tensor& a, const Tensor& b) {
    if (a.cols() != b.cols())
        throw std::invalid_argument("concat_rows: column count mismatch");
    const size_t C = a.cols(), Ra = a.rows(), Rb = b.rows();
    Tensor out = binary_result(a, b, Ra + Rb, C);
    std::copy(a.data().begin(), a.data().end(), out.data().begin());
    std::copy(b.data().begin(), b.data().end(), out.data().begin() + Ra * C);
    if (out.requires_grad()) {
        auto an = a.node(), bn = b.node();
        out.node()->backprop = [an, bn, Ra, Rb, C](TensorNode& o) {
            if (an->requires_grad) {
                an->ensure_grad();
                for (size_t i = 0; i < Ra * C; ++i) an->grad[i] += o.grad[i];
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                for (size_t i = 0; i < Rb * C; ++i) bn->grad[i] += o.grad[Ra * C + i];
            }
        };
    }
    return out;
}

Tensor concat_cols(const Tensor& a, const Tensor& b) {
    if (a.rows() != b.rows())
        throw std::invalid_argument("concat_cols: row count mismatch");
    const size_t R = a.rows(), Ca = a.cols(), Cb = b.cols();
    Tensor out = binary_result(a, b, R, Ca + Cb);
    for (size_t r = 0; r < R; ++r) {
        std::copy(a.data().begin() + r * Ca, a.data().begin() + (r + 1) * Ca,
                  out.data().begin() + r * (Ca + Cb));
        std::copy(b.data().begin() + r * Cb, b.data().begin() + (r + 1) * Cb,
                  out.data().begin() + r * (Ca + Cb) + Ca);
    }
    if (out.requires_grad()) {
        auto an = a.node(), bn = b.node();
        out.node()->backprop = [an, bn, R, Ca, Cb](TensorNode& o) {
            if (an->requires_grad) {
                an->ensure_grad();
                for (size_t r = 0; r < R; ++r)
                    for (size_t c = 0; c < Ca; ++c)
                        an->grad[r * Ca + c] += o.grad[r * (Ca + Cb) + c];
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                for (size_t r = 0; r < R; ++r)
                    for (size_t c = 0; c < Cb; ++c)
                        bn->grad[r * Cb + c] += o.grad[r * (Ca + Cb) + Ca + c];
            }
        };
    }
    return out;
}

Tensor reshape(const Tensor& a, size_t rows, size_t cols) {
    if (rows * cols != a.numel())
        throw std::invalid_argument("reshape: element count mismatch");
    Tensor out = unary_result(a, rows, cols);
    out.data() = a.data();
    if (out.requires_grad()) {
        auto an = a.node();
        const size_t n = a.numel();
        out.node()->backprop = [an, n](TensorNode& o) {
            an->ensure_grad();
            for (size_t i = 0; i < n; ++i) an->grad[i] += o.grad[i];
        };
    }
    return out;
}

Tensor slice_rows(const Tensor& a, size_t r0, size_t r1) {
    if (r0 > r1 || r1 > a.rows()) throw std::invalid_argument("slice_rows: bad range");
    const size_t C = a.cols(), R = r1 - r0;
    Tensor out = unary_result(a, R, C);
    std::copy(a.data().begin() + r0 * C, a.data().begin() + r1 * C, out.data().begin());
    if (out.requires_grad()) {
        auto an = a.node();
        out.node()->backprop = [an, r0, R, C](TensorNode& o) {
            an->ensure_grad();
            for (size_t i = 0; i < R * C; ++i) an->grad[r0 * C + i] += o.grad[i];
        };
    }
    return out;
}

Tensor slice_cols(const Tensor& a, size_t c0, size_t c1) {
    if (c0 > c1 || c1 > a.cols()) throw std::invalid_argument("slice_cols: bad range");
    const size_t R = a.rows(), C = a.cols(), W = c1 - c0;
    Tensor out = unary_result(a, R, W);
    for (size_t r = 0; r < R; ++r)
        std::copy(a.data().begin() + r * C + c0, a.data().begin() + r * C + c1,
                  out.data().begin() + r * W);
    if (out.requires_grad()) {
        auto an = a.node();
        out.node()->backprop = [an, c0, R, C, W](TensorNode& o) {
            an->ensure_grad();
            for (size_t r = 0; r < R; ++r)
                for (size_t w = 0; w < W; ++w)
                    an->grad[r * C + c0 + w] += o.grad[r * W + w];
        };
    }
    return out;
}

Tensor sum_all(const Tensor& a) {
    Tensor out = unary_result(a, 1, 1);
    double s = 0.0;
    for (double v : a.data()) s += v;
    out.data()[0] = s;
    if (out.requires_grad()) {
        auto an = a.node();
        const size_t n = a.numel();
        out.node()->backprop = [an, n](TensorNode& o) {
            an->ensure_grad();
            for (size_t i = 0; i < n; ++i) an->grad[i] += o.grad[0];
        };
    }
    return out;
}

Tensor softmax_rows(const Tensor& scores, const std::vector<double>* add_mask) {
    if (add_mask && add_mask->size() != scores.numel())
        throw std::invalid_argument("softmax_rows: mask size mismatch");
    const size_t R = scores.rows(), C = scores.cols();
    Tensor out = unary_result(scores, R, C);
    for (size_t r = 0; r < R; ++r) {
        double mx = kNegInf;
        for (size_t c = 0; c < C; ++c) {
            double v = scores.data()[r * C + c];
            if (add_mask) v += (*add_mask)[r * C + c];
            if (v > mx) mx = v;
        }
        if (mx == kNegInf)
            throw std::invalid_argument("softmax_rows: fully masked row");
        double denom = 0.0;
        for (size_t c = 0; c < C; ++c) {
            double v = scores.data()[r * C + c];
            if (add_mask) v += (*add_mask)[r * C + c];
            const double e = v == kNegInf ? 0.0 : std::exp(v - mx);
            out.data()[r * C + c] = e;
            denom += e;
        }
        for (size_t c = 0; c < C; ++c) out.data()[r * C + c] /= denom;
    }
    if (out.requires_grad()) {
        auto sn = scores.node();
        out.node()->backprop = [sn, R, C](TensorNode& o) {
            sn->ensure_grad();
            for (size_t r = 0; r < R; ++r) {
                double dot = 0.0;
                for (size_t c = 0; c < C; ++c)
                    dot += o.grad[r * C + c] * o.val[r * C + c];
                for (size_t c = 0; c < C; ++c)
                    sn->grad[r * C + c] +=
                        o.val[r * C + c] * (o.grad[r * C + c] - dot);
            }
        };
    }
    return out;
}

Tensor layer_norm(const Tensor& a, const Tensor& gamma, const Tensor& beta, double eps) {
    if (gamma.rows() != 1 || gamma.cols() != a.cols() ||
        beta.rows() != 1 || beta.cols() != a.cols())
        throw std::invalid_argument("layer_norm: gamma/beta must be [1, cols]");
    const size_t R = a.rows(), C = a.cols();
    const bool rg = g_grad_enabled &&
        (a.requires_grad() || gamma.requires_grad() || beta.requires_grad());
    auto n = make_node(R, C, rg);
    if (rg) n->parents = {a.node(), gamma.node(), beta.node()};
    Tensor out = wrap(n);

    std::vector<double> mean(R), inv_std(R);
    for (size_t r = 0; r < R; ++r) {
        double m = 0.0;
        for (size_t c = 0; c < C; ++c) m += a.data()[r * C + c];
        m /= static_cast<double>(C);
        double var = 0.0;
        for (size_t c = 0; c < C; ++c) {
            const double d = a.data()[r * C + c] - m;
            var += d * d;
        }
        var /= static_cast<double>(C);
        mean[r] = m;
        inv_std[r] = 1.0 / std::sqrt(var + eps);
        for (size_t c = 0; c < C; ++c) {
            const double xhat = (a.data()[r * C + c] - m) * inv_std[r];
            out.data()[r * C + c] = xhat * gamma.data()[c] + beta.data()[c];
        }
    }
    if (out.requires_grad()) {
        auto an = a.node(), gn = gamma.node(), bn = beta.node();
        out.node()->backprop = [an, gn, bn, mean, inv_std, R, C](TensorNode& o) {
            for (size_t r = 0; r < R; ++r) {
                double sum_dy_g = 0.0, sum_dy_g_xhat = 0.0;
                for (size_t c = 0; c < C; ++c) {
                    const double xhat = (an->val[r * C + c] - mean[r]) * inv_std[r];
                    const double dy = o.grad[r * C + c];
                    const double dyg = dy * gn->val[c];
                    sum_dy_g += dyg;
                    sum_dy_g_xhat += dyg * xhat;
                    if (gn->requires_grad) {
                        gn->ensure_grad();
                        gn->grad[c] += dy * xhat;
                    }
                    if (bn->requires_grad) {
                        bn->ensure_grad();
                        bn->grad[c] += dy;
                    }
                }
                if (an->requires_grad) {
                    an->ensure_grad();
                    const double invC = 1.0 / static_cast<double>(C);
                    for (size_t c = 0; c < C; ++c) {
                        const double xhat = (an->val[r * C + c] - mean[r]) * inv_std[r];
                        const double dyg = o.grad[r * C + c] * gn->val[c];
                        an->grad[r * C + c] +=
                            inv_std[r] * (dyg - invC * sum_dy_g - invC * xhat * sum_dy_g_xhat);
                    }
                }
            }
        };
    }
    return out;
}

Tensor embed_rows(const Tensor& table, const std::vector<int>& ids,
                  const Tensor& overlay, const std::map<int, int>& overlay_rows) {
    const size_t C = table.cols(), T = ids.size();
    const bool has_overlay = overlay.defined();
    if (has_overlay && overlay.cols() != C)
        throw std::invalid_argument("embed_rows: overlay width mismatch");
    const bool rg = g_grad_enabled &&
        (table.requires_grad() || (has_overlay && overlay.requires_grad()));
    auto n = make_node(T, C, rg);
    if (rg) {
        n->parents.push_back(table.node());
        if (has_overlay) n->parents.push_back(overlay.node());
    }
    Tensor out = wrap(n);

    for (size_t t = 0; t < T; ++t) {
        const int id = ids[t];
        auto it = overlay_rows.find(id);
        if (it != overlay_rows.end()) {
            std::copy(overlay.data().begin() + it->second * C,
                      overlay.data().begin() + (it->second + 1) * C,
                      out.data().begin() + t * C);
        } else {
            if (id < 0 || static_cast<size_t>(id) >= table.rows())
                throw std::out_of_range("embed_rows: token id out of range");
            std::copy(table.data().begin() + id * C,
                      table.data().begin() + (id + 1) * C,
                      out.data().begin() + t * C);
        }
    }
    if (out.requires_grad()) {
        auto tn = table.node();
        auto on = has_overlay ? overlay.node() : nullptr;
        auto ids_c = ids;
        auto map_c = overlay_rows;
        out.node()->backprop = [tn, on, ids_c, map_c, C](TensorNode& o) {
            for (size_t t = 0; t < ids_c.size(); ++t) {
                const int id = ids_c[t];
                auto it = map_c.find(id);
                if (it != map_c.end()) {
                    if (on && on->requires_grad) {
                        on->ensure_grad();
                        for (size_t c = 0; c < C; ++c)
                            on->grad[it->second * C + c] += o.grad[t * C + c];
                    }
                } else if (tn->requires_grad) {
                    tn->ensure_grad();
                    for (size_t c = 0; c < C; ++c)
                        tn->grad[id * C + c] += o.grad[t * C + c];
                }
            }
        };
    }
    return out;
}

Tensor embed_rows(const Tensor& table, const std::vector<int>& ids) {
    return embed_rows(table, ids, Tensor(), {});
}

Tensor nll_sum(const Tensor& logits, const std::vector<int>& targets) {
    if (targets.size() != logits.rows())
        throw std::invalid_argument("nll_sum: one target per logits row required");
    const size_t R = logits.rows(), C = logits.cols();
    Tensor out = unary_result(logits, 1, 1);
    std::vector<double> log_z(R);
    double total = 0.0;
    for (size_t r = 0; r < R; ++r) {
        const int t = targets[r];
        if (t < 0 || static_cast<size_t>(t) >= C)
            throw std::out_of_range("nll_sum: target id out of range");
        double mx = kNegInf;
        for (size_t c = 0; c < C; ++c) mx = std::max(mx, logits.data()[r * C + c]);
        double denom = 0.0;
        for (size_t c = 0; c < C; ++c) denom += std::exp(logits.data()[r * C + c] - mx);
        log_z[r] = mx + std::log(denom);
        total += log_z[r] - logits.data()[r * C + t];
    }
    out.data()[0] = total;
    if (out.requires_grad()) {
        auto ln = logits.node();
        auto tg = targets;
        out.node()->backprop = [ln, tg, log_z, R, C](TensorNode& o) {
            ln->ensure_grad();
            const double g = o.grad[0];
            for (size_t r = 0; r < R; ++r) {
                for (size_t c = 0; c < C; ++c) {
                    const double p = std::exp(ln->val[r * C + c] - log_z[r]);
                    ln->grad[r * C + c] += g * p;
                }
                ln->grad[r * C + tg[r]] -= g;
            }
        };
    }
    return out;
}

void backward(const Tensor& loss) {
    if (loss.numel() != 1)
        throw std::invalid_argument("backward: loss must be scalar");
    if (!loss.requires_grad())
        throw std::invalid_argument("backward: loss does not depend on any trainable tensor");

    // iterative post-order DFS over grad-requiring subgraph
    std::vector<TensorNode*> order;
    std::unordered_set<TensorNode*> visited;
    std::vector<std::pair<TensorNode*, size_t>> stack;
    stack.emplace_back(loss.node().get(), 0);
    visited.insert(loss.node().get());
    while (!stack.empty()) {
        auto& [node, idx] = stack.back();
        if (idx < node->parents.size()) {
            TensorNode* p = node->parents[idx++].get();
            if (p->requires_grad && !visited.count(p)) {
                visited.insert(p);
                stack.emplace_back(p, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    loss.node()->ensure_grad();
    loss.node()->grad[0] = 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        TensorNode* n = *it;
        if (n->backprop && n->grad.size() == n->val.size()) n->backprop(*n);
    }
}

std::map<std::string, Tensor> grad(const Tensor& loss,
                                   const std::vector<Parameter*>& params) {
    backward(loss);

    std::unordered_set<TensorNode*> reachable;
    std::vector<TensorNode*> stack{loss.node().get()};
    while (!stack.empty()) {
        TensorNode* n = stack.back();
        stack.pop_back();
        if (!reachable.insert(n).second) continue;
        for (auto& p : n->parents) stack.push_back(p.get());
    }

    std::map<std::string, Tensor> out;
    for (Parameter* p : params) {
        if (p->frozen) continue;
        TensorNode* n = p->value.node().get();
        if (!reachable.count(n))
            throw std::invalid_argument("grad: parameter '" + p->name +
                                        "' is not part of the recorded graph");
        n->ensure_grad();
        out.emplace(p->name, Tensor::from(n->grad, n->rows, n->cols, false));
    }
    return out;
}

}  // namespace cpfx
