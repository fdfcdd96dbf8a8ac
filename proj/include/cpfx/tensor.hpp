#pragma once

// Dense fp64 matrices with reverse-mode differentiation, sized for small
// encoder-decoder models trained on a single CPU core. Tensors are 2-D
// (scalars are 1x1); layout is row-major. Every op records a backward
// closure; backward(loss) replays them in reverse topological order.

#include <array>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

namespace cpfx {

struct TensorNode {
    size_t rows = 0;
    size_t cols = 0;
    std::vector<double> val;
    std::vector<double> grad;          // allocated lazily, never for frozen leaves
    bool requires_grad = false;
    std::vector<std::shared_ptr<TensorNode>> parents;
    std::function<void(TensorNode&)> backprop;  // empty for leaves

    size_t numel() const { return rows * cols; }
    void ensure_grad() {
        if (grad.size() != val.size()) grad.assign(val.size(), 0.0);
    }
};

class Tensor {
public:
    Tensor() = default;
    Tensor(size_t rows, size_t cols, bool requires_grad = false);
    static Tensor scalar(double v);
    static Tensor from(std::vector<double> data, size_t rows, size_t cols,
                       bool requires_grad = false);

    bool defined() const { return node_ != nullptr; }
    size_t rows() const { return node_->rows; }
    size_t cols() const { return node_->cols; }
    size_t numel() const { return node_->numel(); }
    bool requires_grad() const { return node_->requires_grad; }

    double& at(size_t r, size_t c) { return node_->val[r * cols() + c]; }
    double at(size_t r, size_t c) const { return node_->val[r * cols() + c]; }
    double item() const;

    std::vector<double>& data() { return node_->val; }
    const std::vector<double>& data() const { return node_->val; }
    bool has_grad() const { return node_->grad.size() == node_->val.size(); }
    const std::vector<double>& grad() const { return node_->grad; }
    std::vector<double>& grad_mut() { return node_->grad; }
    void zero_grad() { if (has_grad()) node_->grad.assign(numel(), 0.0); }

    // value copy detached from any recorded graph
    Tensor detach() const;

    std::shared_ptr<TensorNode> node() const { return node_; }

private:
    std::shared_ptr<TensorNode> node_;
    friend Tensor wrap(std::shared_ptr<TensorNode> n);
};

// A named leaf. Frozen parameters never allocate grad and are excluded
// from optimizer updates.
struct Parameter {
    std::string name;
    Tensor value;
    bool frozen = false;

    Parameter() = default;
    Parameter(std::string name_, Tensor value_, bool frozen_ = false);
};

// --- graph ops -------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);      // [M,K]x[K,N] -> [M,N]
Tensor matmul_nt(const Tensor& a, const Tensor& b);   // [M,K]x[N,K]^T -> [M,N]
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor hadamard(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);
Tensor add_rowvec(const Tensor& a, const Tensor& bias);  // bias is [1,N]
Tensor tanh_op(const Tensor& a);
Tensor gelu(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor concat_rows(const Tensor& a, const Tensor& b);
Tensor concat_cols(const Tensor& a, const Tensor& b);
Tensor slice_rows(const Tensor& a, size_t r0, size_t r1);
Tensor slice_cols(const Tensor& a, size_t c0, size_t c1);
Tensor reshape(const Tensor& a, size_t rows, size_t cols);
Tensor sum_all(const Tensor& a);  // -> scalar
// softmax over each row; add_mask, when non-null, is a same-shaped additive
// matrix of 0 / -inf applied before the softmax (not differentiated)
Tensor softmax_rows(const Tensor& scores, const std::vector<double>* add_mask = nullptr);
Tensor layer_norm(const Tensor& a, const Tensor& gamma, const Tensor& beta,
                  double eps = 1e-6);
// gathers rows of table by id; ids listed in overlay_rows are taken from the
// overlay instead (overlay may be undefined when the map is empty)
Tensor embed_rows(const Tensor& table, const std::vector<int>& ids,
                  const Tensor& overlay, const std::map<int, int>& overlay_rows);
Tensor embed_rows(const Tensor& table, const std::vector<int>& ids);
// sum over rows of -log softmax(logits)[target]; -> scalar
Tensor nll_sum(const Tensor& logits, const std::vector<int>& targets);

void backward(const Tensor& loss);

// Reverse-mode gradients of a scalar loss for every non-frozen parameter.
// Frozen parameters are absent from the map. Throws if loss is not scalar or
// a non-frozen parameter took no part in the recorded computation.
std::map<std::string, Tensor> grad(const Tensor& loss,
                                   const std::vector<Parameter*>& params);

// Disables graph recording in scope; ops produce constant results. Used for
// decoding and evaluation, where gradients are never needed.
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool prev_;
};

bool grad_enabled();

// --- multiply-accumulate accounting -----------------------------------------

// Counts matmul multiply-accumulates only (scaling/softmax/bias adds are not
// MACs). Thread-local so concurrent inference threads do not race.
uint64_t mac_count();
void mac_reset();

}  // namespace cpfx
