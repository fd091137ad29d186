#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "aflora/rng.hpp"

namespace aflora {

using Shape = std::vector<int64_t>;

int64_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

// One node of the reverse-mode graph. Ops that produce a differentiable
// result link the result node to its parents and attach a backward closure
// that reads this node's grad and accumulates into the parents' grads.
struct Node {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;  // allocated lazily, same length as value
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward;

    void ensure_grad() {
        if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
    }
};

}  // namespace detail

// Dense 64-bit float tensor with an optional gradient buffer. Copying a
// Tensor copies the handle: both copies refer to the same storage, which is
// what lets a parameter appear in many step graphs while keeping one grad.
class Tensor {
  public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double fill, bool requires_grad = false);
    static Tensor from_data(Shape shape, std::vector<double> data, bool requires_grad = false);
    static Tensor scalar(double v, bool requires_grad = false);
    static Tensor identity(int64_t n);

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const;
    int64_t size() const;
    int64_t rows() const;  // 2-d only
    int64_t cols() const;  // 2-d only

    double item() const;  // scalar tensors only
    double at(int64_t i) const;
    double at(int64_t r, int64_t c) const;

    std::span<const double> values() const;
    std::span<double> values_mut();  // direct writes; never use on graph interiors

    bool requires_grad() const;
    void set_requires_grad(bool rg);

    bool has_grad() const;
    std::span<const double> grad() const;  // throws ContractError when absent
    void zero_grad();

    // Reverse pass from a scalar. Interior grads are reset on every call and
    // leaf grads accumulate, so repeated calls without zero_grad() sum.
    void backward() const;

    detail::Node* node() const { return node_.get(); }
    const std::shared_ptr<detail::Node>& handle() const { return node_; }

  private:
    explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
    detail::Node& n() const;

    std::shared_ptr<detail::Node> node_;

    friend Tensor make_op_result(Shape shape, std::vector<double> value,
                                 std::vector<Tensor> parents,
                                 std::function<void(detail::Node&)> backward);
};

// --- ops -------------------------------------------------------------------

// C[m x n] = A[m x k] * B[k x n]. Accumulation runs in ascending k for every
// output element (determinism contract).
Tensor matmul(const Tensor& a, const Tensor& b);

// Elementwise binary ops. Shapes must match exactly, except that a 1-element
// operand broadcasts against anything.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);

// out[i, j] = v[i] * m[i, j]; realizes diag(v) * M.
Tensor scale_by_vector_rows(const Tensor& v, const Tensor& m);

// out[i, j] = m[i, j] + bias[i].
Tensor add_bias_rows(const Tensor& m, const Tensor& bias);

Tensor relu(const Tensor& x);
Tensor gelu(const Tensor& x);  // exact erf form
Tensor scale(const Tensor& x, double c);
Tensor sum(const Tensor& x);
Tensor transpose(const Tensor& x);

// Mean negative log-likelihood over rows of logits[batch x classes].
Tensor softmax_cross_entropy(const Tensor& logits, const std::vector<int>& labels);

// out column t = table row tokens[t]; table is [vocab x d], result [d x T].
Tensor embedding_lookup(const Tensor& table, const std::vector<int>& tokens);

// x is [d x batch*seq] batch-major; pos is [d x max_seq]. Adds pos[:, s] to
// every column with sequence offset s.
Tensor add_position_tiled(const Tensor& x, const Tensor& pos, int64_t batch, int64_t seq);

// Gather columns by index; backward scatter-adds.
Tensor select_columns(const Tensor& x, const std::vector<int64_t>& idx);

// Per-column layer norm over the feature axis of x[d x n].
Tensor layer_norm_cols(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                       double eps = 1e-5);

// Scaled dot-product attention over [d_model x batch*seq] Q/K/V, batch-major
// columns, bidirectional (no mask).
Tensor multi_head_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                            int64_t n_heads, int64_t batch, int64_t seq);

// i.i.d. uniform on [-sqrt(6/fan_in), +sqrt(6/fan_in)].
Tensor init_kaiming_uniform(int64_t rows, int64_t cols, int64_t fan_in, SeededRng& rng,
                            bool requires_grad = false);

// i.i.d. uniform on [-1/sqrt(fan_in), +1/sqrt(fan_in)]. Used for the frozen
// backbone weights, which stand in for a pre-trained checkpoint: the smaller
// scale keeps attention softmaxes unsaturated at initialization.
Tensor init_backbone_uniform(int64_t rows, int64_t cols, int64_t fan_in, SeededRng& rng);

}  // namespace aflora
