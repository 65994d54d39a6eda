#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "ito/tensor.hpp"

namespace ito {

struct Node;
using BackwardFn = std::function<void(Node& self)>;

// One vertex of the reverse-mode graph. Parents are owned so that a result
// keeps its whole history alive until it is dropped.
struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    bool grad_ready = false;
    const char* op = "leaf";
    std::vector<std::shared_ptr<Node>> parents;
    BackwardFn backward_fn;

    bool is_leaf() const { return parents.empty(); }
    // Allocates a zero gradient on first use.
    Tensor& ensure_grad();
};

// Value handle to a graph node. Copies share the node.
class Var {
   public:
    Var() = default;
    explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

    // Trainable leaf (parameter or gradcheck input).
    static Var leaf(Tensor value, bool requires_grad = true);
    static Var constant(Tensor value) { return leaf(std::move(value), false); }
    static Var scalar(double v) { return constant(Tensor::scalar(v)); }

    bool defined() const { return static_cast<bool>(node_); }
    const Tensor& value() const { return node_->value; }
    // Direct access for optimizers and checkpoint loading; does not touch the graph.
    Tensor& mutable_value() { return node_->value; }
    const Tensor& grad() const;
    const Dims& dims() const { return node_->value.dims(); }
    std::size_t dim(int axis) const { return node_->value.dim(axis); }
    std::size_t rank() const { return node_->value.rank(); }
    double item() const { return node_->value.item(); }
    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool on) { node_->requires_grad = on; }
    void zero_grad();
    Node* node() const { return node_.get(); }
    const std::shared_ptr<Node>& shared() const { return node_; }

   private:
    std::shared_ptr<Node> node_;
};

// Accumulates d(root)/d(leaf) into every reachable leaf with requires_grad.
// Interior gradients are recomputed from zero on each call and freed afterwards; leaf gradients accumulate.
void backward(const Var& root);

// Builds a result node. When no parent requires grad the result is a constant
// and `fn` is dropped. Throws NumericError naming `op` on non-finite values.
Var make_result(Tensor value, const char* op, std::vector<Var> parents, BackwardFn fn);

// Gradient buffer of parent k, or nullptr when that parent does not need one.
Tensor* parent_grad(Node& self, std::size_t k);

// Elementwise, trailing-dimension broadcasting.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var div(const Var& a, const Var& b);
Var operator+(const Var& a, const Var& b);
Var operator-(const Var& a, const Var& b);
Var operator*(const Var& a, const Var& b);
Var operator/(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var add_scalar(const Var& a, double s);
Var neg(const Var& a);

Var exp(const Var& a);
Var log(const Var& a);
Var gelu(const Var& a);  // tanh approximation
Var tanh(const Var& a);

// a [..., m, k] x b [k, n] -> [..., m, n]; or batched a [n, m, k] x b [n, k, n'].
Var matmul(const Var& a, const Var& b);
// x [..., k] times w [k, n] plus b [n].
Var linear(const Var& x, const Var& w, const Var& b);
// Swaps the last two axes.
Var transpose(const Var& a);
Var reshape(const Var& a, Dims dims);

Var sum(const Var& a, int axis, bool keepdim = false);
Var mean(const Var& a, int axis, bool keepdim = false);
Var sum_all(const Var& a);
Var mean_all(const Var& a);
// Max over an axis; ties resolve to the lowest index, which also receives the gradient.
Var max(const Var& a, int axis, bool keepdim = false);

// Row-wise over the last axis.
Var softmax(const Var& a);
Var logsumexp(const Var& a);
// logsumexp over entries where mask != 0. mask has the same dims as a.
// A row with an empty mask is a UsageError.
Var masked_logsumexp(const Var& a, const Tensor& mask);
Var l2_normalize(const Var& a, double eps = 1e-12);

Var concat(std::span<const Var> parts, int axis);
Var concat(std::initializer_list<Var> parts, int axis);
Var slice(const Var& a, int axis, std::size_t start, std::size_t length);
// Rows along axis 0.
Var index_select(const Var& a, std::span<const std::size_t> index);
// x [N, L, d], pos [N] -> [N, d] with out[n] = x[n, pos[n]].
Var gather_tokens(const Var& x, std::span<const std::size_t> pos);

// Normalizes over the last axis then applies gamma [d] and beta [d].
Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps = 1e-5);
// Multi-head scaled dot-product attention: q [N, Lq, D], k and v [N, Lk, D]; heads divide D.
// With `causal` (requires Lq == Lk), position i attends to positions <= i only.
Var attention(const Var& q, const Var& k, const Var& v, std::size_t heads, bool causal);
// table [V, d], ids of length prod(leading) -> leading + [d].
Var embedding(const Var& table, std::span<const std::int32_t> ids, Dims leading);

}  // namespace ito
