#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "deconf/rng.hpp"
#include "deconf/tensor.hpp"

namespace deconf::diffcore {

struct Node;
using NodePtr = std::shared_ptr<Node>;

// One node of the computation DAG. `grad` is allocated lazily by the
// backward pass; accumulation into it is always additive.
struct Node {
  Tensor value;
  Tensor grad;
  std::vector<NodePtr> parents;
  std::function<void(Node&)> backward_fn;  // null for leaves
  bool requires_grad = true;
  std::string name;  // nonempty for named parameters
};

// Cheap handle to a graph node with value semantics on the handle itself.
class Value {
 public:
  Value() = default;

  static Value constant(Tensor t) {
    Value v;
    v.node_ = std::make_shared<Node>();
    v.node_->value = std::move(t);
    v.node_->requires_grad = false;
    return v;
  }

  static Value leaf(Tensor t) {
    Value v;
    v.node_ = std::make_shared<Node>();
    v.node_->value = std::move(t);
    return v;
  }

  static Value parameter(Tensor t, std::string name) {
    Value v = leaf(std::move(t));
    v.node_->name = std::move(name);
    return v;
  }

  bool defined() const { return node_ != nullptr; }
  Node* node() const { return node_.get(); }
  const NodePtr& ptr() const { return node_; }

  const Tensor& val() const { return node_->value; }
  Tensor& val() { return node_->value; }
  Tensor& grad() const { return node_->grad; }
  const std::string& name() const { return node_->name; }
  const std::vector<std::size_t>& shape() const { return node_->value.shape(); }

  void zero_grad() const {
    if (node_->grad.empty()) node_->grad = Tensor::zeros(node_->value.shape());
    else node_->grad.fill(0.0);
  }

  // Reverse pass from a scalar root. Visits each node exactly once in
  // reverse topological order; gradients accumulate additively, so a node
  // reachable along two paths receives both contributions.
  void backward() const;

  NodePtr node_;
};

// ---- operator set ----------------------------------------------------

Value add(const Value& a, const Value& b);   // same shape, or {r,c} + {c} row-wise
Value sub(const Value& a, const Value& b);
Value mul(const Value& a, const Value& b);   // elementwise
Value scale(const Value& a, double c);
Value matmul(const Value& a, const Value& b);            // {m,k} x {k,n}
Value matvec(const Value& m, const Value& v);            // {m,k} x {k} -> {m}
Value vecmat(const Value& v, const Value& m);            // {n} x {n,d} -> {d}
Value tanh(const Value& a);
Value sigmoid(const Value& a);
Value softmax(const Value& a);                           // rank-1
Value masked_softmax(const Value& a, const std::vector<unsigned char>& keep);
Value concat(const std::vector<Value>& parts);           // rank-1 pieces
Value stack_rows(const std::vector<Value>& rows);        // n x {d} -> {n,d}
Value element(const Value& a, std::size_t index);        // -> {1}
Value sum(const Value& a);                               // -> {1}
Value mean(const Value& a);                              // -> {1}
Value add_scalars(const std::vector<Value>& terms);      // sum of {1} values -> {1}
Value dropout(const Value& a, double rate, RngStream& rng);  // inverted scaling; call only in train mode
Value embedding_lookup(const Value& table, const std::vector<int>& ids);  // -> {n,d}
Value cross_entropy(const Value& logits, std::size_t target);             // -> {1}
Value bce_per_label(const Value& logits, const std::vector<double>& targets);  // sum over labels -> {1}

// Gradient reversal: forward is the identity, backward multiplies the
// incoming gradient by -lambda.
Value grl(const Value& x, double lambda);

// GRU cell step, built from the primitive ops.
struct GruParams {
  Value wz, uz, bz;  // update gate
  Value wr, ur, br;  // reset gate
  Value wh, uh, bh;  // candidate state
};
Value gru_cell(const Value& x, const Value& h_prev, const GruParams& p);

// Attention pooling with a learned context vector: rows {n,d} are scored by
// context . tanh(W row + b), softmaxed (masked), and combined into {d}.
struct AttentionParams {
  Value proj_w;   // {d, a}
  Value proj_b;   // {a}
  Value context;  // {a}
};
Value attention_pool(const Value& rows, const AttentionParams& p,
                     const std::vector<unsigned char>& keep);

// ---- optimizer --------------------------------------------------------

// Adam with bias correction. Deterministic; aborts on non-finite gradients.
class Adam {
 public:
  Adam(std::vector<Value> params, double lr,
       double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

  void zero_grad();
  void step();

  std::size_t step_count() const { return t_; }
  const std::vector<Value>& params() const { return params_; }

 private:
  std::vector<Value> params_;
  std::vector<Tensor> m_, v_;
  double lr_, beta1_, beta2_, eps_;
  std::size_t t_ = 0;
};

// ---- gradient verification ---------------------------------------------

// Central finite differences against the reverse-mode gradient of the scalar
// builder `f`. Returns max over coordinates of |a-n| / max(|a|,|n|,1e-8).
// `f` must be deterministic (no dropout, fixed seeds).
double check_gradients(const std::function<Value()>& f,
                       const std::vector<Value>& params, double h = 1e-5);

}  // namespace deconf::diffcore
