#pragma once

#include <Eigen/Core>

#include <functional>
#include <memory>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "irene/error.hpp"

namespace irene::nn {

using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Index = Eigen::Index;

/// One vertex of the recorded computation.
struct Node {
  Mat value;
  Mat grad;  // empty until something flows into it
  bool requires_grad = false;
  bool is_leaf = true;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  void accumulate(const Mat& g) {
    if (grad.size() == 0)
      grad = g;
    else
      grad += g;
  }
  template <typename Expr>
  void accumulate_expr(const Expr& g) {
    if (grad.size() == 0)
      grad = g;
    else
      grad += g;
  }
  /// For products that cannot alias grad; skips the temporary.
  template <typename Expr>
  void accumulate_product(const Expr& g) {
    if (grad.size() == 0)
      grad.noalias() = g;
    else
      grad.noalias() += g;
  }
};

namespace detail {
inline bool& grad_mode() {
  thread_local bool enabled = true;
  return enabled;
}
}  // namespace detail

inline bool grad_enabled() { return detail::grad_mode(); }

/// Disables graph recording in its scope (evaluation, validation).
class NoGradGuard {
 public:
  NoGradGuard() : prev_(detail::grad_mode()) { detail::grad_mode() = false; }
  ~NoGradGuard() { detail::grad_mode() = prev_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

/// Shared handle to a node. Copies alias the same storage.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Mat value, bool requires_grad = false) : node_(std::make_shared<Node>()) {
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
  }
  explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  static Tensor constant(Mat value) { return Tensor(std::move(value), false); }
  static Tensor parameter(Mat value) { return Tensor(std::move(value), true); }
  static Tensor zeros(Index rows, Index cols) { return Tensor(Mat::Zero(rows, cols)); }
  static Tensor scalar(double v) { return Tensor(Mat::Constant(1, 1, v)); }
  static Tensor row(const std::vector<double>& v) {
    Mat m(1, static_cast<Index>(v.size()));
    for (std::size_t i = 0; i < v.size(); ++i) m(0, static_cast<Index>(i)) = v[i];
    return Tensor(std::move(m));
  }

  bool defined() const { return static_cast<bool>(node_); }
  const Mat& value() const { return node_->value; }
  Mat& mutable_value() { return node_->value; }
  const Mat& grad() const { return node_->grad; }
  Mat& mutable_grad() { return node_->grad; }
  bool has_grad() const { return node_->grad.size() != 0; }
  void zero_grad() { node_->grad.resize(0, 0); }
  bool requires_grad() const { return node_->requires_grad; }
  Index rows() const { return node_->value.rows(); }
  Index cols() const { return node_->value.cols(); }
  double item() const {
    if (node_->value.size() != 1) throw ShapeMismatch("item() needs a 1x1 tensor");
    return node_->value(0, 0);
  }
  Node* node() const { return node_.get(); }
  const std::shared_ptr<Node>& shared() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

inline std::string shape_str(const Mat& m) { return std::to_string(m.rows()) + "x" + std::to_string(m.cols()); }

inline void check_finite(const Mat& m, const char* op) {
  if (!m.allFinite()) throw NumericError(std::string("non-finite value produced by ") + op);
}

/// Builds the result node of an op: traps non-finite values and records the backward closure when
/// any input takes part in differentiation.
inline Tensor make_result(Mat value, const char* op, std::initializer_list<const Tensor*> inputs,
                          std::function<void(Node&)> backward_fn) {
  check_finite(value, op);
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->op = op;
  node->is_leaf = false;
  if (grad_enabled()) {
    bool any = false;
    for (const Tensor* t : inputs) any = any || t->requires_grad();
    if (any) {
      node->requires_grad = true;
      node->parents.reserve(inputs.size());
      for (const Tensor* t : inputs) node->parents.push_back(t->shared());
      node->backward_fn = std::move(backward_fn);
    }
  }
  return Tensor(std::move(node));
}

inline Tensor make_result(Mat value, const char* op, const std::vector<Tensor>& inputs,
                          std::function<void(Node&)> backward_fn) {
  check_finite(value, op);
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->op = op;
  node->is_leaf = false;
  if (grad_enabled()) {
    bool any = false;
    for (const Tensor& t : inputs) any = any || t.requires_grad();
    if (any) {
      node->requires_grad = true;
      node->parents.reserve(inputs.size());
      for (const Tensor& t : inputs) node->parents.push_back(t.shared());
      node->backward_fn = std::move(backward_fn);
    }
  }
  return Tensor(std::move(node));
}

inline bool wants_grad(const Node& self, std::size_t i) { return self.parents[i]->requires_grad; }

/// Reverse-mode sweep from a scalar loss. Gradients accumulate into leaves that require them;
/// intermediate gradients are released once consumed.
inline void backward(const Tensor& loss) {
  if (!loss.defined() || loss.value().size() != 1) throw ShapeMismatch("backward() needs a scalar loss");
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  bool reaches_leaf = false;
  if (loss.requires_grad()) {
    // iterative post-order DFS
    std::vector<std::pair<Node*, std::size_t>> stack{{loss.node(), 0}};
    seen.insert(loss.node());
    while (!stack.empty()) {
      auto& [n, next] = stack.back();
      if (next < n->parents.size()) {
        Node* p = n->parents[next++].get();
        if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
      } else {
        if (n->is_leaf) reaches_leaf = true;
        order.push_back(n);
        stack.pop_back();
      }
    }
  }
  if (!reaches_leaf) throw GraphDisconnected("loss has no trainable parameter among its ancestors");
  for (Node* n : order)
    if (!n->is_leaf) n->grad.resize(0, 0);
  loss.node()->accumulate(Mat::Ones(1, 1));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->is_leaf) continue;
    if (n->grad.size() != 0 && n->backward_fn) n->backward_fn(*n);
    n->grad.resize(0, 0);
  }
}

}  // namespace irene::nn
