#pragma once

#include "xplt/tensor.hpp"

#include <functional>
#include <memory>
#include <vector>

namespace xplt {

class Var;

/// Gradients a backward rule hands back, aligned with the node's inputs.
/// Entries for inputs that do not require grad may be left default-constructed.
using BackwardFn =
    std::function<std::vector<Var>(const Var& out_grad, const std::vector<Var>& inputs,
                                   const Var& output, const std::vector<bool>& needs)>;

struct Node {
  Tensor value;
  bool requires_grad = false;
  bool is_leaf = false;
  std::vector<Var> inputs;
  BackwardFn backward;
  std::shared_ptr<Node> grad;  // accumulated by xplt::backward()
  uint64_t id = 0;
  const char* op = "leaf";
};

using NodePtr = std::shared_ptr<Node>;

/// Handle to a node in the computation graph. Copies share the node.
class Var {
public:
  Var() = default;
  explicit Var(NodePtr n) : n_(std::move(n)) {}

  /// Leaf holding a value; gradients accumulate here when requires_grad.
  static Var leaf(Tensor value, bool requires_grad);
  /// Leaf that never receives gradients.
  static Var constant(Tensor value) { return leaf(std::move(value), false); }
  static Var scalar(float v) { return constant(Tensor::scalar(v)); }

  bool defined() const { return n_ != nullptr; }
  const Tensor& value() const { return n_->value; }
  Tensor& mutable_value() { return n_->value; }
  const Shape& shape() const { return n_->value.shape(); }
  int64_t size() const { return n_->value.size(); }
  bool requires_grad() const { return n_ && n_->requires_grad; }

  /// Gradient accumulated by backward(); undefined before the first call.
  Var grad() const { return Var(n_->grad); }
  void zero_grad() { n_->grad.reset(); }

  /// Same value, cut off from the graph.
  Var detach() const { return constant(n_->value); }

  Node* node() const { return n_.get(); }
  NodePtr node_ptr() const { return n_; }

private:
  NodePtr n_;
};

/// Graph recording is on by default; inside a NoGradGuard ops produce
/// constants, which is how plain (create_graph=false) backward runs its rules.
bool grad_enabled();

class NoGradGuard {
public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
  bool prev_;
};

class EnableGradGuard {
public:
  EnableGradGuard();
  ~EnableGradGuard();
  EnableGradGuard(const EnableGradGuard&) = delete;
  EnableGradGuard& operator=(const EnableGradGuard&) = delete;

private:
  bool prev_;
};

/// Builds an op node. Verifies the result is finite (overflow is an error,
/// never silently propagated). Records the node only when grad mode is on and
/// some input requires grad; otherwise the result is a constant.
Var make_op(const char* op, Tensor value, std::vector<Var> inputs, BackwardFn backward);

/// Reverse-mode gradients of a scalar `loss` w.r.t. `targets`, without
/// touching any accumulated .grad(). With create_graph=true the returned
/// gradients carry their own graph and can be differentiated again.
std::vector<Var> grad_of(const Var& loss, const std::vector<Var>& targets,
                         bool create_graph = false);

/// Accumulates gradients of a scalar `loss` into every reachable
/// requires-grad leaf.
void backward(const Var& loss, bool create_graph = false);

}  // namespace xplt
