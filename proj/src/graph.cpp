#include "xplt/graph.hpp"

#include <algorithm>
#include <atomic>
#include <unordered_map>

namespace xplt {

namespace {

std::atomic<uint64_t> g_next_id{1};
thread_local bool g_grad_enabled = true;

Var add_grads(const Var& a, const Var& b);

}  // namespace

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }

EnableGradGuard::EnableGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = true; }
EnableGradGuard::~EnableGradGuard() { g_grad_enabled = prev_; }

Var Var::leaf(Tensor value, bool requires_grad) {
  auto n = std::make_shared<Node>();
  if (!value.all_finite()) throw Error("leaf tensor holds non-finite values");
  n->value = std::move(value);
  n->requires_grad = requires_grad;
  n->is_leaf = true;
  n->id = g_next_id.fetch_add(1, std::memory_order_relaxed);
  return Var(std::move(n));
}

Var make_op(const char* op, Tensor value, std::vector<Var> inputs, BackwardFn backward) {
  if (!value.all_finite())
    throw Error(std::string("op '") + op + "' produced non-finite values");
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->op = op;
  n->id = g_next_id.fetch_add(1, std::memory_order_relaxed);
  bool needs = false;
  if (g_grad_enabled)
    for (const Var& in : inputs)
      if (in.requires_grad()) needs = true;
  if (needs) {
    n->requires_grad = true;
    n->inputs = std::move(inputs);
    n->backward = std::move(backward);
  }
  return Var(std::move(n));
}

namespace {

// Reverse pass shared by grad_of and backward. Creation ids are a topological
// order (inputs exist before the ops consuming them), so processing reachable
// nodes by descending id propagates every gradient exactly once.
std::unordered_map<Node*, Var> run_reverse(const Var& loss, bool create_graph) {
  if (!loss.defined()) throw Error("backward: undefined loss");
  if (loss.size() != 1)
    throw ShapeError("backward: loss must be scalar, got " + shape_str(loss.shape()));

  std::vector<Node*> order;
  std::unordered_map<Node*, NodePtr> keep_alive;
  {
    std::vector<NodePtr> stack{loss.node_ptr()};
    while (!stack.empty()) {
      NodePtr n = stack.back();
      stack.pop_back();
      if (!n->requires_grad || keep_alive.count(n.get())) continue;
      keep_alive.emplace(n.get(), n);
      order.push_back(n.get());
      for (const Var& in : n->inputs) stack.push_back(in.node_ptr());
    }
  }
  std::sort(order.begin(), order.end(),
            [](const Node* a, const Node* b) { return a->id > b->id; });

  std::unordered_map<Node*, Var> grads;
  grads[loss.node()] = Var::constant(Tensor::full(loss.shape(), 1.0f));

  std::unique_ptr<NoGradGuard> no_grad;
  std::unique_ptr<EnableGradGuard> with_grad;
  if (create_graph)
    with_grad = std::make_unique<EnableGradGuard>();
  else
    no_grad = std::make_unique<NoGradGuard>();

  for (Node* n : order) {
    auto it = grads.find(n);
    if (it == grads.end()) continue;  // requires grad but unreachable from loss
    const Var g = it->second;
    if (!n->backward) continue;  // leaf
    std::vector<bool> needs(n->inputs.size());
    for (size_t i = 0; i < n->inputs.size(); ++i) needs[i] = n->inputs[i].requires_grad();
    const Var out(keep_alive.at(n));
    std::vector<Var> in_grads = n->backward(g, n->inputs, out, needs);
    if (in_grads.size() != n->inputs.size())
      throw Error(std::string("op '") + n->op + "' backward returned " +
                  std::to_string(in_grads.size()) + " grads for " +
                  std::to_string(n->inputs.size()) + " inputs");
    for (size_t i = 0; i < in_grads.size(); ++i) {
      if (!needs[i]) continue;
      if (!in_grads[i].defined())
        throw Error(std::string("op '") + n->op + "' backward missing grad for input " +
                    std::to_string(i));
      if (!same_shape(in_grads[i].shape(), n->inputs[i].shape()))
        throw ShapeError(std::string("op '") + n->op + "' backward grad shape " +
                         shape_str(in_grads[i].shape()) + " != input shape " +
                         shape_str(n->inputs[i].shape()));
      Node* target = n->inputs[i].node();
      auto g_it = grads.find(target);
      if (g_it == grads.end())
        grads.emplace(target, in_grads[i]);
      else
        g_it->second = add_grads(g_it->second, in_grads[i]);
    }
  }
  return grads;
}

Var add_grads(const Var& a, const Var& b) {
  Tensor out(a.shape(), a.value().array() + b.value().array());
  return make_op("grad_acc", std::move(out), {a, b},
                 [](const Var& g, const std::vector<Var>&, const Var&,
                    const std::vector<bool>&) { return std::vector<Var>{g, g}; });
}

}  // namespace

std::vector<Var> grad_of(const Var& loss, const std::vector<Var>& targets,
                         bool create_graph) {
  auto grads = run_reverse(loss, create_graph);
  std::vector<Var> out;
  out.reserve(targets.size());
  for (const Var& t : targets) {
    if (!t.requires_grad())
      throw Error("grad_of: target does not require grad");
    auto it = grads.find(t.node());
    if (it != grads.end())
      out.push_back(it->second);
    else
      out.push_back(Var::constant(Tensor::zeros(t.shape())));
  }
  return out;
}

void backward(const Var& loss, bool create_graph) {
  auto grads = run_reverse(loss, create_graph);
  // Deterministic accumulation: visit by ascending node id.
  std::vector<std::pair<Node*, Var>> leaves;
  for (auto& [node, g] : grads)
    if (node->is_leaf && node->requires_grad) leaves.emplace_back(node, g);
  std::sort(leaves.begin(), leaves.end(),
            [](const auto& a, const auto& b) { return a.first->id < b.first->id; });
  for (auto& [node, g] : leaves) {
    if (!node->grad) {
      node->grad = g.node_ptr();
    } else if (create_graph) {
      EnableGradGuard on;
      node->grad = add_grads(Var(node->grad), g).node_ptr();
    } else {
      NoGradGuard off;
      node->grad = add_grads(Var(node->grad), g).node_ptr();
    }
  }
}

}  // namespace xplt
