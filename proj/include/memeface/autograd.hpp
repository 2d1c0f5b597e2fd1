#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "memeface/tensor.hpp"

namespace memeface {

struct Node;
using NodePtr = std::shared_ptr<Node>;

// Reverse-mode autodiff node. Children hold strong references to their inputs,
// so a graph lives exactly as long as the outputs that reference it.
struct Node {
  Tensor value;
  Tensor grad;  // empty until something accumulates into it
  bool requires_grad = false;
  std::vector<NodePtr> inputs;
  std::function<void(Node&)> backward;

  void accumulate(const Tensor& g);
};

class Var {
 public:
  Var() = default;
  explicit Var(Tensor value, bool requires_grad = false);
  explicit Var(NodePtr node) : node_(std::move(node)) {}

  bool defined() const { return node_ != nullptr; }
  const Tensor& value() const { return node_->value; }
  Tensor& mutable_value() { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  int dim(int axis) const { return node_->value.dim(axis); }
  std::size_t size() const { return node_->value.size(); }
  double item() const { return node_->value.item(); }

  bool requires_grad() const { return node_->requires_grad; }
  // Gradient accumulated by backward(); zeros of the value's shape if none arrived.
  Tensor grad() const;
  void zero_grad();

  const NodePtr& node() const { return node_; }

 private:
  NodePtr node_;
};

// Records an op result. When grad mode is off or no input needs a gradient the
// backward closure is dropped and the result is a constant.
Var make_op(Tensor value, std::vector<Var> inputs, std::function<void(Node&)> backward);

Var constant(Tensor value);
Var detach(const Var& v);

// Seeds d(root)/d(root) = 1 for a scalar root and propagates to every leaf.
void backward(const Var& root);

bool grad_enabled();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

}  // namespace memeface
