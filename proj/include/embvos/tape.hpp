#pragma once

#include <functional>
#include <initializer_list>
#include <string>
#include <utility>
#include <vector>

#include "embvos/tensor.hpp"

namespace embvos {

/// A trainable tensor with a gradient buffer of the same shape.
template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;

  Parameter() = default;
  Parameter(std::string n, Tensor<T> v) : name(std::move(n)), value(std::move(v)), grad(value.shape()) {}

  void zero_grad() {
    if (grad.shape() != value.shape()) grad = Tensor<T>(value.shape());
    grad.fill(T(0));
  }
};

template <typename T>
class Tape;

/// Handle to a node recorded on a Tape.
template <typename T>
struct Var {
  Tape<T>* tape = nullptr;
  Index id = -1;

  const Tensor<T>& value() const { return tape->value(id); }
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const { return tape->requires_grad(id); }
};

/// Linear record of tensor operations for reverse-mode differentiation.
///
/// Nodes are appended in evaluation order; backward() walks them in exact
/// reverse order. Gradient buffers are allocated zero-filled on first
/// touch, and a node whose operands are all constants records no backward
/// rule at all, so disabled branches carry exactly zero gradient.
template <typename T>
class Tape {
 public:
  using Backward = std::function<void(Tape&, Index self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<T> constant(Tensor<T> value) { return push(std::move(value), false, {}, nullptr); }

  /// A leaf that collects gradient but is not bound to a Parameter.
  Var<T> input(Tensor<T> value) { return push(std::move(value), true, {}, nullptr); }

  /// A leaf whose gradient is added into p.grad by backward().
  Var<T> parameter(Parameter<T>& p) { return push(p.value, true, {}, &p); }

  /// Appends the result of an operation. The backward rule is kept only if
  /// some operand requires a gradient.
  Var<T> record(Tensor<T> value, std::initializer_list<Var<T>> inputs, Backward backward) {
    bool needs = false;
    for (const auto& v : inputs) {
      if (v.tape != this) throw ContractError("operand recorded on a different tape");
      needs = needs || requires_grad(v.id);
    }
    return push(std::move(value), needs, needs ? std::move(backward) : Backward{}, nullptr);
  }

  Var<T> record(Tensor<T> value, const std::vector<Var<T>>& inputs, Backward backward) {
    bool needs = false;
    for (const auto& v : inputs) {
      if (v.tape != this) throw ContractError("operand recorded on a different tape");
      needs = needs || requires_grad(v.id);
    }
    return push(std::move(value), needs, needs ? std::move(backward) : Backward{}, nullptr);
  }

  const Tensor<T>& value(Index id) const { return node(id).value; }
  bool requires_grad(Index id) const { return node(id).requires_grad; }
  Index size() const { return static_cast<Index>(nodes_.size()); }

  /// Mutable gradient of a node, zero-initialized on first access.
  Tensor<T>& grad(Index id) {
    Node& n = node(id);
    if (!n.has_grad) {
      n.grad = Tensor<T>(n.value.shape());
      n.has_grad = true;
    }
    return n.grad;
  }

  /// Gradient of a node after backward(); zeros if nothing reached it.
  Tensor<T> grad_of(Var<T> v) const {
    const Node& n = node(v.id);
    return n.has_grad ? n.grad : Tensor<T>(n.value.shape());
  }

  bool has_grad(Index id) const { return node(id).has_grad; }

  /// Seeds d(root)/d(root) = 1 and propagates to every recorded node.
  void backward(Var<T> root) {
    if (root.tape != this) throw ContractError("backward root recorded on a different tape");
    if (node(root.id).value.size() != 1)
      throw ShapeError("backward root must be a scalar, got shape " +
                       shape_string(node(root.id).value.shape()));
    grad(root.id).fill(T(1));
    for (Index id = root.id; id >= 0; --id) {
      Node& n = nodes_[static_cast<std::size_t>(id)];
      if (n.backward && n.has_grad) n.backward(*this, id);
    }
    for (Node& n : nodes_)
      if (n.param && n.has_grad) {
        n.param->grad.vec() += n.grad.vec();
      }
  }

 private:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    bool has_grad = false;
    bool requires_grad = false;
    Backward backward;
    Parameter<T>* param = nullptr;
  };

  Node& node(Index id) {
    if (id < 0 || id >= size()) throw ContractError("invalid tape node " + std::to_string(id));
    return nodes_[static_cast<std::size_t>(id)];
  }
  const Node& node(Index id) const {
    if (id < 0 || id >= size()) throw ContractError("invalid tape node " + std::to_string(id));
    return nodes_[static_cast<std::size_t>(id)];
  }

  Var<T> push(Tensor<T> value, bool needs_grad, Backward backward, Parameter<T>* param) {
    if (param && param->grad.shape() != param->value.shape()) param->zero_grad();
    nodes_.push_back(Node{std::move(value), Tensor<T>(), false, needs_grad, std::move(backward), param});
    return Var<T>{this, size() - 1};
  }

  std::vector<Node> nodes_;
};

}  // namespace embvos
