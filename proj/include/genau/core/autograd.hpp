#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "genau/core/error.hpp"
#include "genau/core/tensor.hpp"

namespace genau {

// Persistent trainable tensor owned by a model. Gradients accumulate into
// `grad` across backward passes until `zero_grad()`.
template <class T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;

  Parameter() = default;
  Parameter(std::string n, Tensor<T> v) : name(std::move(n)), value(std::move(v)), grad(value.shape()) {}

  void zero_grad() {
    if (grad.shape() != value.shape())
      grad = Tensor<T>(value.shape());
    else
      grad.fill(T(0));
  }
};

template <class T>
class Tape;

// Cheap handle to a node recorded on a Tape.
template <class T>
class Var {
 public:
  Var() = default;
  Var(Tape<T>* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape<T>& tape() const {
    if (!tape_) throw ContractError("numeric-core", "variable is not attached to a tape");
    return *tape_;
  }
  std::size_t id() const noexcept { return id_; }
  bool valid() const noexcept { return tape_ != nullptr; }

  const Tensor<T>& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t dim(std::size_t i) const { return value().dim(i); }
  std::size_t rank() const { return value().rank(); }
  bool requires_grad() const;

 private:
  Tape<T>* tape_ = nullptr;
  std::size_t id_ = 0;
};

// Append-only record of the forward computation. Node ids are assigned in
// creation order, which is a valid topological order; backward walks ids in
// reverse. A tape is single-writer.
template <class T>
class Tape {
 public:
  // Receives the node's output gradient and routes it into its parents.
  using BackwardFn = std::function<void(Tape&, const Tensor<T>& grad_out)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<T> constant(Tensor<T> value) { return push(std::move(value), false, nullptr, {}); }
  Var<T> input(Tensor<T> value, bool requires_grad = true) {
    return push(std::move(value), requires_grad, nullptr, {});
  }
  // Leaf bound to a model parameter; backward adds its gradient to p.grad.
  Var<T> param(Parameter<T>& p) { return push(p.value, true, &p, {}); }

  // Records an op result. If no parent needs a gradient the backward rule is
  // dropped and the node behaves as a constant.
  Var<T> record(Tensor<T> value, std::initializer_list<Var<T>> parents, BackwardFn fn) {
    bool needs = false;
    for (const auto& p : parents) needs = needs || p.requires_grad();
    return push(std::move(value), needs, nullptr, needs ? std::move(fn) : BackwardFn{});
  }
  Var<T> record(Tensor<T> value, const std::vector<Var<T>>& parents, BackwardFn fn) {
    bool needs = false;
    for (const auto& p : parents) needs = needs || p.requires_grad();
    return push(std::move(value), needs, nullptr, needs ? std::move(fn) : BackwardFn{});
  }

  const Tensor<T>& value(const Var<T>& v) const { return node(v).value; }
  bool requires_grad(const Var<T>& v) const { return node(v).requires_grad; }

  // Gradient of an input leaf after backward(); zeros if it received none.
  Tensor<T> grad(const Var<T>& v) const {
    const Node& n = node(v);
    return n.grad.empty() ? Tensor<T>(n.value.shape()) : n.grad;
  }

  void accumulate(const Var<T>& v, const Tensor<T>& g) {
    Node& n = node(v);
    if (!n.requires_grad) return;
    if (g.shape() != n.value.shape())
      throw DimensionError("gradient shape " + shape_str(g.shape()) + " does not match value shape " +
                           shape_str(n.value.shape()));
    if (n.grad.empty()) {
      n.grad = g;
      return;
    }
    T* dst = n.grad.ptr();
    const T* src = g.ptr();
    for (std::size_t i = 0; i < g.size(); ++i) dst[i] += src[i];
  }

  // Reverse sweep from a scalar loss. Interior gradients are reset on every
  // call; leaf gradients accumulate, so calling twice doubles them.
  void backward(const Var<T>& loss) {
    Node& root = node(loss);
    if (root.value.size() != 1)
      throw ContractError("numeric-core", "backward() needs a scalar loss, got shape " + shape_str(root.value.shape()));
    for (std::size_t i = 0; i <= loss.id(); ++i) {
      Node& n = nodes_[i];
      if (n.backward || n.param) n.grad = Tensor<T>();
    }
    if (!root.requires_grad) return;
    accumulate(loss, Tensor<T>(root.value.shape(), T(1)));
    for (std::size_t i = loss.id() + 1; i-- > 0;) {
      Node& n = nodes_[i];
      // deque references stay valid; callbacks only touch lower ids.
      if (n.backward && !n.grad.empty()) n.backward(*this, n.grad);
    }
    for (std::size_t i = 0; i <= loss.id(); ++i) {
      Node& n = nodes_[i];
      if (!n.param || n.grad.empty()) continue;
      if (n.param->grad.shape() != n.param->value.shape()) n.param->zero_grad();
      T* dst = n.param->grad.ptr();
      const T* src = n.grad.ptr();
      for (std::size_t k = 0; k < n.grad.size(); ++k) dst[k] += src[k];
    }
  }

  std::size_t size() const noexcept { return nodes_.size(); }

 private:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    bool requires_grad = false;
    Parameter<T>* param = nullptr;
    BackwardFn backward;
  };

  Var<T> push(Tensor<T> value, bool requires_grad, Parameter<T>* p, BackwardFn fn) {
    nodes_.push_back(Node{std::move(value), Tensor<T>(), requires_grad, p, std::move(fn)});
    return Var<T>(this, nodes_.size() - 1);
  }

  Node& node(const Var<T>& v) {
    if (&v.tape() != this || v.id() >= nodes_.size())
      throw ContractError("numeric-core", "variable belongs to a different tape");
    return nodes_[v.id()];
  }
  const Node& node(const Var<T>& v) const {
    if (&v.tape() != this || v.id() >= nodes_.size())
      throw ContractError("numeric-core", "variable belongs to a different tape");
    return nodes_[v.id()];
  }

  std::deque<Node> nodes_;
};

template <class T>
const Tensor<T>& Var<T>::value() const {
  return tape().value(*this);
}

template <class T>
bool Var<T>::requires_grad() const {
  return tape().requires_grad(*this);
}

}  // namespace genau
