#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "umsnet/errors.hpp"
#include "umsnet/numerics/tensor.hpp"

namespace umsnet {

// Learnable (or buffer, when !trainable) state owned by a layer. Addresses
// must stay stable for the lifetime of any Tape that references them.
template <typename T>
struct Parameter {
  Parameter(std::string name_, Tensor<T> value_, bool trainable_ = true)
      : name(std::move(name_)), value(std::move(value_)), grad(value.shape()), trainable(trainable_) {}

  Parameter(const Parameter&) = delete;
  Parameter& operator=(const Parameter&) = delete;

  void zero_grad() { grad.fill(T(0)); }

  std::string name;
  Tensor<T> value;
  Tensor<T> grad;
  bool trainable;
};

template <typename T>
class Tape;

// Handle to a value recorded on a Tape.
template <typename T>
class Var {
 public:
  Var() = default;
  Var(Tape<T>* tape, std::size_t id) : tape_(tape), id_(id) {}

  const Tensor<T>& value() const { return tape_->value(id_); }
  const Shape& shape() const { return value().shape(); }
  std::size_t id() const { return id_; }
  Tape<T>& tape() const { return *tape_; }
  bool requires_grad() const { return tape_->requires_grad(id_); }

 private:
  Tape<T>* tape_ = nullptr;
  std::size_t id_ = 0;
};

// Reverse-mode recording for one forward pass. Nodes are appended in
// topological order, so backward() just walks them in reverse. The tape
// (and every intermediate it holds) is released when it goes out of scope.
template <typename T>
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, const Tensor<T>& grad_out)>;

  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool grad_enabled() const { return grad_enabled_; }

  // Debug mode: every recorded value is checked for NaN/Inf.
  void set_check_finite(bool on) { check_finite_ = on; }

  Var<T> constant(Tensor<T> value) { return push(std::move(value), false, nullptr, nullptr); }

  Var<T> parameter(Parameter<T>& p) {
    return push(p.value, grad_enabled_ && p.trainable, nullptr, &p);
  }

  // Records an op output. `fn` is kept only when some input needs a gradient.
  Var<T> record(Tensor<T> value, std::initializer_list<Var<T>> inputs, BackwardFn fn) {
    bool needs = false;
    for (const Var<T>& v : inputs) needs = needs || v.requires_grad();
    return push(std::move(value), needs, needs ? std::move(fn) : nullptr, nullptr);
  }

  Var<T> record(Tensor<T> value, const std::vector<Var<T>>& inputs, BackwardFn fn) {
    bool needs = false;
    for (const Var<T>& v : inputs) needs = needs || v.requires_grad();
    return push(std::move(value), needs, needs ? std::move(fn) : nullptr, nullptr);
  }

  const Tensor<T>& value(std::size_t id) const { return nodes_.at(id).value; }
  bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }
  std::size_t size() const { return nodes_.size(); }

  // Gradient accumulator for `v`, zero-initialised on first touch.
  Tensor<T>& grad(const Var<T>& v) {
    Node& n = nodes_.at(v.id());
    if (!n.has_grad) {
      n.grad = Tensor<T>(n.value.shape());
      n.has_grad = true;
    }
    return n.grad;
  }

  void backward(const Var<T>& loss) {
    if (&loss.tape() != this) throw ContractError("backward: loss belongs to another tape");
    if (!loss.value().is_scalar()) {
      throw ContractError("backward: loss must be a scalar, got shape " + shape_str(loss.shape()));
    }
    if (!loss.requires_grad()) return;
    grad(loss).fill(T(1));
    for (std::size_t id = loss.id() + 1; id-- > 0;) {
      Node& n = nodes_[id];
      if (!n.requires_grad || !n.has_grad) continue;
      if (n.backward) {
        n.backward(*this, n.grad);
      } else if (n.param != nullptr) {
        auto dst = n.param->grad.data();
        auto src = n.grad.data();
        for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
      }
    }
  }

 private:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    bool requires_grad = false;
    bool has_grad = false;
    BackwardFn backward;
    Parameter<T>* param = nullptr;
  };

  Var<T> push(Tensor<T> value, bool requires_grad, BackwardFn fn, Parameter<T>* param) {
    if (check_finite_ && !value.all_finite()) {
      throw ContractError("non-finite value recorded at tape node " + std::to_string(nodes_.size()));
    }
    Node n;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    n.backward = std::move(fn);
    n.param = param;
    nodes_.push_back(std::move(n));
    return Var<T>(this, nodes_.size() - 1);
  }

  // deque: references to existing nodes survive push_back.
  std::deque<Node> nodes_;
  bool grad_enabled_;
  bool check_finite_ = false;
};

// Populates Parameter::grad (accumulating) for every trainable parameter
// reachable from `loss`.
template <typename T>
void backward(const Var<T>& loss) {
  loss.tape().backward(loss);
}

}  // namespace umsnet
