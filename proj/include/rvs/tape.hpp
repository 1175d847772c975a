#ifndef RVS_TAPE_HPP
#define RVS_TAPE_HPP

#include <deque>
#include <functional>
#include <initializer_list>
#include <utility>

#include "rvs/tensor.hpp"

namespace rvs {

template <typename T>
class Tape;

/// Handle to a value recorded on a Tape. Cheap to copy; valid while the tape lives.
template <typename T>
class Var {
 public:
  Var() = default;
  Var(Tape<T>* tape, std::size_t id) : tape_(tape), id_(id) {}

  const Tensor<T>& value() const { return tape_->value(id_); }
  const Shape& shape() const { return value().shape(); }
  std::size_t id() const noexcept { return id_; }
  Tape<T>& tape() const noexcept { return *tape_; }
  bool requires_grad() const { return tape_->requires_grad(id_); }
  bool valid() const noexcept { return tape_ != nullptr; }

 private:
  Tape<T>* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Reverse-mode record of a forward computation.
///
/// Nodes are appended in execution order, so the node list is always
/// topologically sorted. Each non-leaf node that depends on a trainable
/// input carries a closure that pushes its output gradient into the
/// gradient buffers of its inputs.
template <typename T>
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, const Tensor<T>& out_grad)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<T> constant(Tensor<T> value) { return push(std::move(value), false, {}); }
  Var<T> variable(Tensor<T> value) { return push(std::move(value), true, {}); }
  Var<T> leaf(Tensor<T> value, bool requires_grad) {
    return push(std::move(value), requires_grad, {});
  }

  /// Records an op result. The closure is dropped when no input needs a gradient.
  Var<T> record(Tensor<T> value, std::initializer_list<Var<T>> inputs, BackwardFn fn) {
    bool needs = false;
    for (const auto& v : inputs) needs = needs || requires_grad(v.id());
    return push(std::move(value), needs, needs ? std::move(fn) : BackwardFn{});
  }

  const Tensor<T>& value(std::size_t id) const { return nodes_.at(id).value; }
  bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }
  std::size_t size() const noexcept { return nodes_.size(); }

  /// Gradient accumulator for node `id`, zero-initialised on first access.
  Tensor<T>& grad_buffer(std::size_t id) {
    auto& n = nodes_.at(id);
    if (n.grad.empty()) n.grad = Tensor<T>(n.value.shape());
    return n.grad;
  }

  /// Runs reverse accumulation from a scalar loss. Gradients from a previous
  /// call are discarded, so repeated calls give identical results.
  void backward(Var<T> loss) {
    if (&loss.tape() != this) throw ContractError("backward: loss recorded on another tape");
    if (loss.value().size() != 1)
      throw ContractError("backward: loss must be scalar, got " + shape_str(loss.shape()));
    for (auto& n : nodes_) n.grad = Tensor<T>();
    grad_buffer(loss.id())[0] = T(1);
    for (std::size_t i = loss.id() + 1; i-- > 0;) {
      auto& n = nodes_[i];
      if (!n.backward || n.grad.empty()) continue;
      n.backward(*this, n.grad);
    }
  }

  /// Gradient of the last backward() wrt `v`; zeros if `v` was unreachable.
  Tensor<T> grad(Var<T> v) const {
    const auto& n = nodes_.at(v.id());
    if (n.grad.empty()) return Tensor<T>(n.value.shape());
    return n.grad;
  }

 private:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    bool requires_grad = false;
    BackwardFn backward;
  };

  Var<T> push(Tensor<T> value, bool requires_grad, BackwardFn fn) {
    nodes_.push_back(Node{std::move(value), Tensor<T>(), requires_grad, std::move(fn)});
    return Var<T>(this, nodes_.size() - 1);
  }

  // deque keeps value references stable while ops append nodes
  std::deque<Node> nodes_;
};

}  // namespace rvs

#endif  // RVS_TAPE_HPP
