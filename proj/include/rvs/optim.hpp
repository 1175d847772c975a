#ifndef RVS_OPTIM_HPP
#define RVS_OPTIM_HPP

#include <map>
#include <string>

#include "rvs/tape.hpp"

namespace rvs {

template <typename T>
using GradMap = std::map<std::string, Tensor<T>>;

/// Named trainable tensors, each with a momentum buffer of identical shape.
template <typename T>
class ParamStore {
 public:
  struct Entry {
    Tensor<T> value;
    Tensor<T> momentum;
  };

  void add(const std::string& name, Tensor<T> value) {
    Tensor<T> mom(value.shape());
    entries_.insert_or_assign(name, Entry{std::move(value), std::move(mom)});
  }

  void set(const std::string& name, Tensor<T> value, Tensor<T> momentum) {
    require_same_shape(value.shape(), momentum.shape(), "ParamStore::set");
    entries_.insert_or_assign(name, Entry{std::move(value), std::move(momentum)});
  }

  bool contains(const std::string& name) const { return entries_.count(name) != 0; }

  const Tensor<T>& value(const std::string& name) const { return at(name).value; }
  Tensor<T>& value(const std::string& name) { return at(name).value; }
  const Tensor<T>& momentum(const std::string& name) const { return at(name).momentum; }
  Tensor<T>& momentum(const std::string& name) { return at(name).momentum; }

  const std::map<std::string, Entry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& [_, e] : entries_) n += e.value.size();
    return n;
  }

  template <typename U>
  ParamStore<U> cast() const {
    ParamStore<U> out;
    for (const auto& [k, e] : entries_) out.set(k, e.value.template cast<U>(), e.momentum.template cast<U>());
    return out;
  }

  friend bool operator==(const ParamStore& a, const ParamStore& b) {
    if (a.entries_.size() != b.entries_.size()) return false;
    for (const auto& [k, e] : a.entries_) {
      auto it = b.entries_.find(k);
      if (it == b.entries_.end() || !(it->second.value == e.value) ||
          !(it->second.momentum == e.momentum))
        return false;
    }
    return true;
  }

 private:
  Entry& at(const std::string& name) {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw std::out_of_range("unknown parameter '" + name + "'");
    return it->second;
  }
  const Entry& at(const std::string& name) const {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw std::out_of_range("unknown parameter '" + name + "'");
    return it->second;
  }

  std::map<std::string, Entry> entries_;
};

/// Parameters of a store bound as leaves on one tape.
template <typename T>
using BoundParams = std::map<std::string, Var<T>>;

template <typename T>
BoundParams<T> bind(Tape<T>& tape, const ParamStore<T>& store, bool requires_grad) {
  BoundParams<T> out;
  for (const auto& [name, e] : store.entries()) out.emplace(name, tape.leaf(e.value, requires_grad));
  return out;
}

template <typename T>
GradMap<T> collect_grads(const Tape<T>& tape, const BoundParams<T>& bound) {
  GradMap<T> out;
  for (const auto& [name, v] : bound) out.emplace(name, tape.grad(v));
  return out;
}

/// Heavy-ball update: buffer <- momentum*buffer + grad ; value <- value - lr*buffer.
template <typename T>
void momentum_step(ParamStore<T>& store, const GradMap<T>& grads, T lr, T momentum) {
  for (const auto& [name, g] : grads)
    if (!store.contains(name)) throw std::out_of_range("momentum_step: unknown parameter '" + name + "'");
  for (const auto& [name, g] : grads) {
    auto& value = store.value(name);
    auto& buf = store.momentum(name);
    require_same_shape(value.shape(), g.shape(), "momentum_step");
    for (std::size_t i = 0; i < g.size(); ++i) {
      buf[i] = momentum * buf[i] + g[i];
      value[i] -= lr * buf[i];
    }
  }
}

}  // namespace rvs

#endif  // RVS_OPTIM_HPP
