#ifndef RVS_OPS_HPP
#define RVS_OPS_HPP

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "rvs/linalg.hpp"
#include "rvs/tape.hpp"

namespace rvs {

namespace detail {

template <typename T>
void accumulate(Tape<T>& tape, Var<T> v, const Tensor<T>& g) {
  if (!v.requires_grad()) return;
  auto& buf = tape.grad_buffer(v.id());
  for (std::size_t i = 0; i < g.size(); ++i) buf[i] += g[i];
}

template <typename T>
void check_matrix(const Shape& s, const char* op) {
  if (s.size() != 2)
    throw DimensionError(std::string(op) + ": expected a matrix, got " + shape_str(s));
}

}  // namespace detail

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  require_same_shape(a.shape(), b.shape(), "add");
  Tensor<T> out = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  return a.tape().record(std::move(out), {a, b}, [a, b](Tape<T>& t, const Tensor<T>& g) {
    detail::accumulate(t, a, g);
    detail::accumulate(t, b, g);
  });
}

template <typename T>
Var<T> sub(Var<T> a, Var<T> b) {
  require_same_shape(a.shape(), b.shape(), "sub");
  Tensor<T> out = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  return a.tape().record(std::move(out), {a, b}, [a, b](Tape<T>& t, const Tensor<T>& g) {
    detail::accumulate(t, a, g);
    if (!b.requires_grad()) return;
    auto& buf = t.grad_buffer(b.id());
    for (std::size_t i = 0; i < g.size(); ++i) buf[i] -= g[i];
  });
}

template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
  require_same_shape(a.shape(), b.shape(), "mul");
  Tensor<T> out = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  return a.tape().record(std::move(out), {a, b}, [a, b](Tape<T>& t, const Tensor<T>& g) {
    if (a.requires_grad()) {
      auto& buf = t.grad_buffer(a.id());
      const auto& bv = b.value();
      for (std::size_t i = 0; i < g.size(); ++i) buf[i] += g[i] * bv[i];
    }
    if (b.requires_grad()) {
      auto& buf = t.grad_buffer(b.id());
      const auto& av = a.value();
      for (std::size_t i = 0; i < g.size(); ++i) buf[i] += g[i] * av[i];
    }
  });
}

template <typename T>
Var<T> scale(Var<T> a, T s) {
  Tensor<T> out = a.value();
  for (auto& v : out.data()) v *= s;
  return a.tape().record(std::move(out), {a}, [a, s](Tape<T>& t, const Tensor<T>& g) {
    auto& buf = t.grad_buffer(a.id());
    for (std::size_t i = 0; i < g.size(); ++i) buf[i] += s * g[i];
  });
}

template <typename T>
Var<T> sum(Var<T> a) {
  T s = 0;
  for (T v : a.value().data()) s += v;
  return a.tape().record(Tensor<T>::scalar(s), {a}, [a](Tape<T>& t, const Tensor<T>& g) {
    auto& buf = t.grad_buffer(a.id());
    for (auto& v : buf.data()) v += g[0];
  });
}

/// Inner product of two equally shaped tensors.
template <typename T>
Var<T> dot(Var<T> a, Var<T> b) {
  require_same_shape(a.shape(), b.shape(), "dot");
  T s = 0;
  const auto& av = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < av.size(); ++i) s += av[i] * bv[i];
  return a.tape().record(Tensor<T>::scalar(s), {a, b}, [a, b](Tape<T>& t, const Tensor<T>& g) {
    if (a.requires_grad()) {
      auto& buf = t.grad_buffer(a.id());
      const auto& bv = b.value();
      for (std::size_t i = 0; i < buf.size(); ++i) buf[i] += g[0] * bv[i];
    }
    if (b.requires_grad()) {
      auto& buf = t.grad_buffer(b.id());
      const auto& av = a.value();
      for (std::size_t i = 0; i < buf.size(); ++i) buf[i] += g[0] * av[i];
    }
  });
}

template <typename T>
Var<T> matmul(Var<T> a, Var<T> b) {
  detail::check_matrix<T>(a.shape(), "matmul");
  detail::check_matrix<T>(b.shape(), "matmul");
  const std::size_t m = a.shape()[0], k = a.shape()[1], p = b.shape()[1];
  if (b.shape()[0] != k)
    throw DimensionError("matmul: inner dimensions disagree, " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
  Tensor<T> out(Shape{m, p}, uninitialized);
  linalg::gemm_nn(a.value().raw(), b.value().raw(), out.raw(), m, k, p);
  return a.tape().record(std::move(out), {a, b}, [a, b, m, k, p](Tape<T>& t, const Tensor<T>& g) {
    if (a.requires_grad())
      linalg::gemm_nt(g.raw(), b.value().raw(), t.grad_buffer(a.id()).raw(), m, p, k, true);
    if (b.requires_grad())
      linalg::gemm_tn(a.value().raw(), g.raw(), t.grad_buffer(b.id()).raw(), m, k, p, true);
  });
}

/// Adds a per-channel bias along the last axis.
template <typename T>
Var<T> add_bias(Var<T> x, Var<T> bias) {
  const std::size_t c = x.shape().back();
  if (bias.value().size() != c)
    throw DimensionError("add_bias: bias " + shape_str(bias.shape()) + " vs input " +
                         shape_str(x.shape()));
  Tensor<T> out = x.value();
  const auto& bv = bias.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i % c];
  return x.tape().record(std::move(out), {x, bias}, [x, bias, c](Tape<T>& t, const Tensor<T>& g) {
    detail::accumulate(t, x, g);
    if (bias.requires_grad()) {
      auto& buf = t.grad_buffer(bias.id());
      for (std::size_t i = 0; i < g.size(); ++i) buf[i % c] += g[i];
    }
  });
}

template <typename T>
Var<T> reshape(Var<T> x, Shape s) {
  Tensor<T> out = x.value().reshaped(std::move(s));
  return x.tape().record(std::move(out), {x}, [x](Tape<T>& t, const Tensor<T>& g) {
    auto& buf = t.grad_buffer(x.id());
    for (std::size_t i = 0; i < g.size(); ++i) buf[i] += g[i];
  });
}

/// Stacks two tensors along the leading (batch) axis.
template <typename T>
Var<T> concat_rows(Var<T> a, Var<T> b) {
  Shape sa = a.shape(), sb = b.shape();
  if (sa.size() != sb.size() || !std::equal(sa.begin() + 1, sa.end(), sb.begin() + 1))
    throw DimensionError("concat_rows: " + shape_str(sa) + " vs " + shape_str(sb));
  Shape so = sa;
  so[0] += sb[0];
  typename Tensor<T>::Buffer data;
  data.reserve(shape_volume(so));
  data.insert(data.end(), a.value().vec().begin(), a.value().vec().end());
  data.insert(data.end(), b.value().vec().begin(), b.value().vec().end());
  const std::size_t na = a.value().size();
  return a.tape().record(Tensor<T>(so, std::move(data)), {a, b},
                         [a, b, na](Tape<T>& t, const Tensor<T>& g) {
                           if (a.requires_grad()) {
                             auto& buf = t.grad_buffer(a.id());
                             for (std::size_t i = 0; i < na; ++i) buf[i] += g[i];
                           }
                           if (b.requires_grad()) {
                             auto& buf = t.grad_buffer(b.id());
                             for (std::size_t i = 0; i < buf.size(); ++i) buf[i] += g[na + i];
                           }
                         });
}

/// Rows [begin, end) along the leading axis.
template <typename T>
Var<T> slice_rows(Var<T> x, std::size_t begin, std::size_t end) {
  Shape s = x.shape();
  if (begin >= end || end > s[0])
    throw DimensionError("slice_rows: bad range for " + shape_str(s));
  const std::size_t row = x.value().size() / s[0];
  s[0] = end - begin;
  typename Tensor<T>::Buffer data(x.value().vec().begin() + begin * row, x.value().vec().begin() + end * row);
  return x.tape().record(Tensor<T>(s, std::move(data)), {x},
                         [x, begin, row](Tape<T>& t, const Tensor<T>& g) {
                           auto& buf = t.grad_buffer(x.id());
                           for (std::size_t i = 0; i < g.size(); ++i) buf[begin * row + i] += g[i];
                         });
}

/// NHWC -> NC mean over spatial positions.
template <typename T>
Var<T> global_avg_pool(Var<T> x) {
  if (x.shape().size() != 4)
    throw DimensionError("global_avg_pool: expected NHWC, got " + shape_str(x.shape()));
  const std::size_t n = x.shape()[0], hw = x.shape()[1] * x.shape()[2], c = x.shape()[3];
  Tensor<T> out(Shape{n, c});
  const auto& xv = x.value();
  const T inv = T(1) / T(hw);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t p = 0; p < hw; ++p)
      for (std::size_t ch = 0; ch < c; ++ch) out[i * c + ch] += xv[(i * hw + p) * c + ch];
  for (auto& v : out.data()) v *= inv;
  return x.tape().record(std::move(out), {x}, [x, n, hw, c, inv](Tape<T>& t, const Tensor<T>& g) {
    auto& buf = t.grad_buffer(x.id());
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t p = 0; p < hw; ++p)
        for (std::size_t ch = 0; ch < c; ++ch) buf[(i * hw + p) * c + ch] += g[i * c + ch] * inv;
  });
}

/// max(x, leak*x). The slope at exactly 0 is taken to be `leak`.
template <typename T>
Var<T> leaky_relu(Var<T> x, T leak) {
  Tensor<T> out = x.value();
  for (auto& v : out.data()) v = v > T(0) ? v : leak * v;
  return x.tape().record(std::move(out), {x}, [x, leak](Tape<T>& t, const Tensor<T>& g) {
    auto& buf = t.grad_buffer(x.id());
    const auto& xv = x.value();
    for (std::size_t i = 0; i < g.size(); ++i) buf[i] += xv[i] > T(0) ? g[i] : leak * g[i];
  });
}

/// Elementwise clamp to [lo, hi]. Gradient passes only strictly inside the interval.
template <typename T>
Var<T> clip(Var<T> x, T lo, T hi) {
  Tensor<T> out = x.value();
  for (auto& v : out.data()) v = std::clamp(v, lo, hi);
  return x.tape().record(std::move(out), {x}, [x, lo, hi](Tape<T>& t, const Tensor<T>& g) {
    auto& buf = t.grad_buffer(x.id());
    const auto& xv = x.value();
    for (std::size_t i = 0; i < g.size(); ++i)
      if (xv[i] > lo && xv[i] < hi) buf[i] += g[i];
  });
}

/// Mean over rows of -sum_j targets[i,j] * log softmax(logits)[i,j], max-shifted.
template <typename T>
Var<T> softmax_cross_entropy(Var<T> logits, const Tensor<T>& targets) {
  detail::check_matrix<T>(logits.shape(), "softmax_cross_entropy");
  if (targets.shape() != logits.shape())
    throw DimensionError("softmax_cross_entropy: logits " + shape_str(logits.shape()) +
                         " vs targets " + shape_str(targets.shape()));
  const std::size_t n = logits.shape()[0], c = logits.shape()[1];
  const auto& z = logits.value();
  Tensor<T> prob(Shape{n, c});
  T loss = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const T* row = z.raw() + i * c;
    const T mx = *std::max_element(row, row + c);
    T se = 0;
    for (std::size_t j = 0; j < c; ++j) se += std::exp(row[j] - mx);
    const T lse = mx + std::log(se);
    for (std::size_t j = 0; j < c; ++j) {
      prob[i * c + j] = std::exp(row[j] - lse);
      loss -= targets[i * c + j] * (row[j] - lse);
    }
  }
  loss /= T(n);
  return logits.tape().record(
      Tensor<T>::scalar(loss), {logits},
      [logits, targets, prob = std::move(prob), n, c](Tape<T>& t, const Tensor<T>& g) {
        auto& buf = t.grad_buffer(logits.id());
        const T s = g[0] / T(n);
        for (std::size_t i = 0; i < n; ++i) {
          T tsum = 0;
          for (std::size_t j = 0; j < c; ++j) tsum += targets[i * c + j];
          for (std::size_t j = 0; j < c; ++j)
            buf[i * c + j] += s * (prob[i * c + j] * tsum - targets[i * c + j]);
        }
      });
}

/// Summed hinge on the logit margin, max(0, Z_y - max_{j!=y} Z_j).
/// Descending it pushes each sample toward its runner-up class.
template <typename T>
Var<T> logit_margin_loss(Var<T> logits, const std::vector<int>& labels) {
  detail::check_matrix<T>(logits.shape(), "logit_margin_loss");
  const std::size_t n = logits.shape()[0], c = logits.shape()[1];
  if (labels.size() != n) throw DimensionError("logit_margin_loss: label count mismatch");
  if (c < 2) throw DimensionError("logit_margin_loss: needs at least two classes");
  const auto& z = logits.value();
  std::vector<std::size_t> other(n);
  std::vector<char> active(n, 0);
  T loss = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t y = static_cast<std::size_t>(labels[i]);
    std::size_t best = y == 0 ? 1 : 0;
    for (std::size_t j = 0; j < c; ++j)
      if (j != y && z[i * c + j] > z[i * c + best]) best = j;
    other[i] = best;
    const T m = z[i * c + y] - z[i * c + best];
    if (m > T(0)) {
      loss += m;
      active[i] = 1;
    }
  }
  return logits.tape().record(
      Tensor<T>::scalar(loss), {logits},
      [logits, labels, other = std::move(other), active = std::move(active), n, c](
          Tape<T>& t, const Tensor<T>& g) {
        auto& buf = t.grad_buffer(logits.id());
        for (std::size_t i = 0; i < n; ++i) {
          if (!active[i]) continue;
          buf[i * c + static_cast<std::size_t>(labels[i])] += g[0];
          buf[i * c + other[i]] -= g[0];
        }
      });
}

/// Row-wise softmax of a plain tensor (no tape).
template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& logits) {
  const std::size_t n = logits.dim(0), c = logits.dim(1);
  Tensor<T> out(logits.shape());
  for (std::size_t i = 0; i < n; ++i) {
    const T* row = logits.raw() + i * c;
    const T mx = *std::max_element(row, row + c);
    T se = 0;
    for (std::size_t j = 0; j < c; ++j) se += (out[i * c + j] = std::exp(row[j] - mx));
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] /= se;
  }
  return out;
}

template <typename T>
std::vector<int> argmax_rows(const Tensor<T>& logits) {
  const std::size_t n = logits.dim(0), c = logits.dim(1);
  std::vector<int> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const T* row = logits.raw() + i * c;
    out[i] = static_cast<int>(std::max_element(row, row + c) - row);
  }
  return out;
}

}  // namespace rvs

#endif  // RVS_OPS_HPP
