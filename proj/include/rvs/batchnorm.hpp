#ifndef RVS_BATCHNORM_HPP
#define RVS_BATCHNORM_HPP

#include <cmath>
#include <vector>

#include "rvs/tape.hpp"

namespace rvs {

enum class BnMode { train, eval };

/// Running moments of one batchnorm layer.
template <typename T>
struct BatchNormState {
  Tensor<T> mean;
  Tensor<T> var;

  explicit BatchNormState(std::size_t channels = 1)
      : mean(Shape{channels}, T(0)), var(Shape{channels}, T(1)) {}
};

struct BatchNormOptions {
  double momentum = 0.9;  // running <- momentum * running + (1 - momentum) * batch
  double eps = 1e-5;      // variance floor
};

/// Per-channel normalisation over every axis but the last.
///
/// Train mode normalises by batch statistics and folds them into `update`
/// when it is non-null. Eval mode normalises by the moments in `running`.
template <typename T>
Var<T> batchnorm(Var<T> x, Var<T> gamma, Var<T> beta, BnMode mode,
                 const BatchNormState<T>* running, BatchNormState<T>* update = nullptr,
                 BatchNormOptions opt = {}) {
  const std::size_t c = x.shape().back();
  if (gamma.value().size() != c || beta.value().size() != c)
    throw DimensionError("batchnorm: gamma/beta length must equal channel count " +
                         std::to_string(c));
  const std::size_t m = x.value().size() / c;
  if (m == 0) throw InputError("batchnorm: empty batch");
  const T* xv = x.value().raw();

  std::vector<T> mean(c, T(0)), var(c, T(0));
  if (mode == BnMode::train) {
    for (std::size_t i = 0; i < m; ++i) {
      const T* row = xv + i * c;
      for (std::size_t ch = 0; ch < c; ++ch) mean[ch] += row[ch];
    }
    for (auto& v : mean) v /= T(m);
    for (std::size_t i = 0; i < m; ++i) {
      const T* row = xv + i * c;
      for (std::size_t ch = 0; ch < c; ++ch) {
        const T d = row[ch] - mean[ch];
        var[ch] += d * d;
      }
    }
    for (auto& v : var) v /= T(m);
    if (update) {
      if (update->mean.size() != c) throw DimensionError("batchnorm: running moments size");
      const T mom = T(opt.momentum);
      for (std::size_t ch = 0; ch < c; ++ch) {
        update->mean[ch] = mom * update->mean[ch] + (T(1) - mom) * mean[ch];
        update->var[ch] = mom * update->var[ch] + (T(1) - mom) * var[ch];
      }
    }
  } else {
    if (!running) throw ContractError("batchnorm: eval mode needs running moments");
    if (running->mean.size() != c) throw DimensionError("batchnorm: running moments size");
    for (std::size_t ch = 0; ch < c; ++ch) {
      mean[ch] = running->mean[ch];
      var[ch] = running->var[ch];
    }
  }

  std::vector<T> inv_std(c), shift(c);
  for (std::size_t ch = 0; ch < c; ++ch) {
    inv_std[ch] = T(1) / std::sqrt(var[ch] + T(opt.eps));
    shift[ch] = -mean[ch] * inv_std[ch];
  }

  Tensor<T> xhat(x.shape(), uninitialized);
  Tensor<T> out(x.shape(), uninitialized);
  {
    const T* gv = gamma.value().raw();
    const T* bv = beta.value().raw();
    for (std::size_t i = 0; i < m; ++i) {
      const T* xr = xv + i * c;
      T* hr = xhat.raw() + i * c;
      T* orow = out.raw() + i * c;
      for (std::size_t ch = 0; ch < c; ++ch) {
        hr[ch] = xr[ch] * inv_std[ch] + shift[ch];
        orow[ch] = gv[ch] * hr[ch] + bv[ch];
      }
    }
  }

  const bool batch_stats = mode == BnMode::train;
  return x.tape().record(
      std::move(out), {x, gamma, beta},
      [x, gamma, beta, xhat = std::move(xhat), inv_std = std::move(inv_std), m, c, batch_stats](
          Tape<T>& t, const Tensor<T>& dy) {
        std::vector<T> dgamma(c, T(0)), dbeta(c, T(0));
        for (std::size_t i = 0; i < m; ++i) {
          const T* g = dy.raw() + i * c;
          const T* h = xhat.raw() + i * c;
          for (std::size_t ch = 0; ch < c; ++ch) {
            dgamma[ch] += g[ch] * h[ch];
            dbeta[ch] += g[ch];
          }
        }
        if (gamma.requires_grad()) {
          auto& buf = t.grad_buffer(gamma.id());
          for (std::size_t ch = 0; ch < c; ++ch) buf[ch] += dgamma[ch];
        }
        if (beta.requires_grad()) {
          auto& buf = t.grad_buffer(beta.id());
          for (std::size_t ch = 0; ch < c; ++ch) buf[ch] += dbeta[ch];
        }
        if (!x.requires_grad()) return;
        T* buf = t.grad_buffer(x.id()).raw();
        const T* gv = gamma.value().raw();
        // dx = inv_std/m * (m*dxhat - sum(dxhat) - xhat*sum(dxhat*xhat)), dxhat = dy*gamma
        // which is a * dy + b * xhat + d per channel; eval mode has only the first term
        std::vector<T> ca(c), cb(c, T(0)), cd(c, T(0));
        const T inv_m = T(1) / T(m);
        for (std::size_t ch = 0; ch < c; ++ch) {
          ca[ch] = gv[ch] * inv_std[ch];
          if (batch_stats) {
            cb[ch] = -ca[ch] * inv_m * dgamma[ch];
            cd[ch] = -ca[ch] * inv_m * dbeta[ch];
          }
        }
        for (std::size_t i = 0; i < m; ++i) {
          const T* g = dy.raw() + i * c;
          const T* h = xhat.raw() + i * c;
          T* d = buf + i * c;
          for (std::size_t ch = 0; ch < c; ++ch) d[ch] += ca[ch] * g[ch] + cb[ch] * h[ch] + cd[ch];
        }
      });
}

}  // namespace rvs

#endif  // RVS_BATCHNORM_HPP
