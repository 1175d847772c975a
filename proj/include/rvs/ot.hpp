#ifndef RVS_OT_HPP
#define RVS_OT_HPP

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include <Eigen/Core>

#include "rvs/ops.hpp"

namespace rvs {

/// Coupling between two uniform empirical measures, with its marginals.
template <typename T>
struct TransportPlan {
  Tensor<T> coupling;      // [n, n]
  Tensor<T> row_marginal;  // u
  Tensor<T> col_marginal;  // u_adv

  /// Largest deviation of the coupling's row/column sums from the marginals.
  double marginal_error() const {
    const std::size_t n = row_marginal.size();
    double err = 0;
    for (std::size_t i = 0; i < n; ++i) {
      double r = 0, c = 0;
      for (std::size_t j = 0; j < n; ++j) {
        r += double(coupling[i * n + j]);
        c += double(coupling[j * n + i]);
      }
      err = std::max({err, std::abs(r - double(row_marginal[i])), std::abs(c - double(col_marginal[i]))});
    }
    return err;
  }
};

/// Pairwise squared Euclidean distances, C[i][j] = |a_i - b_j|^2.
template <typename T>
Var<T> cost_matrix(Var<T> a, Var<T> b) {
  const Shape& as = a.shape();
  const Shape& bs = b.shape();
  if (as.size() != 2 || bs.size() != 2 || as != bs)
    throw DimensionError("cost_matrix: latent batches must share shape, got " + shape_str(as) +
                         " and " + shape_str(bs));
  const std::size_t n = as[0], d = as[1];
  const auto& av = a.value();
  const auto& bv = b.value();
  Tensor<T> out(Shape{n, n});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      T s = 0;
      for (std::size_t k = 0; k < d; ++k) {
        const T diff = av[i * d + k] - bv[j * d + k];
        s += diff * diff;
      }
      out[i * n + j] = s;
    }
  return a.tape().record(std::move(out), {a, b}, [a, b, n, d](Tape<T>& t, const Tensor<T>& g) {
    const auto& av = a.value();
    const auto& bv = b.value();
    T* da = a.requires_grad() ? t.grad_buffer(a.id()).raw() : nullptr;
    T* db = b.requires_grad() ? t.grad_buffer(b.id()).raw() : nullptr;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        const T w = T(2) * g[i * n + j];
        if (w == T(0)) continue;
        for (std::size_t k = 0; k < d; ++k) {
          const T diff = w * (av[i * d + k] - bv[j * d + k]);
          if (da) da[i * d + k] += diff;
          if (db) db[j * d + k] -= diff;
        }
      }
  });
}

enum class SinkhornGradient {
  unrolled,    // backpropagate through every iteration
  fixed_plan,  // treat the final plan as constant: dD/dC = T
};

struct SinkhornOptions {
  double reg = 0.01;
  int iters = 100;
  SinkhornGradient gradient = SinkhornGradient::unrolled;
  // Anneal reg geometrically from the cost range down to `reg` over the first
  // half of the iterations, then hold it. Same fixed point, far fewer
  // iterations when reg is tiny relative to the costs.
  bool eps_scaling = false;
};

template <typename T>
struct SinkhornResult {
  Var<T> distance;
  TransportPlan<T> plan;
};

namespace detail {

using ArrD = Eigen::Array<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// exp() of anything below this lands in denormals, which are very slow on x86.
// Clamping changes each term by less than 1e-304.
inline constexpr double kExpFloor = -700.0;

// LSE_j(k_ij + h_j) for every row i, with k row-major n x n.
inline Eigen::ArrayXd row_lse(const ArrD& k, const Eigen::ArrayXd& h, ArrD& scratch) {
  const Eigen::Index n = k.rows();
  Eigen::ArrayXd out(n);
  scratch = k.rowwise() + h.transpose();
  for (Eigen::Index i = 0; i < n; ++i) {
    double* row = scratch.data() + i * n;
    const double m = *std::max_element(row, row + n);
    for (Eigen::Index j = 0; j < n; ++j) row[j] -= m;
    out(i) = m;
  }
  Eigen::Map<Eigen::ArrayXd> flat(scratch.data(), n * n);
  flat = flat.max(kExpFloor).exp();
  out += scratch.rowwise().sum().log();
  return out;
}

// LSE_i(k_ij + h_i) for every column j.
inline Eigen::ArrayXd col_lse(const ArrD& k, const Eigen::ArrayXd& h, ArrD& scratch) {
  const Eigen::Index n = k.rows();
  scratch = k.colwise() + h;
  Eigen::ArrayXd m = Eigen::ArrayXd::Constant(n, -std::numeric_limits<double>::infinity());
  for (Eigen::Index i = 0; i < n; ++i) m = m.max(scratch.row(i).transpose());
  scratch.rowwise() -= m.transpose();
  Eigen::Map<Eigen::ArrayXd> flat(scratch.data(), n * n);
  flat = flat.max(kExpFloor).exp();
  Eigen::ArrayXd s = Eigen::ArrayXd::Zero(n);
  for (Eigen::Index i = 0; i < n; ++i) s += scratch.row(i).transpose();
  return m + s.log();
}

// exp(k_ij + a_i + b_j)
inline ArrD exp_outer(const ArrD& k, const Eigen::ArrayXd& a, const Eigen::ArrayXd& b) {
  ArrD e = k.colwise() + a;
  e.rowwise() += b.transpose();
  Eigen::Map<Eigen::ArrayXd> flat(e.data(), e.size());
  flat = flat.max(kExpFloor).exp();
  return e;
}

}  // namespace detail

/// Entropic OT between two uniform measures over an n x n cost matrix.
///
/// Log-domain updates run for exactly `iters` iterations, starting from zero
/// column potentials:
///   f_i = reg*log(1/n) - reg*LSE_j((g_j - C_ij)/reg)
///   g_j = reg*log(1/n) - reg*LSE_i((f_i - C_ij)/reg)
/// and the plan is P_ij = exp((f_i + g_j - C_ij)/reg). The returned distance
/// is sum_ij P_ij C_ij. Internally everything runs in double.
template <typename T>
SinkhornResult<T> sinkhorn_distance(Var<T> cost, SinkhornOptions opt = {}) {
  using detail::ArrD;
  if (!(opt.reg > 0)) throw ConfigError("sinkhorn: regularisation must be > 0");
  if (opt.iters < 1) throw ConfigError("sinkhorn: iteration count must be >= 1");
  const Shape& cs = cost.shape();
  if (cs.size() != 2 || cs[0] != cs[1])
    throw DimensionError("sinkhorn: cost must be square, got " + shape_str(cs));
  const auto n = static_cast<Eigen::Index>(cs[0]);
  for (T v : cost.value().data())
    if (std::isnan(v)) throw InputError("sinkhorn: NaN in cost matrix");

  const double eps = opt.reg;
  const double log_w = -std::log(double(n));
  const std::size_t iters = static_cast<std::size_t>(opt.iters);
  ArrD c(n, n);
  for (Eigen::Index k = 0; k < n * n; ++k) c.data()[k] = double(cost.value()[static_cast<std::size_t>(k)]);
  const ArrD neg_c = -c / eps;

  // regularisation used at iteration t (1-based) is schedule[t-1]
  std::vector<double> schedule(iters, eps);
  if (opt.eps_scaling) {
    // power of two at or above the cost range: piecewise constant in C, so
    // the schedule contributes no gradient
    const double range = c.maxCoeff() - c.minCoeff();
    const double start = std::max(eps, range > 0 ? std::exp2(std::ceil(std::log2(range))) : eps);
    const std::size_t ramp = std::max<std::size_t>(1, iters / 2);
    for (std::size_t t = 0; t < ramp; ++t)
      schedule[t] = std::max(eps, start * std::pow(eps / start, double(t) / double(ramp)));
  }
  auto scaled_cost = [&](double e) { return e == eps ? neg_c : ArrD(-c / e); };

  // f[t-1] holds f^t for t = 1..iters; g[t] holds g^t for t = 0..iters
  std::vector<Eigen::ArrayXd> f(iters), g(iters + 1);
  g[0] = Eigen::ArrayXd::Zero(n);
  ArrD scratch(n, n);
  for (std::size_t t = 1; t <= iters; ++t) {
    const double e = schedule[t - 1];
    const ArrD k = scaled_cost(e);
    f[t - 1] = e * log_w - e * detail::row_lse(k, g[t - 1] / e, scratch);
    g[t] = e * log_w - e * detail::col_lse(k, f[t - 1] / e, scratch);
  }

  const ArrD plan = detail::exp_outer(neg_c, f[iters - 1] / eps, g[iters] / eps);
  const double dist = (plan * c).sum();

  const auto un = static_cast<std::size_t>(n);
  TransportPlan<T> tp{Tensor<T>(Shape{un, un}), Tensor<T>(Shape{un}, T(1.0 / double(n))),
                      Tensor<T>(Shape{un}, T(1.0 / double(n)))};
  for (std::size_t k = 0; k < un * un; ++k) tp.coupling[k] = T(plan.data()[k]);

  auto backward = [cost, n, eps, iters, log_w, c, neg_c, f = std::move(f), g = std::move(g), plan,
                   schedule = std::move(schedule), mode = opt.gradient](Tape<T>& t, const Tensor<T>& out_grad) {
    const double dd = double(out_grad[0]);
    ArrD dc = plan * dd;
    if (mode == SinkhornGradient::unrolled) {
      // P_ij = exp((f_i + g_j - C_ij)/eps); W = P * dP with dP = C * dD
      const ArrD w = plan * c * (dd / eps);
      Eigen::ArrayXd df = w.rowwise().sum();
      Eigen::ArrayXd dg = w.colwise().sum().transpose();
      dc -= w;
      const double inv_w = std::exp(-log_w);  // 1 / marginal weight
      for (std::size_t tt = iters; tt >= 1; --tt) {
        const Eigen::ArrayXd& ft = f[tt - 1];
        const double e = schedule[tt - 1];
        const ArrD k = e == eps ? neg_c : ArrD(-c / e);
        // g^t_j = e*log b - e*LSE_i((f^t_i - C_ij)/e); its softmax over i is
        // S_ij = exp((f_i + g_j - C_ij)/e) / b
        ArrD sdg = detail::exp_outer(k, ft / e, g[tt] / e);
        sdg.rowwise() *= (dg * inv_w).transpose();
        df -= sdg.rowwise().sum();
        dc += sdg;
        // f^t_i = e*log a - e*LSE_j((g^{t-1}_j - C_ij)/e)
        ArrD rdf = detail::exp_outer(k, ft / e, g[tt - 1] / e);
        rdf.colwise() *= df * inv_w;
        dg = -rdf.colwise().sum().transpose();
        dc += rdf;
        df.setZero();
      }
    }
    auto& buf = t.grad_buffer(cost.id());
    for (Eigen::Index k = 0; k < n * n; ++k) buf[static_cast<std::size_t>(k)] += T(dc.data()[k]);
  };

  Var<T> d = cost.tape().record(Tensor<T>::scalar(T(dist)), {cost}, std::move(backward));
  return SinkhornResult<T>{d, std::move(tp)};
}

/// Exact discrete OT cost min_T <T, C> over couplings with marginals u, v.
///
/// Solved as a min-cost flow by successive shortest paths (Bellman-Ford on
/// the residual graph). Meant for small test instances.
inline double exact_ot_lp(const std::vector<double>& cost, const std::vector<double>& u,
                          const std::vector<double>& v) {
  const std::size_t n = u.size(), m = v.size();
  if (cost.size() != n * m) throw DimensionError("exact_ot_lp: cost size mismatch");
  if (n > 8 || m > 8) throw InputError("exact_ot_lp: instance too large (n <= 8)");
  double su = 0, sv = 0;
  for (double x : u) {
    if (x < 0) throw InputError("exact_ot_lp: negative marginal weight");
    su += x;
  }
  for (double x : v) {
    if (x < 0) throw InputError("exact_ot_lp: negative marginal weight");
    sv += x;
  }
  if (std::abs(su - sv) > 1e-9) throw InputError("exact_ot_lp: marginals have different mass");

  // nodes: 0 source, 1..n rows, n+1..n+m cols, n+m+1 sink
  const std::size_t nodes = n + m + 2, src = 0, snk = n + m + 1;
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> cap(nodes * nodes, 0.0), wt(nodes * nodes, 0.0);
  for (std::size_t i = 0; i < n; ++i) cap[src * nodes + 1 + i] = u[i];
  for (std::size_t j = 0; j < m; ++j) cap[(n + 1 + j) * nodes + snk] = v[j];
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) {
      const std::size_t a = 1 + i, b = n + 1 + j;
      cap[a * nodes + b] = inf;
      wt[a * nodes + b] = cost[i * m + j];
      wt[b * nodes + a] = -cost[i * m + j];
    }

  const double tiny = 1e-15;
  double remaining = su, total = 0;
  for (int round = 0; round < 10000 && remaining > tiny; ++round) {
    std::vector<double> dist(nodes, inf);
    std::vector<std::size_t> prev(nodes, nodes);
    dist[src] = 0;
    for (std::size_t pass = 0; pass + 1 < nodes; ++pass) {
      bool changed = false;
      for (std::size_t a = 0; a < nodes; ++a) {
        if (dist[a] == inf) continue;
        for (std::size_t b = 0; b < nodes; ++b)
          if (cap[a * nodes + b] > tiny && dist[a] + wt[a * nodes + b] < dist[b] - 1e-15) {
            dist[b] = dist[a] + wt[a * nodes + b];
            prev[b] = a;
            changed = true;
          }
      }
      if (!changed) break;
    }
    if (dist[snk] == inf) break;
    double push = remaining;
    for (std::size_t b = snk; b != src; b = prev[b]) push = std::min(push, cap[prev[b] * nodes + b]);
    for (std::size_t b = snk; b != src; b = prev[b]) {
      const std::size_t a = prev[b];
      if (cap[a * nodes + b] != inf) cap[a * nodes + b] -= push;
      if (cap[b * nodes + a] != inf) cap[b * nodes + a] += push;
    }
    total += push * dist[snk];
    remaining -= push;
  }
  return total;
}

/// Convenience overload for tensors.
template <typename T>
double exact_ot_lp(const Tensor<T>& cost, const Tensor<T>& u, const Tensor<T>& v) {
  return exact_ot_lp(std::vector<double>(cost.vec().begin(), cost.vec().end()),
                     std::vector<double>(u.vec().begin(), u.vec().end()),
                     std::vector<double>(v.vec().begin(), v.vec().end()));
}

}  // namespace rvs

#endif  // RVS_OT_HPP
