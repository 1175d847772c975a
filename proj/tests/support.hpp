#ifndef RVS_TEST_SUPPORT_HPP
#define RVS_TEST_SUPPORT_HPP

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "rvs/ops.hpp"
#include "rvs/random.hpp"
#include "rvs/tape.hpp"

namespace rvs::test {

using Builder = std::function<Var<double>(Tape<double>&, const std::vector<Var<double>>&)>;

/// Normwise relative error between the tape gradient and central differences
/// of L = sum(w * f(inputs)) for a fixed random w, maximised over inputs.
inline double gradient_error(const std::vector<Tensor<double>>& inputs, const Builder& f, Rng& rng,
                             double h = 1e-5) {
  Tensor<double> w;
  auto loss_of = [&](const std::vector<Tensor<double>>& in, std::vector<Tensor<double>>* grads) {
    Tape<double> tape;
    std::vector<Var<double>> vars;
    for (const auto& t : in) vars.push_back(tape.variable(t));
    Var<double> out = f(tape, vars);
    if (w.empty()) w = normal_tensor<double>(out.shape(), rng);
    double l = 0;
    for (std::size_t i = 0; i < out.value().size(); ++i) l += w[i] * out.value()[i];
    if (grads) {
      Var<double> loss = dot(out, tape.constant(w));
      tape.backward(loss);
      for (const auto& v : vars) grads->push_back(tape.grad(v));
    }
    return l;
  };
  std::vector<Tensor<double>> analytic;
  loss_of(inputs, &analytic);
  double worst = 0;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    std::vector<Tensor<double>> probe = inputs;
    double diff = 0, scale = 0;
    for (std::size_t i = 0; i < inputs[k].size(); ++i) {
      probe[k][i] = inputs[k][i] + h;
      const double up = loss_of(probe, nullptr);
      probe[k][i] = inputs[k][i] - h;
      const double down = loss_of(probe, nullptr);
      probe[k][i] = inputs[k][i];
      const double num = (up - down) / (2 * h);
      diff = std::max(diff, std::abs(num - analytic[k][i]));
      scale = std::max({scale, std::abs(num), std::abs(analytic[k][i])});
    }
    if (scale > 0) worst = std::max(worst, diff / scale);
  }
  return worst;
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path temp_dir(const std::string& tag) {
  static std::mt19937_64 gen(std::random_device{}());
  auto p = std::filesystem::temp_directory_path() / ("rvs-" + tag + "-" + std::to_string(gen()));
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

inline Tensor<double> tensor(Shape s, std::vector<double> v) { return Tensor<double>(std::move(s), v); }

template <typename T>
std::vector<T> values(const Tensor<T>& t) {
  return {t.data().begin(), t.data().end()};
}

template <typename T>
double max_diff(const Tensor<T>& a, const Tensor<T>& b) {
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(double(a[i]) - double(b[i])));
  return m;
}

}  // namespace rvs::test

#endif  // RVS_TEST_SUPPORT_HPP
