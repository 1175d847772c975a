#include <gtest/gtest.h>

#include "gradcheck_suite.hpp"

namespace rvs::test {
namespace {

TEST(GradCheck, EveryOpMatchesCentralDifferences) {
  for (const auto& r : run_gradcheck(20, 11)) EXPECT_LT(r.worst, 1e-6) << r.name;
}

TEST(GradCheck, GeneratorClassifierSinkhornWrtGeneratorParams) {
  EXPECT_LT(composite_phi_error(3), 1e-3);
}

TEST(GradCheck, DetectsAWrongGradient) {
  // a deliberately broken op: forward x^2, backward claims 3x
  Rng rng(5);
  const Builder bad = [](Tape<double>& tape, const std::vector<Var<double>>& v) {
    const auto& x = v[0].value();
    Tensor<double> y(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] * x[i];
    const Var<double> in = v[0];
    return tape.record(std::move(y), {in}, [in](Tape<double>& t, const Tensor<double>& g) {
      auto& gx = t.grad_buffer(in.id());
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += 3 * in.value()[i] * g[i];
    });
  };
  EXPECT_GT(gradient_error({normal_tensor<double>({4}, rng)}, bad, rng), 0.1);
}

}  // namespace
}  // namespace rvs::test
