#include <gtest/gtest.h>

#include "rvs/attacks.hpp"
#include "support.hpp"

namespace rvs {
namespace {

// logits = flatten(x) W, with W [d, k]
template <typename T>
LogitModel<T> linear_model(const Tensor<T>& w) {
  return [w](Tape<T>& tape, Var<T> x) {
    const std::size_t n = x.shape()[0];
    return matmul(reshape(x, Shape{n, x.value().size() / n}), tape.constant(w));
  };
}

// One signed-gradient step on CE for the linear model, computed by hand:
// dCE/dx_i = sum_k W_ik (softmax_k - y_k).
std::vector<double> linear_ce_step(const std::vector<double>& x, const std::vector<double>& w, std::size_t k, int y,
                                   double alpha, const std::vector<double>& x0, double eps) {
  const std::size_t d = x.size();
  std::vector<double> z(k, 0.0), p(k);
  for (std::size_t j = 0; j < k; ++j)
    for (std::size_t i = 0; i < d; ++i) z[j] += x[i] * w[i * k + j];
  double m = *std::max_element(z.begin(), z.end()), s = 0;
  for (std::size_t j = 0; j < k; ++j) s += p[j] = std::exp(z[j] - m);
  for (auto& v : p) v /= s;
  std::vector<double> out(d);
  for (std::size_t i = 0; i < d; ++i) {
    double g = 0;
    for (std::size_t j = 0; j < k; ++j) g += w[i * k + j] * (p[j] - (int(j) == y ? 1.0 : 0.0));
    const double sg = g > 0 ? 1 : (g < 0 ? -1 : 0);
    out[i] = std::clamp(std::clamp(x[i] + alpha * sg, x0[i] - eps, x0[i] + eps), 0.0, 1.0);
  }
  return out;
}

TEST(Attacks, FgsmIsBitIdenticalToOneStepPgd) {
  Rng rng(1);
  const auto w = normal_tensor<float>({48, 3}, rng);
  const auto x = uniform_tensor<float>({8, 4, 4, 3}, rng, 0, 1);
  const std::vector<int> y{0, 1, 2, 0, 1, 2, 0, 1};
  Rng r1(5), r2(5);
  const double eps = 8.0 / 255;
  const auto a = run_attack(x, y, linear_model(w), AttackSpec::fgsm(eps), r1);
  AttackSpec pgd1{AttackKind::pgd, eps, eps, 1, false};
  const auto b = run_attack(x, y, linear_model(w), pgd1, r2);
  EXPECT_EQ(a, b);
  EXPECT_NE(a, x);
}

TEST(Attacks, PgdOnLinearModelMatchesClosedForm) {
  Rng rng(2);
  const std::size_t d = 12, k = 4;
  const auto w = normal_tensor<double>({d, k}, rng);
  const auto x = uniform_tensor<double>({1, 2, 2, 3}, rng, 0, 1);
  const double eps = 0.05, alpha = 0.02;
  Rng ar(3);
  const auto adv = run_attack(x, {2}, linear_model(w), AttackSpec{AttackKind::pgd, eps, alpha, 5, false}, ar);
  std::vector<double> cur = test::values(x), wv = test::values(w);
  for (int s = 0; s < 5; ++s) cur = linear_ce_step(cur, wv, k, 2, alpha, test::values(x), eps);
  for (std::size_t i = 0; i < d; ++i) EXPECT_NEAR(adv[i], cur[i], 1e-15);
}

TEST(Attacks, ZeroBudgetLeavesInputUntouched) {
  Rng rng(4);
  const auto w = normal_tensor<float>({12, 3}, rng);
  const auto x = uniform_tensor<float>({3, 2, 2, 3}, rng, 0, 1);
  for (const auto& spec : {AttackSpec::fgsm(0), AttackSpec::pgd(7, 0), AttackSpec::cw(7, 0)}) {
    Rng r(1);
    EXPECT_EQ(run_attack(x, {0, 1, 2}, linear_model(w), spec, r), x) << spec.name();
  }
}

TEST(Attacks, EveryOutputRespectsTheBudget) {
  Rng rng(5);
  const auto w = normal_tensor<float>({48, 3}, rng);
  auto x = uniform_tensor<float>({16, 4, 4, 3}, rng, 0, 1);
  for (std::size_t i = 0; i < 40; ++i) x[i] = i % 2 ? 1.0f : 0.0f;
  std::vector<int> y(16);
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = int(i % 3);
  for (const auto& spec : {AttackSpec::fgsm(), AttackSpec::pgd(10), AttackSpec::cw(10), AttackSpec::pgd(10, 0.5, 0.1)}) {
    Rng r(2);
    const auto adv = run_attack(x, y, linear_model(w), spec, r);
    EXPECT_NO_THROW(check_budget(x, adv, spec.epsilon)) << spec.name();
  }
}

TEST(Attacks, CheckBudgetCatchesViolations) {
  const Tensor<float> x({2}, 0.5f);
  EXPECT_THROW(check_budget(x, Tensor<float>({2}, std::vector<float>{0.5f, 0.6f}), 0.05), ContractError);
  EXPECT_THROW(check_budget(Tensor<float>({1}, 1.0f), Tensor<float>({1}, 1.01f), 0.05), ContractError);
  const auto before = budget_checks().load();
  check_budget(x, x, 0.0);
  EXPECT_EQ(budget_checks().load(), before + 2);
}

TEST(Attacks, CwDescendsTheMargin) {
  Rng rng(6);
  const auto w = normal_tensor<double>({12, 3}, rng);
  const auto x = uniform_tensor<double>({6, 2, 2, 3}, rng, 0, 1);
  const std::vector<int> y{0, 1, 2, 0, 1, 2};
  auto margin = [&](const Tensor<double>& in) {
    Tape<double> t;
    return logit_margin_loss(linear_model(w)(t, t.constant(in)), y).value().item();
  };
  Rng r(1);
  const auto adv = run_attack(x, y, linear_model(w), AttackSpec::cw(20, 0.1, 0.01), r);
  EXPECT_LT(margin(adv), margin(x));
}

TEST(Attacks, MoreStepsNeverHelpTheDefenderOnALinearModel) {
  Rng rng(7);
  const auto w = normal_tensor<float>({48, 3}, rng, 0.3);
  const auto x = uniform_tensor<float>({60, 4, 4, 3}, rng, 0, 1);
  std::vector<int> y;
  {
    // labels the model gets right, so natural accuracy is 1
    Tape<float> t;
    y = argmax_rows(linear_model(w)(t, t.constant(x)).value());
  }
  auto acc = [&](const Tensor<float>& in) {
    Tape<float> t;
    const auto p = argmax_rows(linear_model(w)(t, t.constant(in)).value());
    std::size_t c = 0;
    for (std::size_t i = 0; i < p.size(); ++i) c += p[i] == y[i];
    return double(c) / double(p.size());
  };
  Rng r1(1), r2(1);
  const double a1 = acc(run_attack(x, y, linear_model(w), AttackSpec::pgd(1, 0.1, 0.02), r1));
  const double a20 = acc(run_attack(x, y, linear_model(w), AttackSpec::pgd(20, 0.1, 0.02), r2));
  EXPECT_EQ(acc(x), 1.0);
  EXPECT_LE(a20, a1);
  EXPECT_LT(a20, 1.0);
}

TEST(AttackSpec, NamesParsingAndValidation) {
  EXPECT_EQ(AttackSpec::pgd(20).name(), "pgd-20");
  EXPECT_EQ(AttackSpec::cw(100).name(), "cw-100");
  EXPECT_EQ(AttackSpec::fgsm().name(), "fgsm");
  EXPECT_EQ(parse_attack_kind("cw"), AttackKind::cw_margin);
  EXPECT_THROW(parse_attack_kind("deepfool"), ConfigError);
  EXPECT_THROW(AttackSpec::pgd(0).validate(), ConfigError);
  EXPECT_THROW(AttackSpec::pgd(3, 0.1, 0).validate(), ConfigError);
  AttackSpec f = AttackSpec::fgsm();
  f.steps = 2;
  EXPECT_THROW(f.validate(), ConfigError);
}

TEST(EvaluateAccuracy, EmptyDatasetRejected) {
  Rng rng(8);
  ClassifierConfig cfg;
  cfg.conv_blocks = {{4, 1}};
  cfg.latent_dim = 4;
  cfg.num_classes = 2;
  cfg.in_h = cfg.in_w = 4;
  const auto clf = Classifier<float>::create(cfg, rng);
  EXPECT_THROW(evaluate_accuracy(Dataset{}, clf, std::nullopt), InputError);
}

}  // namespace
}  // namespace rvs
