#ifndef RVS_ATTACKS_HPP
#define RVS_ATTACKS_HPP

#include <atomic>
#include <functional>
#include <optional>
#include <string>

#include "rvs/data.hpp"
#include "rvs/nets.hpp"

namespace rvs {

enum class AttackKind { fgsm, pgd, cw_margin };

inline std::string to_string(AttackKind k) {
  switch (k) {
    case AttackKind::fgsm: return "fgsm";
    case AttackKind::pgd: return "pgd";
    case AttackKind::cw_margin: return "cw";
  }
  return "?";
}

inline AttackKind parse_attack_kind(const std::string& s) {
  if (s == "fgsm") return AttackKind::fgsm;
  if (s == "pgd") return AttackKind::pgd;
  if (s == "cw" || s == "cw_margin") return AttackKind::cw_margin;
  throw ConfigError("unknown attack kind '" + s + "'");
}

/// An l-infinity attack configuration. The default is PGD-20 with eps 8/255, step 2/255.
struct AttackSpec {
  AttackKind kind = AttackKind::pgd;
  double epsilon = 8.0 / 255.0;
  double alpha = 2.0 / 255.0;
  int steps = 20;
  bool random_init = true;

  void validate() const {
    if (steps < 1) throw ConfigError("attack: steps must be >= 1");
    if (kind != AttackKind::fgsm && !(alpha > 0)) throw ConfigError("attack: alpha must be > 0");
    if (!(epsilon >= 0)) throw ConfigError("attack: epsilon must be >= 0");
    if (kind == AttackKind::fgsm && steps != 1) throw ConfigError("attack: fgsm takes exactly one step");
  }

  /// Display name, e.g. "pgd-20", "cw-100", "fgsm".
  std::string name() const {
    return kind == AttackKind::fgsm ? "fgsm" : to_string(kind) + "-" + std::to_string(steps);
  }

  static AttackSpec fgsm(double eps = 8.0 / 255.0) { return {AttackKind::fgsm, eps, eps, 1, false}; }
  static AttackSpec pgd(int steps, double eps = 8.0 / 255.0, double alpha = 2.0 / 255.0) {
    return {AttackKind::pgd, eps, alpha, steps, true};
  }
  static AttackSpec cw(int steps, double eps = 8.0 / 255.0, double alpha = 2.0 / 255.0) {
    return {AttackKind::cw_margin, eps, alpha, steps, true};
  }
};

/// Anything that maps an input batch on a tape to logits.
template <typename T>
using LogitModel = std::function<Var<T>(Tape<T>&, Var<T>)>;

/// Eval-mode logits of a classifier with its parameters held constant.
template <typename T>
LogitModel<T> frozen(const Classifier<T>& clf) {
  return [&clf](Tape<T>& tape, Var<T> x) {
    auto p = bind(tape, clf.params, false);
    return clf.forward(p, x, BnMode::eval).logits;
  };
}

namespace detail {

template <typename T>
T sign(T v) {
  return v > T(0) ? T(1) : (v < T(0) ? T(-1) : T(0));
}

template <typename T>
Tensor<T> attack_core(const Tensor<T>& x, const std::vector<int>& labels, const LogitModel<T>& model,
                      AttackKind kind, double eps, double alpha, int steps, bool random_init, Rng& rng) {
  const PerturbationBudget budget{eps, 0.0, 1.0};
  Tensor<T> xt = x;
  if (random_init && eps > 0) xt = project_to_ball(x, [&] {
      Tensor<T> c = uniform_tensor<T>(x.shape(), rng, -eps, eps);
      for (std::size_t i = 0; i < c.size(); ++i) c[i] += x[i];
      return c;
    }(), budget);
  for (int s = 0; s < steps; ++s) {
    Tape<T> tape;
    Var<T> xv = tape.variable(xt);
    Var<T> logits = model(tape, xv);
    T direction = T(1);
    Var<T> loss;
    if (kind == AttackKind::cw_margin) {
      loss = logit_margin_loss(logits, labels);
      direction = T(-1);
    } else {
      loss = softmax_cross_entropy(logits, one_hot<T>(labels, static_cast<int>(logits.shape()[1])));
    }
    tape.backward(loss);
    const Tensor<T> g = tape.grad(xv);
    Tensor<T> cand = xt;
    for (std::size_t i = 0; i < cand.size(); ++i) cand[i] += T(alpha) * direction * sign(g[i]);
    xt = project_to_ball(x, cand, budget);
  }
  return xt;
}

}  // namespace detail

/// Iterated signed-gradient ascent on cross-entropy, projected onto the
/// eps-ball around x and the [0,1] pixel domain after every step.
template <typename T>
Tensor<T> pgd_attack(const Tensor<T>& x, const std::vector<int>& labels, const LogitModel<T>& model,
                     const AttackSpec& spec, Rng& rng) {
  spec.validate();
  return detail::attack_core(x, labels, model, AttackKind::pgd, spec.epsilon, spec.alpha, spec.steps,
                             spec.random_init, rng);
}

/// x + eps * sign(grad) in one step, no random start.
template <typename T>
Tensor<T> fgsm_attack(const Tensor<T>& x, const std::vector<int>& labels, const LogitModel<T>& model,
                      const AttackSpec& spec, Rng& rng) {
  spec.validate();
  return detail::attack_core(x, labels, model, AttackKind::pgd, spec.epsilon, spec.epsilon, 1, false, rng);
}

/// PGD that descends the logit margin max(0, Z_y - max_{j!=y} Z_j).
template <typename T>
Tensor<T> cw_margin_attack(const Tensor<T>& x, const std::vector<int>& labels, const LogitModel<T>& model,
                           const AttackSpec& spec, Rng& rng) {
  spec.validate();
  return detail::attack_core(x, labels, model, AttackKind::cw_margin, spec.epsilon, spec.alpha, spec.steps,
                             spec.random_init, rng);
}

template <typename T>
Tensor<T> run_attack(const Tensor<T>& x, const std::vector<int>& labels, const LogitModel<T>& model,
                     const AttackSpec& spec, Rng& rng) {
  switch (spec.kind) {
    case AttackKind::fgsm: return fgsm_attack(x, labels, model, spec, rng);
    case AttackKind::pgd: return pgd_attack(x, labels, model, spec, rng);
    case AttackKind::cw_margin: return cw_margin_attack(x, labels, model, spec, rng);
  }
  throw ConfigError("unknown attack kind");
}

/// Number of pixels verified by check_budget since process start.
inline std::atomic<std::uint64_t>& budget_checks() {
  static std::atomic<std::uint64_t> n{0};
  return n;
}

/// Throws if any pixel of `adv` leaves the eps-ball around `x` or the [0,1] domain.
template <typename T>
void check_budget(const Tensor<T>& x, const Tensor<T>& adv, double eps) {
  require_same_shape(x.shape(), adv.shape(), "check_budget");
  budget_checks() += x.size();
  const T e = T(eps);
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!(adv[i] >= T(0) && adv[i] <= T(1)))
      throw ContractError("budget violation: pixel " + std::to_string(i) + " outside [0,1]");
    if (std::abs(adv[i] - x[i]) > e)
      throw ContractError("budget violation: |adv - x| > eps at pixel " + std::to_string(i));
  }
}

struct EvalOptions {
  std::size_t batch_size = 200;
  std::uint64_t seed = 0;
};

/// Applies `spec` (or nothing) batch by batch; calls `sink` with each
/// adversarial batch and the model's predictions on it.
template <typename Sink>
void attack_dataset(const Dataset& data, const Classifier<float>& model, const std::optional<AttackSpec>& spec,
                    const EvalOptions& opt, const LogitModel<float>& attack_model, Sink&& sink) {
  Rng rng(mix_seed(opt.seed, 0xa77ac));
  for (std::size_t b = 0; b < data.size(); b += opt.batch_size) {
    std::vector<std::size_t> idx;
    for (std::size_t i = b; i < std::min(data.size(), b + opt.batch_size); ++i) idx.push_back(i);
    Batch batch = gather(data, idx);
    Tensor<float> adv = batch.x;
    if (spec) {
      adv = run_attack(batch.x, batch.y, attack_model, *spec, rng);
      check_budget(batch.x, adv, spec->epsilon);
    }
    auto [latent, logits] = model.classify(adv);
    sink(batch, adv, argmax_rows(logits));
  }
}

/// Fraction of samples classified correctly after the attack (natural accuracy for no spec).
inline double evaluate_accuracy(const Dataset& data, const Classifier<float>& model,
                                const std::optional<AttackSpec>& spec, const EvalOptions& opt = {}) {
  if (data.size() == 0) throw InputError("evaluate_accuracy: empty dataset");
  std::size_t correct = 0;
  attack_dataset(data, model, spec, opt, frozen(model),
                 [&](const Batch& batch, const Tensor<float>&, const std::vector<int>& pred) {
                   for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == batch.y[i];
                 });
  return double(correct) / double(data.size());
}

}  // namespace rvs

#endif  // RVS_ATTACKS_HPP
