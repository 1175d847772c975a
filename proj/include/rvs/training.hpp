#ifndef RVS_TRAINING_HPP
#define RVS_TRAINING_HPP

#include <chrono>
#include <cmath>
#include <functional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "rvs/attacks.hpp"
#include "rvs/data.hpp"
#include "rvs/nets.hpp"
#include "rvs/ot.hpp"

namespace rvs {

/// The three loss configurations of the ablation study.
enum class Variant {
  noreg_ot,    // generator ascends D, classifier minimises CE only
  otreg_xent,  // generator ascends CE, classifier minimises CE + D
  otreg_ot,    // generator ascends D, classifier minimises CE + D (the full method)
};

inline std::string to_string(Variant v) {
  switch (v) {
    case Variant::noreg_ot: return "noReg+OT";
    case Variant::otreg_xent: return "OT-Reg+Xent";
    case Variant::otreg_ot: return "OT-Reg+OT";
  }
  return "?";
}

inline Variant parse_variant(const std::string& s) {
  for (Variant v : {Variant::noreg_ot, Variant::otreg_xent, Variant::otreg_ot})
    if (s == to_string(v)) return v;
  throw ConfigError("unknown variant '" + s + "' (expected noReg+OT, OT-Reg+Xent or OT-Reg+OT)");
}

/// How the classifier sees adversarial data. `synthesis` is the generator
/// scheme; `natural` and `pgd_at` train reference models (clean data, and
/// PGD adversarial training) used as baselines and transfer surrogates.
enum class Method { synthesis, natural, pgd_at };

inline std::string to_string(Method m) {
  switch (m) {
    case Method::synthesis: return "synthesis";
    case Method::natural: return "natural";
    case Method::pgd_at: return "pgd_at";
  }
  return "?";
}

inline Method parse_method(const std::string& s) {
  for (Method m : {Method::synthesis, Method::natural, Method::pgd_at})
    if (s == to_string(m)) return m;
  throw ConfigError("unknown training method '" + s + "' (expected synthesis, natural or pgd_at)");
}

struct TrainConfig {
  int epochs = 1;
  std::size_t batch_size = 64;
  double epsilon = 8.0 / 255.0;
  double lr_classifier = 0.1;
  double lr_generator = 0.01;
  double lr_decay = 0.1;
  // classifier LR transitions as fractions of the total step count
  std::vector<double> lr_transitions{60.0 / 179.0, 90.0 / 179.0};
  double momentum = 0.9;
  double weight_decay = 0.0;
  double label_smoothing = 0.5;
  double sinkhorn_reg = 0.01;
  int sinkhorn_iters = 100;
  SinkhornGradient sinkhorn_gradient = SinkhornGradient::unrolled;
  Variant variant = Variant::otreg_ot;
  Method method = Method::synthesis;
  bool augment = false;
  AttackSpec train_attack = AttackSpec::pgd(10);  // used by Method::pgd_at
  std::uint64_t seed = 0;

  void validate() const {
    if (epochs < 0) throw ConfigError("train.epochs must be >= 0");
    if (batch_size < 2) throw ConfigError("train.batch_size must be >= 2");
    if (!(epsilon >= 0)) throw ConfigError("train.epsilon must be >= 0");
    if (!(lr_classifier > 0)) throw ConfigError("train.lr_classifier must be > 0");
    if (!(lr_generator > 0)) throw ConfigError("train.lr_generator must be > 0");
    if (!(lr_decay > 0)) throw ConfigError("train.lr_decay must be > 0");
    for (double f : lr_transitions)
      if (!(f >= 0 && f <= 1)) throw ConfigError("train.lr_transitions entries must be in [0,1]");
    if (!(momentum >= 0 && momentum < 1)) throw ConfigError("train.momentum must be in [0,1)");
    if (!(weight_decay >= 0)) throw ConfigError("train.weight_decay must be >= 0");
    if (!(label_smoothing >= 0 && label_smoothing < 1))
      throw ConfigError("train.label_smoothing must be in [0,1)");
    if (!(sinkhorn_reg > 0)) throw ConfigError("train.sinkhorn_reg must be > 0");
    if (sinkhorn_iters < 1) throw ConfigError("train.sinkhorn_iters must be >= 1");
    if (method == Method::pgd_at) train_attack.validate();
  }
};

struct IterationRecord {
  std::int64_t step = 0;
  double ce_loss = 0;
  double ot_distance = 0;
  double lr_classifier = 0;
  double lr_generator = 0;
  std::int64_t wallclock_ms = 0;
};

/// Classifier LR after `step` of `total_steps` (decayed once per transition passed)
/// and the constant generator LR.
inline std::pair<double, double> lr_schedule(std::int64_t step, const TrainConfig& cfg,
                                             std::int64_t total_steps) {
  if (step < 0) throw ConfigError("lr_schedule: step must be >= 0");
  double lr = cfg.lr_classifier;
  for (double f : cfg.lr_transitions)
    if (step >= static_cast<std::int64_t>(std::llround(f * double(total_steps)))) lr *= cfg.lr_decay;
  return {lr, cfg.lr_generator};
}

/// (1 - w) * onehot + w / C.
template <typename T>
Tensor<T> smooth_labels(const Tensor<T>& onehot, double w) {
  if (!(w >= 0 && w < 1)) throw ConfigError("label smoothing weight must be in [0,1)");
  if (onehot.rank() != 2) throw DimensionError("smooth_labels: expected [n, C], got " + shape_str(onehot.shape()));
  const T c = T(onehot.dim(1));
  Tensor<T> out(onehot.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = T(1 - w) * onehot[i] + T(w) / c;
  return out;
}

/// Everything the training loop mutates.
struct TrainState {
  Classifier<float> clf;
  Generator<float> gen;
  Rng rng;
  std::int64_t step = 0;
};

inline TrainState init_state(const ClassifierConfig& cc, const GeneratorConfig& gc, std::uint64_t seed) {
  validate_pair(gc, cc);
  Rng init(mix_seed(seed, 0x1417));
  auto clf = Classifier<float>::create(cc, init);
  auto gen = Generator<float>::create(gc, init);
  return TrainState{std::move(clf), std::move(gen), Rng(mix_seed(seed, 0x5eed)), 0};
}

/// Phases of one synthesis step, reported in execution order.
enum class StepPhase { sample_z, generator_update, regenerate, classifier_update };
using StepObserver = std::function<void(StepPhase)>;

/// Thrown when a loss turns NaN/Inf; the message carries the offending step's numbers.
struct TrainingDiverged : std::runtime_error {
  using std::runtime_error::runtime_error;
};

namespace detail {

template <typename T>
GradMap<T> negated(GradMap<T> g) {
  for (auto& [k, t] : g)
    for (auto& v : t.data()) v = -v;
  return g;
}

template <typename T>
void add_weight_decay(GradMap<T>& g, const ParamStore<T>& store, double wd) {
  if (wd == 0) return;
  for (auto& [k, t] : g) {
    const auto& v = store.value(k);
    for (std::size_t i = 0; i < t.size(); ++i) t[i] += T(wd) * v[i];
  }
}

inline void check_finite(double v, const char* what, std::int64_t step, double ce, double ot) {
  if (std::isfinite(v)) return;
  std::ostringstream os;
  os << "non-finite " << what << " at step " << step << " (ce_loss=" << ce << ", ot_distance=" << ot
     << "); aborting";
  throw TrainingDiverged(os.str());
}

// In-loop budget assertion: the perturbation and the adversarial image must
// both respect the ball and the pixel domain exactly.
inline void assert_budget(const Tensor<float>& x, const Tensor<float>& delta, const Tensor<float>& adv,
                          double eps) {
  const float e = float(eps);
  for (std::size_t i = 0; i < delta.size(); ++i)
    if (!(std::abs(delta[i]) <= e))
      throw ContractError("budget violation: |delta| > eps at index " + std::to_string(i));
  check_budget(x, adv, eps);
}

}  // namespace detail

/// One iteration of the chosen training method on a full batch.
///
/// For Method::synthesis this is, in order: draw z; build x_adv from
/// clip(G(z)); one momentum ascent step of the generator on D (or on CE for
/// OT-Reg+Xent); rebuild x_adv from the same z with the updated generator;
/// one momentum descent step of the classifier on CE(x_adv) + D (CE only for
/// noReg+OT). Natural and adversarial latents come from one shared train-mode
/// forward over [x; x_adv].
inline IterationRecord train_step(const Batch& batch, TrainState& st, const TrainConfig& cfg, double lr_c,
                                  double lr_g, const StepObserver& observe = {}) {
  if (batch.y.size() != cfg.batch_size)
    throw InputError("train_step: batch has " + std::to_string(batch.y.size()) + " samples, config expects " +
                     std::to_string(cfg.batch_size));
  auto note = [&](StepPhase p) {
    if (observe) observe(p);
  };
  const std::size_t n = batch.y.size();
  const int classes = st.clf.cfg.num_classes;
  const Tensor<float> targets = smooth_labels(one_hot<float>(batch.y, classes), cfg.label_smoothing);
  const PerturbationBudget budget{cfg.epsilon, 0.0, 1.0};
  const SinkhornOptions sk{cfg.sinkhorn_reg, cfg.sinkhorn_iters, cfg.sinkhorn_gradient};
  const float mom = float(cfg.momentum);
  IterationRecord rec;
  rec.step = st.step;
  rec.lr_classifier = lr_c;
  rec.lr_generator = lr_g;

  auto classifier_descent = [&](Tape<float>& tape, const BoundParams<float>& cp, Var<float> loss) {
    tape.backward(loss);
    GradMap<float> g = collect_grads(tape, cp);
    detail::add_weight_decay(g, st.clf.params, cfg.weight_decay);
    momentum_step(st.clf.params, g, float(lr_c), mom);
  };

  if (cfg.method == Method::natural || cfg.method == Method::pgd_at) {
    Tensor<float> x = batch.x;
    if (cfg.method == Method::pgd_at) {
      // attack the current weights with batch statistics, without touching the running moments
      LogitModel<float> live = [&](Tape<float>& t, Var<float> in) {
        auto p = bind(t, st.clf.params, false);
        return st.clf.forward(p, in, BnMode::train).logits;
      };
      AttackSpec spec = cfg.train_attack;
      spec.epsilon = cfg.epsilon;
      x = run_attack(batch.x, batch.y, live, spec, st.rng);
      check_budget(batch.x, x, cfg.epsilon);
    }
    Tape<float> tape;
    auto cp = bind(tape, st.clf.params, true);
    auto out = st.clf.forward(cp, tape.constant(x), BnMode::train, &st.clf.bn);
    Var<float> ce = softmax_cross_entropy(out.logits, targets);
    rec.ce_loss = ce.value().item();
    detail::check_finite(rec.ce_loss, "classifier loss", st.step, rec.ce_loss, 0);
    classifier_descent(tape, cp, ce);
    ++st.step;
    return rec;
  }

  // (a) one z per batch, shared by both updates
  note(StepPhase::sample_z);
  const Tensor<float> z = normal_tensor<float>(Shape{n, std::size_t(st.gen.cfg.z_dim)}, st.rng);

  // (b)+(c) generator ascent with the classifier held fixed
  {
    Tape<float> tape;
    auto gp = bind(tape, st.gen.params, true);
    auto cp = bind(tape, st.clf.params, false);
    Var<float> x = tape.constant(batch.x);
    Var<float> delta = generate_perturbation(st.gen, gp, tape.constant(z), budget, BnMode::train);
    Var<float> adv = apply_perturbation(x, delta, budget);
    detail::assert_budget(batch.x, delta.value(), adv.value(), cfg.epsilon);
    auto out = st.clf.forward(cp, concat_rows(x, adv), BnMode::train);
    Var<float> objective;
    if (cfg.variant == Variant::otreg_xent) {
      objective = softmax_cross_entropy(slice_rows(out.logits, n, 2 * n), targets);
    } else {
      Var<float> cost = cost_matrix(slice_rows(out.latent, 0, n), slice_rows(out.latent, n, 2 * n));
      objective = sinkhorn_distance(cost, sk).distance;
    }
    detail::check_finite(objective.value().item(), "generator objective", st.step, 0, 0);
    tape.backward(objective);
    note(StepPhase::generator_update);
    momentum_step(st.gen.params, detail::negated(collect_grads(tape, gp)), float(lr_g), mom);
  }

  // (d)+(e) regenerate with the updated generator and the same z, then descend
  {
    Tape<float> tape;
    auto gp = bind(tape, st.gen.params, false);
    auto cp = bind(tape, st.clf.params, true);
    Var<float> x = tape.constant(batch.x);
    note(StepPhase::regenerate);
    Var<float> delta = generate_perturbation(st.gen, gp, tape.constant(z), budget, BnMode::train, &st.gen.bn);
    Var<float> adv = apply_perturbation(x, delta, budget);
    detail::assert_budget(batch.x, delta.value(), adv.value(), cfg.epsilon);
    auto out = st.clf.forward(cp, concat_rows(x, adv), BnMode::train, &st.clf.bn);
    Var<float> ce = softmax_cross_entropy(slice_rows(out.logits, n, 2 * n), targets);
    Var<float> cost = cost_matrix(slice_rows(out.latent, 0, n), slice_rows(out.latent, n, 2 * n));
    Var<float> dist = sinkhorn_distance(cost, sk).distance;
    rec.ce_loss = ce.value().item();
    rec.ot_distance = dist.value().item();
    detail::check_finite(rec.ce_loss, "classifier cross-entropy", st.step, rec.ce_loss, rec.ot_distance);
    detail::check_finite(rec.ot_distance, "OT distance", st.step, rec.ce_loss, rec.ot_distance);
    Var<float> loss = cfg.variant == Variant::noreg_ot ? ce : add(ce, dist);
    note(StepPhase::classifier_update);
    classifier_descent(tape, cp, loss);
  }
  ++st.step;
  return rec;
}

/// Batch `index` of `epoch` (drop-last, seed-derived permutation), augmented if configured.
inline Batch training_batch(const Dataset& data, const TrainConfig& cfg, std::int64_t epoch, std::size_t index,
                            Rng& rng) {
  const auto batches = batch_iterator(data.size(), cfg.batch_size, cfg.seed, std::uint64_t(epoch), true);
  Batch b = gather(data, batches.at(index));
  if (cfg.augment) b.x = augment(b.x, rng);
  return b;
}

inline std::int64_t steps_per_epoch(const Dataset& data, const TrainConfig& cfg) {
  if (cfg.batch_size > data.size())
    throw ConfigError("train.batch_size " + std::to_string(cfg.batch_size) + " exceeds dataset size " +
                      std::to_string(data.size()));
  return std::int64_t(data.size() / cfg.batch_size);
}

}  // namespace rvs

#endif  // RVS_TRAINING_HPP
