#ifndef RVS_EVAL_HPP
#define RVS_EVAL_HPP

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ctime>
#include <filesystem>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "rvs/attacks.hpp"
#include "rvs/checkpoint.hpp"
#include "rvs/run.hpp"

namespace rvs {

/// Natural accuracy plus one accuracy per attack, in request order.
struct EvalReport {
  std::string model_id;
  std::uint64_t config_hash = 0;
  std::string timestamp;
  double natural = 0;
  std::vector<std::pair<std::string, double>> attacks;

  std::optional<double> accuracy(const std::string& attack) const {
    for (const auto& [name, acc] : attacks)
      if (name == attack) return acc;
    return std::nullopt;
  }
};

inline std::string utc_timestamp() {
  const std::time_t t = std::time(nullptr);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
  return buf;
}

/// A classifier together with the identity of the checkpoint it came from.
struct Model {
  std::string id;
  std::uint64_t config_hash = 0;
  std::int64_t step = 0;
  double epsilon = 8.0 / 255.0;  // training budget, used for synthesized perturbations
  Classifier<float> clf;
  Generator<float> gen;
};

inline Model load_model(const std::filesystem::path& path) {
  const Checkpoint c = load_checkpoint(path);
  TrainState st = restore_state(c);
  return {path.string(), c.config_hash, c.step, checkpoint_config(c).train.epsilon, std::move(st.clf),
          std::move(st.gen)};
}

inline Model model_from_state(const std::string& id, const RunConfig& cfg, const TrainState& st) {
  return {id, config_hash(cfg), st.step, cfg.train.epsilon, st.clf, st.gen};
}

namespace detail {

inline void require_compatible(const Classifier<float>& a, const Classifier<float>& b) {
  const auto& x = a.cfg;
  const auto& y = b.cfg;
  if (x.in_h != y.in_h || x.in_w != y.in_w || x.in_c != y.in_c || x.num_classes != y.num_classes)
    throw DimensionError("surrogate and target disagree on input shape or class count");
}

inline void require_matches(const Dataset& d, const Classifier<float>& m) {
  const Shape& s = d.images.shape();
  if (s[1] != std::size_t(m.cfg.in_h) || s[2] != std::size_t(m.cfg.in_w) || s[3] != std::size_t(m.cfg.in_c))
    throw DimensionError("dataset images " + shape_str(s) + " do not match the classifier input");
  if (d.num_classes != m.cfg.num_classes)
    throw DimensionError("dataset has " + std::to_string(d.num_classes) + " classes, model expects " +
                         std::to_string(m.cfg.num_classes));
}

inline double transfer_accuracy(const Dataset& data, const Classifier<float>& target,
                                const Classifier<float>& surrogate, const std::optional<AttackSpec>& spec,
                                const EvalOptions& opt) {
  std::size_t correct = 0;
  attack_dataset(data, target, spec, opt, frozen(surrogate),
                 [&](const Batch& batch, const Tensor<float>&, const std::vector<int>& pred) {
                   for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == batch.y[i];
                 });
  return double(correct) / double(data.size());
}

}  // namespace detail

/// White-box accuracies over the full dataset with a fixed attack seed.
inline EvalReport whitebox_grid(const Model& m, const Dataset& data, const std::vector<AttackSpec>& specs,
                                const EvalOptions& opt = {}) {
  detail::require_matches(data, m.clf);
  EvalReport r{m.id, m.config_hash, utc_timestamp(), 0, {}};
  r.natural = evaluate_accuracy(data, m.clf, std::nullopt, opt);
  for (const auto& s : specs) r.attacks.emplace_back(s.name(), evaluate_accuracy(data, m.clf, s, opt));
  return r;
}

/// Adversarial examples crafted on `surrogate`, scored on `target`.
inline EvalReport blackbox_transfer(const Model& target, const Model& surrogate, const Dataset& data,
                                    const std::vector<AttackSpec>& specs, const EvalOptions& opt = {}) {
  detail::require_compatible(target.clf, surrogate.clf);
  detail::require_matches(data, target.clf);
  EvalReport r{target.id + " <- " + surrogate.id, target.config_hash, utc_timestamp(), 0, {}};
  r.natural = evaluate_accuracy(data, target.clf, std::nullopt, opt);
  for (const auto& s : specs)
    r.attacks.emplace_back(s.name(), detail::transfer_accuracy(data, target.clf, surrogate.clf, s, opt));
  return r;
}

struct SweepPoint {
  double epsilon;
  double accuracy;
};

/// PGD accuracy at each budget; `base` supplies kind, steps and step size.
inline std::vector<SweepPoint> budget_sweep(const Model& m, const Dataset& data, const std::vector<double>& epsilons,
                                            const AttackSpec& base = AttackSpec::pgd(20), const EvalOptions& opt = {}) {
  if (!std::is_sorted(epsilons.begin(), epsilons.end()))
    throw InputError("budget_sweep: epsilons must be sorted ascending");
  detail::require_matches(data, m.clf);
  std::vector<SweepPoint> curve;
  for (double e : epsilons) {
    AttackSpec s = base;
    s.epsilon = e;
    curve.push_back({e, evaluate_accuracy(data, m.clf, s, opt)});
  }
  return curve;
}

/// Parses "lo:hi:step" in units of 1/255, e.g. "0:20:2" gives 11 budgets.
inline std::vector<double> parse_sweep(const std::string& text) {
  std::vector<std::string> parts;
  std::size_t start = 0;
  for (std::size_t i = 0; i <= text.size(); ++i)
    if (i == text.size() || text[i] == ':') {
      parts.push_back(text.substr(start, i - start));
      start = i + 1;
    }
  if (parts.size() != 3) throw ConfigError("sweep must be lo:hi:step, got '" + text + "'");
  const auto lo = parse_int(parts[0]), hi = parse_int(parts[1]), step = parse_int(parts[2]);
  if (lo < 0 || hi < lo || step < 1) throw ConfigError("sweep needs 0 <= lo <= hi and step >= 1");
  std::vector<double> eps;
  for (auto v = lo; v <= hi; v += step) eps.push_back(double(v) / 255.0);
  return eps;
}

// ---------------------------------------------------------------------------
// Diversity of synthesized perturbations.

struct DiversityPoint {
  std::int64_t step;
  double mean;  // mean distance over all (image, z) pairs
  double std;   // per-image std of the k distances, averaged over images
};

struct DiversityOptions {
  int k = 32;
  std::size_t subset = 256;
  std::uint64_t seed = 0;
  bool pin_z = false;  // reuse one z for all k draws (degenerate check)
  std::size_t images_per_batch = 8;
};

/// Seed-derived, sorted subset of at most `n` dataset indices.
inline std::vector<std::size_t> diversity_subset(std::size_t size, std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> idx(size);
  for (std::size_t i = 0; i < size; ++i) idx[i] = i;
  if (n >= size) return idx;
  Rng rng(mix_seed(seed, 0xd17e));
  std::shuffle(idx.begin(), idx.end(), rng);
  idx.resize(n);
  std::sort(idx.begin(), idx.end());
  return idx;
}

namespace detail {

inline void l2_normalize_rows(Tensor<float>& t) {
  const std::size_t n = t.shape()[0], d = t.shape()[1];
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0;
    for (std::size_t j = 0; j < d; ++j) s += double(t[i * d + j]) * t[i * d + j];
    const double inv = s > 0 ? 1.0 / std::sqrt(s) : 0.0;
    for (std::size_t j = 0; j < d; ++j) t[i * d + j] = float(t[i * d + j] * inv);
  }
}

}  // namespace detail

/// For every image of the subset, k perturbations from k random z; records the
/// Euclidean distances between the L2-normalised latents of the natural image
/// and each adversarial copy. The z draws depend only on the seed, so every
/// checkpoint sees the same latent vectors.
inline DiversityPoint diversity_at(const Model& m, const Dataset& data, const DiversityOptions& opt) {
  if (opt.k < 2) throw ConfigError("diversity: k must be >= 2");
  detail::require_matches(data, m.clf);
  const auto idx = diversity_subset(data.size(), opt.subset, opt.seed);
  const std::size_t k = std::size_t(opt.k), zd = std::size_t(m.gen.cfg.z_dim);
  const PerturbationBudget b{m.epsilon, 0.0, 1.0};
  Rng rng(mix_seed(opt.seed, 0x2d1));
  double sum = 0, std_sum = 0;
  std::size_t count = 0;
  for (std::size_t start = 0; start < idx.size(); start += opt.images_per_batch) {
    const std::size_t stop = std::min(idx.size(), start + opt.images_per_batch), nb = stop - start;
    const Batch nat = gather(data, std::vector<std::size_t>(idx.begin() + std::ptrdiff_t(start), idx.begin() + std::ptrdiff_t(stop)));
    Tensor<float> z(Shape{nb * k, zd}, uninitialized);
    if (opt.pin_z) {
      const Tensor<float> one = normal_tensor<float>(Shape{1, zd}, rng);
      for (std::size_t r = 0; r < nb * k; ++r) std::copy_n(one.raw(), zd, z.raw() + r * zd);
    } else {
      z = normal_tensor<float>(Shape{nb * k, zd}, rng);
    }
    const Tensor<float> delta = generate_perturbation(m.gen, z, b);
    const std::size_t vol = nat.x.size() / nb;
    Tensor<float> x_rep(Shape{nb * k, nat.x.shape()[1], nat.x.shape()[2], nat.x.shape()[3]}, uninitialized);
    for (std::size_t i = 0; i < nb; ++i)
      for (std::size_t j = 0; j < k; ++j) std::copy_n(nat.x.raw() + i * vol, vol, x_rep.raw() + (i * k + j) * vol);
    const Tensor<float> adv = apply_perturbation(x_rep, delta, b);
    check_budget(x_rep, adv, b.epsilon);
    Tensor<float> lat_nat = m.clf.classify(nat.x).first;
    Tensor<float> lat_adv = m.clf.classify(adv).first;
    detail::l2_normalize_rows(lat_nat);
    detail::l2_normalize_rows(lat_adv);
    const std::size_t d = lat_nat.shape()[1];
    for (std::size_t i = 0; i < nb; ++i) {
      std::vector<double> dist(k);
      for (std::size_t j = 0; j < k; ++j) {
        double s = 0;
        for (std::size_t c = 0; c < d; ++c) {
          const double diff = double(lat_nat[i * d + c]) - lat_adv[(i * k + j) * d + c];
          s += diff * diff;
        }
        dist[j] = std::sqrt(s);
      }
      double mu = 0;
      for (double v : dist) mu += v;
      mu /= double(k);
      double var = 0;
      for (double v : dist) var += (v - mu) * (v - mu);
      sum += mu * double(k);
      std_sum += std::sqrt(var / double(k));
      count += 1;
    }
  }
  return {m.step, sum / double(count * k), std_sum / double(count)};
}

/// One diversity point per checkpoint, in step order.
inline std::vector<DiversityPoint> diversity_study(const std::vector<std::filesystem::path>& checkpoints,
                                                   const Dataset& data, const DiversityOptions& opt) {
  if (checkpoints.empty()) throw InputError("diversity: no checkpoints given");
  std::vector<DiversityPoint> trace;
  std::optional<ClassifierConfig> arch;
  for (const auto& p : checkpoints) {
    const Model m = load_model(p);
    if (arch && (arch->conv_blocks.size() != m.clf.cfg.conv_blocks.size() || arch->latent_dim != m.clf.cfg.latent_dim))
      throw DimensionError("diversity: checkpoint " + p.string() + " has a different architecture");
    arch = m.clf.cfg;
    trace.push_back(diversity_at(m, data, opt));
  }
  std::sort(trace.begin(), trace.end(), [](const auto& a, const auto& b) { return a.step < b.step; });
  return trace;
}

// ---------------------------------------------------------------------------
// Ablation over the three training variants.

struct AblationRow {
  Variant variant;
  std::filesystem::path checkpoint;
  EvalReport report;
};

inline std::string variant_slug(Variant v) {
  switch (v) {
    case Variant::noreg_ot: return "noreg-ot";
    case Variant::otreg_xent: return "otreg-xent";
    case Variant::otreg_ot: return "otreg-ot";
  }
  return "unknown";
}

/// Trains the three variants with everything but the variant held equal and
/// evaluates each on natural, PGD-20 and CW-20.
inline std::vector<AblationRow> ablation_grid(const Dataset& train_set, const Dataset& test_set, const RunConfig& base,
                                              std::ostream* log = nullptr) {
  std::vector<AblationRow> rows;
  const double eps = base.eval.epsilon, alpha = base.eval.alpha;
  const std::vector<AttackSpec> specs{AttackSpec::pgd(20, eps, alpha), AttackSpec::cw(20, eps, alpha)};
  for (Variant v : {Variant::noreg_ot, Variant::otreg_xent, Variant::otreg_ot}) {
    RunConfig cfg = base;
    cfg.train.method = Method::synthesis;
    cfg.train.variant = v;
    cfg.out_dir = (std::filesystem::path(base.out_dir) / variant_slug(v)).string();
    TrainOptions opt;
    opt.log = log;
    TrainResult r = train(train_set, cfg, opt);
    const Model m = model_from_state(to_string(v), cfg, r.state);
    rows.push_back({v, r.checkpoints.back(), whitebox_grid(m, test_set, specs, {std::size_t(base.eval.batch_size), base.eval.seed})});
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Serialisation.

inline void write_report_csv(std::ostream& os, const std::vector<EvalReport>& reports) {
  os << "model,config_hash,attack,accuracy\n";
  for (const auto& r : reports) {
    os << r.model_id << ',' << hex64(r.config_hash) << ",natural," << config_detail::fmt_real(r.natural) << '\n';
    for (const auto& [name, acc] : r.attacks)
      os << r.model_id << ',' << hex64(r.config_hash) << ',' << name << ',' << config_detail::fmt_real(acc) << '\n';
  }
}

inline nlohmann::json report_json(const EvalReport& r) {
  nlohmann::json j;
  j["model"] = r.model_id;
  j["config_hash"] = hex64(r.config_hash);
  j["timestamp"] = r.timestamp;
  j["natural"] = r.natural;
  nlohmann::json acc = nlohmann::json::object();
  for (const auto& [name, a] : r.attacks) acc[name] = a;
  j["attacks"] = acc;
  return j;
}

inline void write_sweep_csv(std::ostream& os, const std::vector<SweepPoint>& curve) {
  os << "epsilon,epsilon_255,accuracy\n";
  for (const auto& p : curve)
    os << config_detail::fmt_real(p.epsilon) << ',' << config_detail::fmt_real(p.epsilon * 255.0) << ','
       << config_detail::fmt_real(p.accuracy) << '\n';
}

inline void write_diversity_csv(std::ostream& os, const std::vector<DiversityPoint>& trace) {
  os << "step,mean,std\n";
  for (const auto& p : trace)
    os << p.step << ',' << config_detail::fmt_real(p.mean) << ',' << config_detail::fmt_real(p.std) << '\n';
}

inline void write_ablation_csv(std::ostream& os, const std::vector<AblationRow>& rows, std::uint64_t seed) {
  os << "# seed=" << seed << '\n';
  os << "variant,config_hash,checkpoint,natural";
  if (!rows.empty())
    for (const auto& [name, _] : rows.front().report.attacks) os << ',' << name;
  os << '\n';
  for (const auto& r : rows) {
    os << to_string(r.variant) << ',' << hex64(r.report.config_hash) << ',' << r.checkpoint.string() << ','
       << config_detail::fmt_real(r.report.natural);
    for (const auto& [_, acc] : r.report.attacks) os << ',' << config_detail::fmt_real(acc);
    os << '\n';
  }
}

/// Latent vectors of every image, for external embedding tools.
inline void export_latents(std::ostream& os, const Model& m, const Dataset& data, std::size_t batch = 200) {
  detail::require_matches(data, m.clf);
  const std::size_t d = std::size_t(m.clf.cfg.latent_dim);
  os << "index,label";
  for (std::size_t j = 0; j < d; ++j) os << ",z" << j;
  os << '\n';
  for (std::size_t b = 0; b < data.size(); b += batch) {
    std::vector<std::size_t> idx;
    for (std::size_t i = b; i < std::min(data.size(), b + batch); ++i) idx.push_back(i);
    const Batch bt = gather(data, idx);
    const Tensor<float> lat = m.clf.classify(bt.x).first;
    for (std::size_t i = 0; i < idx.size(); ++i) {
      os << idx[i] << ',' << bt.y[i];
      for (std::size_t j = 0; j < d; ++j) os << ',' << lat[i * d + j];
      os << '\n';
    }
  }
}

}  // namespace rvs

#endif  // RVS_EVAL_HPP
