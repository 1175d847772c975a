#ifndef RVS_CONFIG_HPP
#define RVS_CONFIG_HPP

#include <charconv>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <boost/algorithm/string.hpp>
#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "rvs/attacks.hpp"
#include "rvs/data.hpp"
#include "rvs/nets.hpp"
#include "rvs/training.hpp"

namespace rvs {

struct DataConfig {
  std::string source = "toy";  // toy | cifar10 | file
  std::string path;            // cifar10 directory, or training file for `file`
  std::string test_path;       // test file for `file`
  ToySpec toy;
};

struct EvalConfig {
  std::vector<AttackSpec> attacks{AttackSpec::fgsm(), AttackSpec::pgd(10), AttackSpec::pgd(20), AttackSpec::cw(20)};
  double epsilon = 8.0 / 255.0;
  double alpha = 2.0 / 255.0;
  std::size_t batch_size = 200;
  std::uint64_t seed = 0;
  int diversity_k = 32;
  std::size_t diversity_subset = 256;
};

/// Everything one command needs. Serialises to a canonical text whose hash
/// stamps every artifact derived from it.
struct RunConfig {
  std::string name = "run";
  std::string out_dir = "runs/run";
  std::int64_t checkpoint_interval = 0;  // 0: initial and final checkpoints only
  std::int64_t log_interval = 1;
  bool record_wallclock = true;  // false writes 0 so metrics files compare byte for byte
  DataConfig data;
  TrainConfig train;
  ClassifierConfig classifier;
  GeneratorConfig generator = [] {
    GeneratorConfig g;
    g.z_dim = ClassifierConfig{}.latent_dim;  // z lives in the desk-scale classifier's latent space
    return g;
  }();
  EvalConfig eval;

  /// Generator output always matches the classifier input.
  GeneratorConfig generator_config() const {
    GeneratorConfig g = generator;
    g.out_h = classifier.in_h;
    g.out_w = classifier.in_w;
    g.out_c = classifier.in_c;
    return g;
  }

  void validate() const {
    if (name.empty()) throw ConfigError("run.name must be non-empty");
    if (checkpoint_interval < 0) throw ConfigError("run.checkpoint_interval must be >= 0");
    if (log_interval < 1) throw ConfigError("run.log_interval must be >= 1");
    if (data.source != "toy" && data.source != "cifar10" && data.source != "file")
      throw ConfigError("data.source must be toy, cifar10 or file");
    if (data.source == "toy") data.toy.validate();
    if (data.source == "file" && (data.path.empty() || data.test_path.empty()))
      throw ConfigError("data.path and data.test_path are required for source = file");
    train.validate();
    validate_pair(generator_config(), classifier);
    for (const auto& a : eval.attacks) a.validate();
    if (eval.batch_size < 1) throw ConfigError("eval.batch_size must be >= 1");
    if (eval.diversity_k < 2) throw ConfigError("eval.diversity_k must be >= 2");
    if (eval.diversity_subset < 1) throw ConfigError("eval.diversity_subset must be >= 1");
  }
};

namespace config_detail {

inline std::string fmt_real(double v) {
  char buf[64];
  auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

template <typename Seq, typename F>
std::string join(const Seq& s, F f, const char* sep = ",") {
  std::string out;
  bool first = true;
  for (const auto& v : s) {
    if (!first) out += sep;
    out += f(v);
    first = false;
  }
  return out;
}

inline std::string trim(std::string s) {
  boost::algorithm::trim(s);
  return s;
}

inline std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> parts;
  if (trim(s).empty()) return parts;
  boost::algorithm::split(parts, s, boost::algorithm::is_any_of(","));
  for (auto& p : parts) p = trim(p);
  return parts;
}

}  // namespace config_detail

/// Parses a real number given as a decimal or as a fraction such as "8/255".
inline double parse_real(const std::string& text) {
  const std::string s = config_detail::trim(text);
  auto num = [&](const std::string& t) {
    double v = 0;
    const char* b = t.data();
    const char* e = t.data() + t.size();
    auto r = std::from_chars(b, e, v);
    if (t.empty() || r.ec != std::errc() || r.ptr != e)
      throw ConfigError("expected a number, got '" + text + "'");
    return v;
  };
  const auto slash = s.find('/');
  if (slash == std::string::npos) return num(s);
  const double d = num(config_detail::trim(s.substr(slash + 1)));
  if (d == 0) throw ConfigError("zero denominator in '" + text + "'");
  return num(config_detail::trim(s.substr(0, slash))) / d;
}

inline std::int64_t parse_int(const std::string& text) {
  const std::string s = config_detail::trim(text);
  std::int64_t v = 0;
  auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || r.ec != std::errc() || r.ptr != s.data() + s.size())
    throw ConfigError("expected an integer, got '" + text + "'");
  return v;
}

inline bool parse_bool(const std::string& text) {
  const std::string s = boost::algorithm::to_lower_copy(config_detail::trim(text));
  if (s == "true" || s == "on" || s == "yes" || s == "1") return true;
  if (s == "false" || s == "off" || s == "no" || s == "0") return false;
  throw ConfigError("expected true/false, got '" + text + "'");
}

/// "pgd-20", "cw-100" or "fgsm", with the shared budget and step size.
inline AttackSpec parse_attack(const std::string& text, double eps, double alpha) {
  const std::string s = boost::algorithm::to_lower_copy(config_detail::trim(text));
  if (s == "fgsm") return AttackSpec::fgsm(eps);
  const auto dash = s.find('-');
  if (dash == std::string::npos) throw ConfigError("attack '" + text + "' must look like pgd-20, cw-20 or fgsm");
  const AttackKind kind = parse_attack_kind(s.substr(0, dash));
  const int steps = static_cast<int>(parse_int(s.substr(dash + 1)));
  AttackSpec a{kind, eps, alpha, steps, true};
  if (kind == AttackKind::fgsm) a = AttackSpec::fgsm(eps);
  a.validate();
  return a;
}

/// Canonical text: every field that can influence results, fixed order,
/// normalised values. Output locations are left out.
inline std::string canonical_text(const RunConfig& c) {
  using config_detail::fmt_real;
  using config_detail::join;
  std::ostringstream os;
  auto kv = [&](const char* k, const std::string& v) { os << k << " = " << v << "\n"; };
  auto num = [](auto v) { return std::to_string(v); };
  os << "[run]\n";
  kv("name", c.name);
  kv("checkpoint_interval", num(c.checkpoint_interval));
  kv("log_interval", num(c.log_interval));
  kv("record_wallclock", c.record_wallclock ? "true" : "false");
  os << "\n[data]\n";
  kv("source", c.data.source);
  kv("path", c.data.path);
  kv("test_path", c.data.test_path);
  os << "\n[toy]\n";
  kv("classes", num(c.data.toy.classes));
  kv("samples_per_class", num(c.data.toy.samples_per_class));
  kv("image_size", num(c.data.toy.image_size));
  kv("noise_std", fmt_real(c.data.toy.noise_std));
  kv("contrast", fmt_real(c.data.toy.contrast));
  kv("seed", num(c.data.toy.seed));
  const auto& t = c.train;
  os << "\n[train]\n";
  kv("method", to_string(t.method));
  kv("variant", to_string(t.variant));
  kv("epochs", num(t.epochs));
  kv("batch_size", num(t.batch_size));
  kv("epsilon", fmt_real(t.epsilon));
  kv("lr_classifier", fmt_real(t.lr_classifier));
  kv("lr_generator", fmt_real(t.lr_generator));
  kv("lr_decay", fmt_real(t.lr_decay));
  kv("lr_transitions", join(t.lr_transitions, fmt_real));
  kv("momentum", fmt_real(t.momentum));
  kv("weight_decay", fmt_real(t.weight_decay));
  kv("label_smoothing", fmt_real(t.label_smoothing));
  kv("sinkhorn_reg", fmt_real(t.sinkhorn_reg));
  kv("sinkhorn_iters", num(t.sinkhorn_iters));
  kv("sinkhorn_gradient", t.sinkhorn_gradient == SinkhornGradient::unrolled ? "unrolled" : "fixed_plan");
  kv("augment", t.augment ? "true" : "false");
  kv("train_attack_steps", num(t.train_attack.steps));
  kv("train_attack_alpha", fmt_real(t.train_attack.alpha));
  kv("seed", num(t.seed));
  const auto& k = c.classifier;
  os << "\n[classifier]\n";
  kv("blocks", join(k.conv_blocks, [](const ConvLayerSpec& b) {
       return std::to_string(b.channels) + ":" + std::to_string(b.stride);
     }));
  kv("latent_dim", num(k.latent_dim));
  kv("num_classes", num(k.num_classes));
  kv("input", std::to_string(k.in_h) + "x" + std::to_string(k.in_w) + "x" + std::to_string(k.in_c));
  kv("leak", fmt_real(k.leak));
  kv("kernel", num(k.kernel));
  const auto& g = c.generator;
  os << "\n[generator]\n";
  kv("z_dim", num(g.z_dim));
  kv("base_spatial", num(g.base_spatial));
  kv("channels", join(g.channel_schedule, [](int v) { return std::to_string(v); }));
  kv("leak", fmt_real(g.leak));
  kv("kernel", num(g.kernel));
  const auto& e = c.eval;
  os << "\n[eval]\n";
  kv("attacks", join(e.attacks, [](const AttackSpec& a) { return a.name(); }));
  kv("epsilon", fmt_real(e.epsilon));
  kv("alpha", fmt_real(e.alpha));
  kv("batch_size", num(e.batch_size));
  kv("seed", num(e.seed));
  kv("diversity_k", num(e.diversity_k));
  kv("diversity_subset", num(e.diversity_subset));
  return os.str();
}

/// 64-bit FNV-1a.
inline std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  static const char* digits = "0123456789abcdef";
  for (int i = 15; i >= 0; --i, v >>= 4) buf[i] = digits[v & 0xf];
  buf[16] = '\0';
  return buf;
}

inline std::uint64_t config_hash(const RunConfig& c) { return fnv1a(canonical_text(c)); }

/// Parses INI text. All field problems are collected and reported together,
/// one "section.key: message" per line.
inline RunConfig parse_config(std::istream& is, const std::string& origin = "<config>") {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  try {
    pt::read_ini(is, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(origin + ": " + e.message() + " (line " + std::to_string(e.line()) + ")");
  }

  RunConfig c;
  std::vector<std::string> errors;
  std::set<std::string> seen;
  using Setter = std::function<void(const std::string&)>;
  std::map<std::string, std::map<std::string, Setter>> schema;
  auto real = [](double& dst) { return Setter([&dst](const std::string& v) { dst = parse_real(v); }); };
  auto integer = [](auto& dst) {
    return Setter([&dst](const std::string& v) {
      using D = std::remove_reference_t<decltype(dst)>;
      const auto x = parse_int(v);
      if (std::is_unsigned_v<D> && x < 0) throw ConfigError("must be non-negative");
      dst = static_cast<D>(x);
    });
  };
  auto text = [](std::string& dst) { return Setter([&dst](const std::string& v) { dst = config_detail::trim(v); }); };

  auto& run = schema["run"];
  run["name"] = text(c.name);
  run["out_dir"] = text(c.out_dir);
  run["checkpoint_interval"] = integer(c.checkpoint_interval);
  run["log_interval"] = integer(c.log_interval);
  run["record_wallclock"] = [&](const std::string& v) { c.record_wallclock = parse_bool(v); };
  auto& data = schema["data"];
  data["source"] = text(c.data.source);
  data["path"] = text(c.data.path);
  data["test_path"] = text(c.data.test_path);
  auto& toy = schema["toy"];
  toy["classes"] = integer(c.data.toy.classes);
  toy["samples_per_class"] = integer(c.data.toy.samples_per_class);
  toy["image_size"] = integer(c.data.toy.image_size);
  toy["noise_std"] = real(c.data.toy.noise_std);
  toy["contrast"] = real(c.data.toy.contrast);
  toy["seed"] = integer(c.data.toy.seed);
  auto& tr = schema["train"];
  auto& t = c.train;
  tr["method"] = [&](const std::string& v) { t.method = parse_method(config_detail::trim(v)); };
  tr["variant"] = [&](const std::string& v) { t.variant = parse_variant(config_detail::trim(v)); };
  tr["epochs"] = integer(t.epochs);
  tr["batch_size"] = integer(t.batch_size);
  tr["epsilon"] = real(t.epsilon);
  tr["lr_classifier"] = real(t.lr_classifier);
  tr["lr_generator"] = real(t.lr_generator);
  tr["lr_decay"] = real(t.lr_decay);
  tr["lr_transitions"] = [&](const std::string& v) {
    t.lr_transitions.clear();
    for (const auto& p : config_detail::split_list(v)) t.lr_transitions.push_back(parse_real(p));
  };
  tr["momentum"] = real(t.momentum);
  tr["weight_decay"] = real(t.weight_decay);
  tr["label_smoothing"] = real(t.label_smoothing);
  tr["sinkhorn_reg"] = real(t.sinkhorn_reg);
  tr["sinkhorn_iters"] = integer(t.sinkhorn_iters);
  tr["sinkhorn_gradient"] = [&](const std::string& v) {
    const auto s = config_detail::trim(v);
    if (s == "unrolled") t.sinkhorn_gradient = SinkhornGradient::unrolled;
    else if (s == "fixed_plan") t.sinkhorn_gradient = SinkhornGradient::fixed_plan;
    else throw ConfigError("expected unrolled or fixed_plan, got '" + s + "'");
  };
  tr["augment"] = [&](const std::string& v) { t.augment = parse_bool(v); };
  tr["train_attack_steps"] = integer(t.train_attack.steps);
  tr["train_attack_alpha"] = real(t.train_attack.alpha);
  tr["seed"] = integer(t.seed);
  auto& cl = schema["classifier"];
  auto& k = c.classifier;
  cl["blocks"] = [&](const std::string& v) {
    k.conv_blocks.clear();
    for (const auto& p : config_detail::split_list(v)) {
      const auto colon = p.find(':');
      if (colon == std::string::npos) throw ConfigError("block '" + p + "' must be channels:stride");
      k.conv_blocks.push_back({static_cast<int>(parse_int(p.substr(0, colon))),
                               static_cast<int>(parse_int(p.substr(colon + 1)))});
    }
  };
  cl["latent_dim"] = integer(k.latent_dim);
  cl["num_classes"] = integer(k.num_classes);
  cl["input"] = [&](const std::string& v) {
    std::vector<std::string> parts;
    const auto s = config_detail::trim(v);
    boost::algorithm::split(parts, s, boost::algorithm::is_any_of("x"));
    if (parts.size() != 3) throw ConfigError("input must be HxWxC, got '" + s + "'");
    k.in_h = static_cast<int>(parse_int(parts[0]));
    k.in_w = static_cast<int>(parse_int(parts[1]));
    k.in_c = static_cast<int>(parse_int(parts[2]));
  };
  cl["leak"] = real(k.leak);
  cl["kernel"] = integer(k.kernel);
  auto& ge = schema["generator"];
  auto& g = c.generator;
  ge["z_dim"] = integer(g.z_dim);
  ge["base_spatial"] = integer(g.base_spatial);
  ge["channels"] = [&](const std::string& v) {
    g.channel_schedule.clear();
    for (const auto& p : config_detail::split_list(v)) g.channel_schedule.push_back(static_cast<int>(parse_int(p)));
  };
  ge["leak"] = real(g.leak);
  ge["kernel"] = integer(g.kernel);
  auto& ev = schema["eval"];
  auto& e = c.eval;
  std::string attack_list;
  bool have_attacks = false;
  ev["attacks"] = [&](const std::string& v) {
    attack_list = v;
    have_attacks = true;
  };
  ev["epsilon"] = real(e.epsilon);
  ev["alpha"] = real(e.alpha);
  ev["batch_size"] = integer(e.batch_size);
  ev["seed"] = integer(e.seed);
  ev["diversity_k"] = integer(e.diversity_k);
  ev["diversity_subset"] = integer(e.diversity_subset);

  for (const auto& [section, body] : tree) {
    auto sit = schema.find(section);
    if (sit == schema.end()) {
      errors.push_back(section + ": unknown section");
      continue;
    }
    for (const auto& [key, node] : body) {
      const std::string field = section + "." + key;
      auto kit = sit->second.find(key);
      if (kit == sit->second.end()) {
        errors.push_back(field + ": unknown key");
        continue;
      }
      try {
        kit->second(node.data());
      } catch (const std::exception& ex) {
        errors.push_back(field + ": " + ex.what());
      }
    }
  }
  // attack budgets depend on eval.epsilon/alpha, so they are resolved last
  std::vector<AttackSpec> resolved;
  try {
    if (have_attacks) {
      for (const auto& p : config_detail::split_list(attack_list)) resolved.push_back(parse_attack(p, e.epsilon, e.alpha));
    } else {
      for (auto a : e.attacks) {
        a.epsilon = e.epsilon;
        a.alpha = a.kind == AttackKind::fgsm ? e.epsilon : e.alpha;
        resolved.push_back(a);
      }
    }
    e.attacks = resolved;
  } catch (const std::exception& ex) {
    errors.push_back(std::string("eval.attacks: ") + ex.what());
  }
  if (errors.empty()) {
    try {
      c.validate();
    } catch (const std::exception& ex) {
      errors.push_back(ex.what());
    }
  }
  if (!errors.empty()) {
    std::string msg = origin + ": invalid configuration";
    for (const auto& m : errors) msg += "\n  " + m;
    throw ConfigError(msg);
  }
  return c;
}

inline RunConfig parse_config_text(const std::string& text, const std::string& origin = "<config>") {
  std::istringstream is(text);
  return parse_config(is, origin);
}

inline RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config " + path.string());
  return parse_config(is, path.string());
}

/// Root for relative dataset paths: $RVS_DATA_ROOT if set, else the working directory.
inline std::filesystem::path data_root() {
  const char* env = std::getenv("RVS_DATA_ROOT");
  return env && *env ? std::filesystem::path(env) : std::filesystem::current_path();
}

inline std::filesystem::path resolve_data_path(const std::string& p) {
  std::filesystem::path path(p);
  return path.is_absolute() ? path : data_root() / path;
}

/// Train and test splits named by the data section.
inline std::pair<Dataset, Dataset> load_data(const DataConfig& d) {
  if (d.source == "toy") return synth_toy(d.toy);
  if (d.source == "cifar10")
    return load_cifar10_binary(resolve_data_path(d.path.empty() ? "cifar-10-batches-bin" : d.path));
  if (d.source == "file")
    return {load_dataset(resolve_data_path(d.path), Split::train), load_dataset(resolve_data_path(d.test_path), Split::test)};
  throw ConfigError("data.source must be toy, cifar10 or file");
}

}  // namespace rvs

#endif  // RVS_CONFIG_HPP
