#ifndef RVS_CLI_HPP
#define RVS_CLI_HPP

#include <glob.h>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "rvs/config.hpp"
#include "rvs/eval.hpp"
#include "rvs/run.hpp"

namespace rvs::cli {

namespace fs = std::filesystem;

struct TrainArgs {
  std::string config;
  std::string out_dir;  // overrides run.out_dir when set
  bool resume = false;
  bool force = false;
  std::optional<std::int64_t> stop_after;
  bool quiet = false;
};

struct AttackArgs {
  std::string attack;  // empty: the checkpoint config's eval.attacks
  std::optional<int> steps;
  std::string eps;
  std::string alpha;
  std::string surrogate;
};

struct EvalArgs {
  std::string checkpoint;
  std::string data;  // RVSDATA file; empty: test split of the checkpoint's data config
  AttackArgs attack;
  std::string sweep;
  std::string out;  // prefix for .csv and .json; empty: CSV on stdout
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> batch_size;
};

struct DiversityArgs {
  std::vector<std::string> patterns;
  std::string data;
  std::optional<int> k;
  std::optional<std::size_t> subset;
  std::optional<std::uint64_t> seed;
  std::string out;
};

struct AblateArgs {
  std::string config;
  std::string out_dir;
  std::string out;
  bool quiet = false;
};

struct ExportArgs {
  std::string config;      // source of the clean dataset when no checkpoint is given
  std::string checkpoint;  // attack this model's test data (or --data) when given
  std::string data;
  std::string split = "test";
  AttackArgs attack;
  std::string out;
  std::optional<std::uint64_t> seed;
};

namespace detail {

inline std::vector<fs::path> expand_globs(const std::vector<std::string>& patterns) {
  std::vector<fs::path> out;
  for (const auto& p : patterns) {
    glob_t g{};
    if (::glob(p.c_str(), 0, nullptr, &g) == 0)
      for (std::size_t i = 0; i < g.gl_pathc; ++i) out.emplace_back(g.gl_pathv[i]);
    globfree(&g);
  }
  return out;
}

inline Dataset eval_data(const std::string& path, const RunConfig& cfg, Split split = Split::test) {
  if (!path.empty()) return load_dataset(resolve_data_path(path), split);
  auto [train, test] = load_data(cfg.data);
  return split == Split::train ? std::move(train) : std::move(test);
}

/// Attack list from flags, falling back to the config's eval section.
inline std::vector<AttackSpec> attack_list(const AttackArgs& a, const EvalConfig& e) {
  const double eps = a.eps.empty() ? e.epsilon : parse_real(a.eps);
  const double alpha = a.alpha.empty() ? e.alpha : parse_real(a.alpha);
  if (a.attack.empty()) {
    std::vector<AttackSpec> out = e.attacks;
    for (auto& s : out) {
      s.epsilon = eps;
      if (s.kind == AttackKind::fgsm) s.alpha = eps;
      else s.alpha = alpha;
      if (a.steps && s.kind != AttackKind::fgsm) s.steps = *a.steps;
    }
    return out;
  }
  if (a.attack == "none") return {};
  const AttackKind kind = parse_attack_kind(a.attack);
  AttackSpec s;
  if (kind == AttackKind::fgsm) s = AttackSpec::fgsm(eps);
  else if (kind == AttackKind::pgd) s = AttackSpec::pgd(a.steps.value_or(20), eps, alpha);
  else s = AttackSpec::cw(a.steps.value_or(20), eps, alpha);
  s.validate();
  return {s};
}

inline void write_file(const fs::path& p, const std::string& text) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream os(p, std::ios::trunc);
  os << text;
  if (!os) throw std::runtime_error("cannot write " + p.string());
}

inline EvalOptions eval_options(const EvalConfig& e, std::optional<std::uint64_t> seed,
                                std::optional<std::size_t> batch) {
  return {batch.value_or(std::size_t(e.batch_size)), seed.value_or(e.seed)};
}

}  // namespace detail

inline int cmd_train(const TrainArgs& a, std::ostream& out) {
  RunConfig cfg = load_config(a.config);
  if (!a.out_dir.empty()) cfg.out_dir = a.out_dir;
  auto [train_set, test_set] = load_data(cfg.data);
  TrainOptions opt;
  opt.resume = a.resume;
  opt.force = a.force;
  opt.stop_after = a.stop_after;
  opt.log = a.quiet ? nullptr : &out;
  TrainResult r = train(train_set, cfg, opt);
  out << "config_hash " << hex64(config_hash(cfg)) << "\n";
  out << "steps " << r.state.step << "/" << r.total_steps << "\n";
  for (const auto& p : r.checkpoints) out << "checkpoint " << p.string() << "\n";
  out << "metrics " << r.metrics.string() << "\n";
  return 0;
}

inline int cmd_eval(const EvalArgs& a, std::ostream& out) {
  const Model m = load_model(a.checkpoint);
  const RunConfig cfg = checkpoint_config(load_checkpoint(a.checkpoint));
  const Dataset data = detail::eval_data(a.data, cfg);
  const EvalOptions opt = detail::eval_options(cfg.eval, a.seed, a.batch_size);
  nlohmann::json summary;
  std::ostringstream csv;

  if (!a.sweep.empty()) {
    // the sweep defaults to PGD-20 whatever eval.attacks says
    AttackArgs sa = a.attack;
    if (sa.attack.empty() || sa.attack == "none") sa.attack = "pgd";
    const AttackSpec base = detail::attack_list(sa, cfg.eval).front();
    const auto curve = budget_sweep(m, data, parse_sweep(a.sweep), base, opt);
    write_sweep_csv(csv, curve);
    summary["model"] = m.id;
    summary["config_hash"] = hex64(m.config_hash);
    summary["attack"] = base.name();
    for (const auto& p : curve) summary["curve"].push_back({{"epsilon", p.epsilon}, {"accuracy", p.accuracy}});
  } else {
    const auto specs = detail::attack_list(a.attack, cfg.eval);
    EvalReport r = a.attack.surrogate.empty() ? whitebox_grid(m, data, specs, opt)
                                              : blackbox_transfer(m, load_model(a.attack.surrogate), data, specs, opt);
    write_report_csv(csv, {r});
    summary = report_json(r);
  }
  summary["seed"] = opt.seed;
  if (a.out.empty()) {
    out << csv.str();
  } else {
    detail::write_file(a.out + ".csv", csv.str());
    detail::write_file(a.out + ".json", summary.dump(2) + "\n");
    out << "wrote " << a.out << ".csv and " << a.out << ".json\n";
  }
  return 0;
}

inline int cmd_diversity(const DiversityArgs& a, std::ostream& out) {
  const auto paths = detail::expand_globs(a.patterns);
  if (paths.empty()) throw InputError("diversity: no checkpoint matches the given pattern(s)");
  const RunConfig cfg = checkpoint_config(load_checkpoint(paths.front()));
  const Dataset data = detail::eval_data(a.data, cfg);
  DiversityOptions opt;
  opt.k = a.k.value_or(cfg.eval.diversity_k);
  opt.subset = a.subset.value_or(std::size_t(cfg.eval.diversity_subset));
  opt.seed = a.seed.value_or(cfg.eval.seed);
  if (opt.k < 2) throw ConfigError("diversity: k must be >= 2");
  const auto trace = diversity_study(paths, data, opt);
  std::ostringstream csv;
  write_diversity_csv(csv, trace);
  if (a.out.empty()) out << csv.str();
  else {
    detail::write_file(a.out, csv.str());
    out << "wrote " << a.out << "\n";
  }
  return 0;
}

inline int cmd_ablate(const AblateArgs& a, std::ostream& out) {
  RunConfig cfg = load_config(a.config);
  if (!a.out_dir.empty()) cfg.out_dir = a.out_dir;
  auto [train_set, test_set] = load_data(cfg.data);
  const auto rows = ablation_grid(train_set, test_set, cfg, a.quiet ? nullptr : &out);
  std::ostringstream csv;
  write_ablation_csv(csv, rows, cfg.train.seed);
  const fs::path dest = a.out.empty() ? fs::path(cfg.out_dir) / "ablation.csv" : fs::path(a.out);
  detail::write_file(dest, csv.str());
  out << csv.str() << "wrote " << dest.string() << "\n";
  return 0;
}

/// Writes a clean split, or an adversarial copy of it, in the RVSDATA format.
inline int cmd_export(const ExportArgs& a, std::ostream& out) {
  if (a.out.empty()) throw ConfigError("export-dataset: --out is required");
  if (a.split != "train" && a.split != "test") throw ConfigError("export-dataset: --split must be train or test");
  const Split split = a.split == "train" ? Split::train : Split::test;
  Dataset result;
  if (a.checkpoint.empty()) {
    if (a.config.empty()) throw ConfigError("export-dataset: give a checkpoint or --config");
    result = detail::eval_data(a.data, load_config(a.config), split);
  } else {
    const Model m = load_model(a.checkpoint);
    const RunConfig cfg = checkpoint_config(load_checkpoint(a.checkpoint));
    const Dataset data = detail::eval_data(a.data, cfg, split);
    const auto specs = detail::attack_list(a.attack, cfg.eval);
    if (specs.size() > 1) throw ConfigError("export-dataset: choose a single attack with --attack");
    const EvalOptions opt = detail::eval_options(cfg.eval, a.seed, std::nullopt);
    const Model surrogate = a.attack.surrogate.empty() ? m : load_model(a.attack.surrogate);
    std::optional<AttackSpec> spec;
    if (!specs.empty()) spec = specs.front();
    result = data;
    std::size_t offset = 0;
    attack_dataset(data, m.clf, spec, opt, frozen(surrogate.clf),
                   [&](const Batch&, const Tensor<float>& adv, const std::vector<int>&) {
                     std::copy_n(adv.raw(), adv.size(), result.images.raw() + offset);
                     offset += adv.size();
                   });
  }
  save_dataset(result, fs::path(a.out));
  out << "wrote " << result.size() << " images to " << a.out << "\n";
  return 0;
}

/// Parses argv and dispatches. Exit codes: 0 success, 1 runtime failure,
/// 2 usage or configuration error.
inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Adversarial training with synthesized perturbations"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "rvs 1.0.0");

  TrainArgs ta;
  auto* train_cmd = app.add_subcommand("train", "Train a classifier and generator from a config file");
  train_cmd->add_option("--config,-c", ta.config, "Run configuration (INI)")->required()->check(CLI::ExistingFile);
  train_cmd->add_option("--out-dir", ta.out_dir, "Override run.out_dir");
  train_cmd->add_flag("--resume", ta.resume, "Continue from the newest checkpoint in the output directory");
  train_cmd->add_flag("--force", ta.force, "Resume even if the checkpoint was written by a different config");
  train_cmd->add_option("--stop-after", ta.stop_after, "Stop once this many steps are complete");
  train_cmd->add_flag("--quiet,-q", ta.quiet, "No progress output");

  auto add_attack_flags = [](CLI::App* c, AttackArgs& a) {
    c->add_option("--attack", a.attack, "none, fgsm, pgd or cw (default: the config's eval.attacks)");
    c->add_option("--steps", a.steps, "Attack iterations");
    c->add_option("--eps", a.eps, "Budget, decimal or fraction such as 8/255");
    c->add_option("--alpha", a.alpha, "Step size, decimal or fraction");
    c->add_option("--surrogate", a.surrogate, "Craft the attack on this checkpoint instead (transfer)");
  };

  EvalArgs ea;
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint under attack");
  eval_cmd->add_option("checkpoint", ea.checkpoint, "Checkpoint file")->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--data", ea.data, "Dataset file (default: the checkpoint's test split)");
  add_attack_flags(eval_cmd, ea.attack);
  eval_cmd->add_option("--sweep", ea.sweep, "Budget sweep lo:hi:step in units of 1/255");
  eval_cmd->add_option("--out,-o", ea.out, "Output prefix for <prefix>.csv and <prefix>.json");
  eval_cmd->add_option("--seed", ea.seed, "Attack seed");
  eval_cmd->add_option("--batch-size", ea.batch_size, "Evaluation batch size");

  DiversityArgs da;
  auto* div_cmd = app.add_subcommand("diversity", "Latent distance statistics of synthesized perturbations");
  div_cmd->add_option("checkpoints", da.patterns, "Checkpoint files or glob patterns")->required();
  div_cmd->add_option("--data", da.data, "Dataset file (default: the checkpoint's test split)");
  div_cmd->add_option("--k", da.k, "Random vectors per image (>= 2)");
  div_cmd->add_option("--subset", da.subset, "Maximum number of images");
  div_cmd->add_option("--seed", da.seed, "Seed for the subset and the random vectors");
  div_cmd->add_option("--out,-o", da.out, "CSV output (default: stdout)");

  AblateArgs aa;
  auto* abl_cmd = app.add_subcommand("ablate", "Train and compare noReg+OT, OT-Reg+Xent and OT-Reg+OT");
  abl_cmd->add_option("--config,-c", aa.config, "Base configuration")->required()->check(CLI::ExistingFile);
  abl_cmd->add_option("--out-dir", aa.out_dir, "Override run.out_dir");
  abl_cmd->add_option("--out,-o", aa.out, "Comparison CSV (default: <out_dir>/ablation.csv)");
  abl_cmd->add_flag("--quiet,-q", aa.quiet, "No progress output");

  ExportArgs xa;
  auto* exp_cmd = app.add_subcommand("export-dataset", "Write a clean or attacked split as a dataset file");
  exp_cmd->add_option("checkpoint", xa.checkpoint, "Attack this checkpoint's data");
  exp_cmd->add_option("--config,-c", xa.config, "Export the clean data of this configuration");
  exp_cmd->add_option("--data", xa.data, "Source dataset file");
  exp_cmd->add_option("--split", xa.split, "train or test");
  add_attack_flags(exp_cmd, xa.attack);
  exp_cmd->add_option("--seed", xa.seed, "Attack seed");
  exp_cmd->add_option("--out,-o", xa.out, "Output dataset file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err) == 0 ? 0 : 2;
  }

  try {
    if (train_cmd->parsed()) return cmd_train(ta, out);
    if (eval_cmd->parsed()) return cmd_eval(ea, out);
    if (div_cmd->parsed()) return cmd_diversity(da, out);
    if (abl_cmd->parsed()) return cmd_ablate(aa, out);
    if (exp_cmd->parsed()) return cmd_export(xa, out);
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}

}  // namespace rvs::cli

#endif  // RVS_CLI_HPP
