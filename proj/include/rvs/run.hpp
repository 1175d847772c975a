#ifndef RVS_RUN_HPP
#define RVS_RUN_HPP

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <regex>
#include <sstream>
#include <string>
#include <vector>

#include "rvs/checkpoint.hpp"
#include "rvs/config.hpp"
#include "rvs/training.hpp"

namespace rvs {

namespace fs = std::filesystem;

struct ResumeError : ConfigError {
  using ConfigError::ConfigError;
};

inline constexpr const char* kMetricsHeader = "step,ce_loss,ot_distance,lr_classifier,lr_generator,wallclock_ms";

inline std::string checkpoint_name(std::int64_t step) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "ckpt-%08lld.bin", static_cast<long long>(step));
  return buf;
}

/// Checkpoints written by `train` in `dir`, ordered by step.
inline std::vector<fs::path> list_checkpoints(const fs::path& dir) {
  static const std::regex pattern(R"(ckpt-(\d{8,})\.bin)");
  std::vector<std::pair<std::int64_t, fs::path>> found;
  if (!fs::is_directory(dir)) return {};
  for (const auto& e : fs::directory_iterator(dir)) {
    std::smatch m;
    const std::string name = e.path().filename().string();
    if (e.is_regular_file() && std::regex_match(name, m, pattern)) found.emplace_back(std::stoll(m[1].str()), e.path());
  }
  std::sort(found.begin(), found.end());
  std::vector<fs::path> out;
  for (auto& [_, p] : found) out.push_back(std::move(p));
  return out;
}

inline std::string metrics_preamble(const RunConfig& cfg) {
  return "# config_hash=" + hex64(config_hash(cfg)) + ",seed=" + std::to_string(cfg.train.seed);
}

inline std::string metrics_row(const IterationRecord& r) {
  std::ostringstream os;
  os << r.step << ',' << config_detail::fmt_real(r.ce_loss) << ',' << config_detail::fmt_real(r.ot_distance) << ','
     << config_detail::fmt_real(r.lr_classifier) << ',' << config_detail::fmt_real(r.lr_generator) << ','
     << r.wallclock_ms;
  return os.str();
}

struct TrainOptions {
  bool resume = false;
  bool force = false;                     // resume even if the config hash differs
  std::optional<std::int64_t> stop_after;  // halt (without a checkpoint) once this many steps are done
  std::function<void(const IterationRecord&)> on_record;
  std::ostream* log = nullptr;
};

struct TrainResult {
  TrainState state;
  std::int64_t total_steps = 0;
  std::vector<fs::path> checkpoints;  // written by this call
  fs::path metrics;
};

namespace detail {

/// Keeps the preamble, the header and every row with step < `step`.
inline void truncate_metrics(const fs::path& path, std::int64_t step) {
  std::ifstream is(path);
  if (!is) throw InputError("cannot read metrics file " + path.string());
  std::vector<std::string> keep;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    if (line[0] == '#' || line.rfind("step,", 0) == 0) {
      keep.push_back(line);
      continue;
    }
    if (std::stoll(line.substr(0, line.find(','))) < step) keep.push_back(line);
  }
  is.close();
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream os(tmp, std::ios::trunc);
    for (const auto& l : keep) os << l << '\n';
    if (!os) throw std::runtime_error("cannot rewrite metrics file " + tmp);
  }
  fs::rename(tmp, path);
}

}  // namespace detail

/// Runs epochs x batches synthesis (or baseline) steps on `data`, writing
/// out_dir/ckpt-<step>.bin and out_dir/metrics.csv.
inline TrainResult train(const Dataset& data, const RunConfig& cfg, const TrainOptions& opt = {}) {
  cfg.validate();
  if (data.num_classes != cfg.classifier.num_classes)
    throw ConfigError("dataset has " + std::to_string(data.num_classes) + " classes, classifier.num_classes is " +
                      std::to_string(cfg.classifier.num_classes));
  const fs::path dir = cfg.out_dir;
  fs::create_directories(dir);
  const std::int64_t spe = steps_per_epoch(data, cfg.train);
  const std::int64_t total = spe * cfg.train.epochs;
  const std::uint64_t hash = config_hash(cfg);

  TrainResult res;
  res.total_steps = total;
  res.metrics = dir / "metrics.csv";
  auto say = [&](const std::string& s) {
    if (opt.log) *opt.log << s << std::endl;
  };
  auto checkpoint = [&](const TrainState& st) {
    const fs::path p = dir / checkpoint_name(st.step);
    save_checkpoint(make_checkpoint(cfg, st), p);
    res.checkpoints.push_back(p);
  };

  std::optional<TrainState> restored;
  if (opt.resume) {
    const auto found = list_checkpoints(dir);
    if (!found.empty()) {
      Checkpoint c = load_checkpoint(found.back());
      if (c.config_hash != hash && !opt.force)
        throw ResumeError("refusing to resume from " + found.back().string() + ": it was written by config " +
                          hex64(c.config_hash) + ", the current config hashes to " + hex64(hash) +
                          " (pass --force to override)");
      restored = restore_state(c);
      if (fs::exists(res.metrics)) detail::truncate_metrics(res.metrics, restored->step);
      say("resuming from " + found.back().string() + " at step " + std::to_string(restored->step));
    }
  }

  TrainState st = restored ? std::move(*restored)
                           : init_state(cfg.classifier, cfg.generator_config(), cfg.train.seed);
  if (!restored) {
    std::ofstream os(res.metrics, std::ios::trunc);
    os << metrics_preamble(cfg) << '\n' << kMetricsHeader << '\n';
    if (!os) throw std::runtime_error("cannot write metrics file " + res.metrics.string());
    checkpoint(st);
  }
  std::ofstream metrics(res.metrics, std::ios::app);
  if (!metrics) throw std::runtime_error("cannot append to metrics file " + res.metrics.string());

  bool stopped = false;
  while (st.step < total) {
    if (opt.stop_after && st.step >= *opt.stop_after) {
      stopped = true;
      break;
    }
    const auto t0 = std::chrono::steady_clock::now();
    const std::int64_t step = st.step;
    const auto [lr_c, lr_g] = lr_schedule(step, cfg.train, total);
    const Batch batch = training_batch(data, cfg.train, step / spe, std::size_t(step % spe), st.rng);
    IterationRecord rec = train_step(batch, st, cfg.train, lr_c, lr_g);
    if (cfg.record_wallclock)
      rec.wallclock_ms = std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - t0).count();
    if (step % cfg.log_interval == 0) {
      metrics << metrics_row(rec) << '\n';
      metrics.flush();
      if (!metrics) throw std::runtime_error("write failed for metrics file " + res.metrics.string());
    }
    if (opt.on_record) opt.on_record(rec);
    if ((step + 1) % (spe * 10) == 0 || step + 1 == total)
      say("step " + std::to_string(step + 1) + "/" + std::to_string(total) + " ce " +
          config_detail::fmt_real(rec.ce_loss) + " ot " + config_detail::fmt_real(rec.ot_distance));
    if (cfg.checkpoint_interval > 0 && st.step % cfg.checkpoint_interval == 0 && st.step != total) checkpoint(st);
  }
  if (!stopped && (res.checkpoints.empty() || res.checkpoints.back().filename() != checkpoint_name(st.step))) checkpoint(st);
  res.state = std::move(st);
  return res;
}

}  // namespace rvs

#endif  // RVS_RUN_HPP
