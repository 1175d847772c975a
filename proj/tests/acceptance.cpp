// Acceptance gate: one PASS/FAIL line per criterion, nonzero exit on any FAIL.
// Usage: acceptance [criterion numbers...]   (default: all)

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <iterator>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "gradcheck_suite.hpp"
#include "rvs/eval.hpp"
#include "rvs/runtime.hpp"
#include "tiny_run.hpp"

#ifndef RVS_CONFIG_DIR
#define RVS_CONFIG_DIR "configs"
#endif

namespace fs = std::filesystem;
using namespace rvs;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Verdict {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

std::string pct(double v) { return fmt("%.1f%%", 100 * v); }

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), {}};
}

double median3(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  return v[v.size() / 2];
}

bool contract_violation = false;

// ---------------------------------------------------------------------------

Verdict autodiff() {
  const auto t0 = Clock::now();
  const auto ops = test::run_gradcheck(100, 2024);
  const double composite = test::composite_phi_error(7);
  const double took = seconds_since(t0);
  const auto worst = *std::max_element(ops.begin(), ops.end(), [](auto& a, auto& b) { return a.worst < b.worst; });
  bool ok = composite < 1e-3 && took < 120;
  std::string failed;
  for (const auto& r : ops)
    if (!(r.worst < 1e-4)) {
      ok = false;
      failed += " " + r.name + "=" + fmt("%.2e", r.worst);
    }
  return {ok, std::to_string(ops.size()) + " ops x 100 trials, worst " + worst.name + " " + fmt("%.2e", worst.worst) +
                  (failed.empty() ? "" : ", over 1e-4:" + failed) + "; composite dD/dPhi " + fmt("%.2e", composite) +
                  "; " + fmt("%.1f s", took)};
}

Verdict ot_oracle() {
  const auto t0 = Clock::now();
  Rng rng(11);
  double worst_rel = 0, worst_marg = 0, worst_op = 0;
  int op_bad = 0;
  for (int i = 0; i < 50; ++i) {
    const std::size_t n = 2 + std::size_t(i % 5), d = 8;
    // squared distances between uniform points of [0,1]^d, as in the latent cost
    const auto a = uniform_tensor<double>({n, d}, rng, 0, 1);
    const auto b = uniform_tensor<double>({n, d}, rng, 0, 1);
    Tape<double> tape;
    const Var<double> c = cost_matrix(tape.constant(a), tape.constant(b));
    const Tensor<double> u(Shape{n}, 1.0 / double(n));
    const double exact = exact_ot_lp(c.value(), u, u);

    const auto fine = sinkhorn_distance(c, {1e-3, 2000, SinkhornGradient::unrolled, true});
    worst_rel = std::max(worst_rel, std::abs(fine.distance.value().item() - exact) / exact);
    worst_marg = std::max(worst_marg, fine.plan.marginal_error());

    const double e = sinkhorn_distance(c, {0.01, 100}).plan.marginal_error();
    worst_op = std::max(worst_op, e);
    op_bad += e > 1e-4;
  }
  const double took = seconds_since(t0);
  const bool ok = worst_rel <= 0.02 && worst_marg <= 1e-6 && worst_op <= 1e-4 && took < 60;
  return {ok, "reg 1e-3/2000 it: worst rel err " + fmt("%.2e", worst_rel) + ", marginals " + fmt("%.1e", worst_marg) +
                  "; reg 0.01/100 it: worst marginal " + fmt("%.1e", worst_op) + " (" + std::to_string(op_bad) +
                  "/50 over 1e-4); " + fmt("%.1f s", took)};
}

// ---------------------------------------------------------------------------
// Toy experiment shared by criteria 3-7.

struct ToyRun {
  std::string label;
  fs::path dir;
  std::vector<fs::path> checkpoints;
  Model model;
  double natural = 0, pgd10 = 0;
};

struct ToyExperiment {
  RunConfig base;
  Dataset train_set, test_set;
  std::map<std::string, std::vector<ToyRun>> runs;  // by arm, seeds in order
  double seconds = 0;
  std::optional<std::string> error;
};

const std::vector<std::uint64_t> kSeeds{1, 2, 3};
const std::vector<std::string> kArms{"natural", "OT-Reg+OT", "noReg+OT", "OT-Reg+Xent"};

ToyRun train_arm(const ToyExperiment& ex, const std::string& arm, std::uint64_t seed, const fs::path& root) {
  RunConfig cfg = ex.base;
  if (arm == "natural") {
    cfg.train.method = Method::natural;
  } else {
    cfg.train.method = Method::synthesis;
    cfg.train.variant = parse_variant(arm);
  }
  cfg.train.seed = seed;
  cfg.record_wallclock = false;
  cfg.name = arm + "-s" + std::to_string(seed);
  cfg.out_dir = (root / cfg.name).string();
  const auto t0 = Clock::now();
  TrainResult res = train(ex.train_set, cfg);
  ToyRun r{cfg.name, cfg.out_dir, list_checkpoints(cfg.out_dir), model_from_state(cfg.name, cfg, res.state)};
  const EvalOptions eo{cfg.eval.batch_size, cfg.eval.seed};
  r.natural = evaluate_accuracy(ex.test_set, r.model.clf, std::nullopt, eo);
  r.pgd10 = evaluate_accuracy(ex.test_set, r.model.clf, AttackSpec::pgd(10, cfg.eval.epsilon, cfg.eval.alpha), eo);
  std::cerr << "  " << cfg.name << ": natural " << pct(r.natural) << ", pgd-10 " << pct(r.pgd10) << " ("
            << fmt("%.0f s", seconds_since(t0)) << ")" << std::endl;
  return r;
}

ToyExperiment& toy() {
  static ToyExperiment ex = [] {
    ToyExperiment e;
    const auto t0 = Clock::now();
    try {
      e.base = load_config(fs::path(RVS_CONFIG_DIR) / "toy.cfg");
      std::tie(e.train_set, e.test_set) = load_data(e.base.data);
      const fs::path root = test::temp_dir("acceptance-toy");
      std::cerr << "training " << kArms.size() * kSeeds.size() << " toy models in " << root << std::endl;
      for (const auto& arm : kArms)
        for (auto s : kSeeds) e.runs[arm].push_back(train_arm(e, arm, s, root));
    } catch (const ContractError& err) {
      contract_violation = true;
      e.error = err.what();
    } catch (const std::exception& err) {
      e.error = err.what();
    }
    e.seconds = seconds_since(t0);
    return e;
  }();
  return ex;
}

// The OT-Reg+OT seed with the median PGD-10 accuracy, and its natural twin.
std::pair<const ToyRun*, const ToyRun*> representative(const ToyExperiment& ex) {
  const auto& ot = ex.runs.at("OT-Reg+OT");
  std::vector<std::size_t> order{0, 1, 2};
  std::sort(order.begin(), order.end(), [&](auto a, auto b) { return ot[a].pgd10 < ot[b].pgd10; });
  const std::size_t m = order[1];
  return {&ot[m], &ex.runs.at("natural")[m]};
}

std::vector<double> column(const std::vector<ToyRun>& runs, double ToyRun::*field) {
  std::vector<double> v;
  for (const auto& r : runs) v.push_back(r.*field);
  return v;
}

Verdict attack_sanity() {
  const auto t0 = Clock::now();
  Rng rng(1);
  bool identical = true;
  {
    ClassifierConfig cc;
    cc.conv_blocks = {{4, 1}, {8, 2}};
    cc.latent_dim = 8;
    cc.num_classes = 3;
    cc.in_h = cc.in_w = 8;
    const auto clf = Classifier<float>::create(cc, rng);
    const auto x = uniform_tensor<float>({6, 8, 8, 3}, rng, 0, 1);
    const std::vector<int> y{0, 1, 2, 0, 1, 2};
    const double eps = 8.0 / 255;
    Rng r1(5), r2(5);
    const auto a = run_attack(x, y, frozen(clf), AttackSpec::fgsm(eps), r1);
    const auto b = run_attack(x, y, frozen(clf), AttackSpec{AttackKind::pgd, eps, eps, 1, false}, r2);
    identical = a == b && !(a == x);
  }

  // Linear logits z = x W: the CE gradient wrt x is W (softmax(z) - onehot(y)).
  double linear_err = 0;
  {
    const std::size_t d = 12, k = 4;
    const auto w = normal_tensor<double>({d, k}, rng);
    const auto x = uniform_tensor<double>({1, 2, 2, 3}, rng, 0, 1);
    const double eps = 0.05, alpha = 0.02;
    const int y = 2;
    LogitModel<double> lin = [w](Tape<double>& tape, Var<double> v) {
      return matmul(reshape(v, Shape{1, 12}), tape.constant(w));
    };
    Rng ar(3);
    const auto adv = run_attack(x, {y}, lin, AttackSpec{AttackKind::pgd, eps, alpha, 5, false}, ar);
    std::vector<double> cur(x.raw(), x.raw() + d);
    for (int s = 0; s < 5; ++s) {
      std::vector<double> z(k, 0.0), p(k);
      for (std::size_t j = 0; j < k; ++j)
        for (std::size_t i = 0; i < d; ++i) z[j] += cur[i] * w[i * k + j];
      const double m = *std::max_element(z.begin(), z.end());
      double sum = 0;
      for (std::size_t j = 0; j < k; ++j) sum += p[j] = std::exp(z[j] - m);
      for (std::size_t i = 0; i < d; ++i) {
        double g = 0;
        for (std::size_t j = 0; j < k; ++j) g += w[i * k + j] * (p[j] / sum - (int(j) == y));
        const double step = cur[i] + alpha * double((g > 0) - (g < 0));
        cur[i] = std::clamp(std::clamp(step, x[i] - eps, x[i] + eps), 0.0, 1.0);
      }
    }
    for (std::size_t i = 0; i < d; ++i) linear_err = std::max(linear_err, std::abs(adv[i] - cur[i]));
  }
  const double unit = seconds_since(t0);

  auto& ex = toy();
  if (ex.error) return {false, "toy experiment failed: " + *ex.error};
  const auto t1 = Clock::now();
  double worst = 0;
  const EvalOptions eo{ex.base.eval.batch_size, ex.base.eval.seed};
  for (const auto& r : ex.runs.at("natural"))
    worst = std::max(worst, evaluate_accuracy(ex.test_set, r.model.clf, AttackSpec::pgd(20), eo));
  const double took = unit + seconds_since(t1);
  const bool ok = identical && linear_err < 1e-12 && worst < 0.15 && took < 300;
  return {ok, std::string("fgsm == pgd-1 bitwise: ") + (identical ? "yes" : "no") + "; linear closed form max err " +
                  fmt("%.1e", linear_err) + "; natural models pgd-20 accuracy (worst of 3 seeds) " + pct(worst) +
                  "; " + fmt("%.1f s", took) + " excluding training"};
}

Verdict trend() {
  auto& ex = toy();
  if (ex.error) return {false, "toy experiment failed: " + *ex.error};
  const double ot = median3(column(ex.runs.at("OT-Reg+OT"), &ToyRun::pgd10));
  const double noreg = median3(column(ex.runs.at("noReg+OT"), &ToyRun::pgd10));
  const double xent = median3(column(ex.runs.at("OT-Reg+Xent"), &ToyRun::pgd10));
  const double ot_nat = median3(column(ex.runs.at("OT-Reg+OT"), &ToyRun::natural));
  const double nat_nat = median3(column(ex.runs.at("natural"), &ToyRun::natural));
  const bool a = ot - noreg >= 0.15, b = std::abs(ot_nat - nat_nat) <= 0.05, c = ot >= xent;
  const bool fast = ex.seconds < 1800;
  std::ostringstream os;
  os << "median pgd-10: OT-Reg+OT " << pct(ot) << ", noReg+OT " << pct(noreg) << ", OT-Reg+Xent " << pct(xent)
     << "; (a) gap " << fmt("%.1f", 100 * (ot - noreg)) << " pts " << (a ? "ok" : "FAIL") << "; (b) natural "
     << pct(ot_nat) << " vs twin " << pct(nat_nat) << " " << (b ? "ok" : "FAIL") << "; (c) "
     << (c ? "ok" : "FAIL") << "; " << fmt("%.0f s", ex.seconds) << " for 12 runs";
  return {a && b && c && fast, os.str()};
}

Verdict diversity() {
  auto& ex = toy();
  if (ex.error) return {false, "toy experiment failed: " + *ex.error};
  const auto t0 = Clock::now();
  const ToyRun* rep = representative(ex).first;
  DiversityOptions opt;
  opt.k = 32;
  opt.subset = ex.base.eval.diversity_subset;
  opt.seed = ex.base.eval.seed;
  const auto trace = diversity_study(rep->checkpoints, ex.test_set, opt);
  bool spread = true;
  for (const auto& p : trace) spread = spread && p.std > 0;
  const bool falls = trace.back().mean < trace.front().mean;
  const double took = seconds_since(t0);
  return {spread && falls && took < 300,
          rep->label + ", " + std::to_string(trace.size()) + " checkpoints: mean " + fmt("%.4f", trace.front().mean) +
              " at step 0 -> " + fmt("%.4f", trace.back().mean) + " at step " + std::to_string(trace.back().step) +
              "; min std " +
              fmt("%.2e", std::min_element(trace.begin(), trace.end(), [](auto& a, auto& b) { return a.std < b.std; })->std) +
              "; " + fmt("%.1f s", took)};
}

Verdict sweep() {
  auto& ex = toy();
  if (ex.error) return {false, "toy experiment failed: " + *ex.error};
  const auto t0 = Clock::now();
  const auto [rob, nat] = representative(ex);
  const auto eps = parse_sweep("0:20:2");
  const EvalOptions eo{ex.base.eval.batch_size, ex.base.eval.seed};
  const auto rc = budget_sweep(rob->model, ex.test_set, eps, AttackSpec::pgd(20), eo);
  const auto nc = budget_sweep(nat->model, ex.test_set, eps, AttackSpec::pgd(20), eo);
  bool monotone = true, dominates = true;
  std::string curve;
  for (std::size_t i = 0; i < rc.size(); ++i) {
    if (i > 0) monotone = monotone && rc[i].accuracy <= rc[i - 1].accuracy + 0.01;
    if (i > 0) dominates = dominates && rc[i].accuracy > nc[i].accuracy;
    curve += (i ? " " : "") + fmt("%.0f", 100 * rc[i].accuracy) + "/" + fmt("%.0f", 100 * nc[i].accuracy);
  }
  const double took = seconds_since(t0);
  return {monotone && dominates && took < 300,
          rob->label + " vs " + nat->label + " pgd-20 % at eps 0..20/255: " + curve + "; non-increasing " +
              (monotone ? "ok" : "FAIL") + ", dominates " + (dominates ? "ok" : "FAIL") + "; " + fmt("%.1f s", took)};
}

Verdict budget(std::uint64_t checks_before) {
  auto& ex = toy();
  const std::uint64_t checked = budget_checks() - checks_before;
  const bool ok = !contract_violation && !ex.error && checked > 0;
  return {ok, std::to_string(checked) + " pixels checked at zero tolerance across training and attacks, " +
                  (contract_violation ? "violation raised" : "no violation")};
}

Verdict persistence() {
  const fs::path root = test::temp_dir("acceptance-persist");
  auto run = [&](const std::string& name, int epochs, const TrainOptions& opt = {}) {
    RunConfig cfg = test::tiny_config((root / name).string(), epochs);
    const auto [tr, te] = load_data(cfg.data);
    return train(tr, cfg, opt);
  };
  const auto a = run("a", 4), b = run("b", 4);
  const bool same_metrics = slurp(a.metrics) == slurp(b.metrics);
  const bool same_ckpt = slurp(a.checkpoints.back()) == slurp(b.checkpoints.back());

  const Checkpoint c = load_checkpoint(a.checkpoints.back());
  save_checkpoint(c, root / "copy.bin");
  save_checkpoint(make_checkpoint(checkpoint_config(c), restore_state(c)), root / "rebuilt.bin");
  const std::string orig = slurp(a.checkpoints.back());
  const bool round_trip = slurp(root / "copy.bin") == orig && slurp(root / "rebuilt.bin") == orig;

  TrainOptions stop;
  stop.stop_after = 5;
  run("r", 4, stop);
  TrainOptions resume;
  resume.resume = true;
  const auto r = run("r", 4, resume);
  const bool resumed = slurp(r.metrics) == slurp(a.metrics) && slurp(r.checkpoints.back()) == orig;
  fs::remove_all(root);
  auto yn = [](bool v) { return v ? std::string("ok") : std::string("FAIL"); };
  return {same_metrics && same_ckpt && round_trip && resumed,
          "identical metrics " + yn(same_metrics) + ", identical checkpoints " + yn(same_ckpt) +
              ", bit-exact round trip " + yn(round_trip) + ", resume after interruption " + yn(resumed)};
}

}  // namespace

int main(int argc, char** argv) {
  tune_allocator();
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));
  auto wanted = [&](int id) { return only.empty() || only.count(id) > 0; };
  const std::uint64_t checks_before = budget_checks();

  struct Row {
    int id;
    const char* name;
    Verdict v;
  };
  std::vector<Row> rows;
  auto run = [&](int id, const char* name, auto&& f) {
    if (!wanted(id)) return;
    Verdict v;
    try {
      v = f();
    } catch (const ContractError& e) {
      contract_violation = true;
      v = {false, std::string("contract violation: ") + e.what()};
    } catch (const std::exception& e) {
      v = {false, std::string("error: ") + e.what()};
    }
    std::cerr << "criterion " << id << " done" << std::endl;
    rows.push_back({id, name, v});
  };

  run(1, "autodiff correctness", autodiff);
  run(2, "OT oracle", ot_oracle);
  run(4, "attack sanity", attack_sanity);
  run(5, "end-to-end trend", trend);
  run(6, "diversity reproduction", diversity);
  run(7, "budget sweep", sweep);
  run(3, "budget invariants", [&] { return budget(checks_before); });
  run(8, "determinism and persistence", persistence);

  std::sort(rows.begin(), rows.end(), [](const Row& a, const Row& b) { return a.id < b.id; });
  int failed = 0;
  for (const auto& r : rows) {
    std::cout << (r.v.pass ? "PASS" : "FAIL") << "  criterion " << r.id << " (" << r.name << "): " << r.v.detail
              << std::endl;
    failed += !r.v.pass;
  }
  std::cout << rows.size() - std::size_t(failed) << "/" << rows.size() << " criteria passed" << std::endl;
  return failed ? 1 : 0;
}
