#include <gtest/gtest.h>

#include <sstream>

#include "rvs/eval.hpp"
#include "support.hpp"
#include "tiny_run.hpp"

namespace rvs {
namespace {

namespace fs = std::filesystem;

struct EvalFixture : ::testing::Test {
  static inline fs::path dir;
  static inline RunConfig cfg;
  static inline Dataset test_set;

  static void SetUpTestSuite() {
    dir = test::temp_dir("eval");
    cfg = test::tiny_config((dir / "run").string(), 4);
    auto [tr, te] = synth_toy(cfg.data.toy);
    test_set = te;
    train(tr, cfg);
  }
  static void TearDownTestSuite() { fs::remove_all(dir); }

  static Model final_model() { return load_model(list_checkpoints(cfg.out_dir).back()); }
};

TEST_F(EvalFixture, WhiteboxGridReportsEveryAttackInOrder) {
  const Model m = final_model();
  const auto r = whitebox_grid(m, test_set, cfg.eval.attacks, {4, 0});
  EXPECT_EQ(r.natural, evaluate_accuracy(test_set, m.clf, std::nullopt, {4, 0}));
  ASSERT_EQ(r.attacks.size(), 2u);
  EXPECT_EQ(r.attacks[0].first, "fgsm");
  EXPECT_EQ(r.attacks[1].first, "pgd-3");
  EXPECT_EQ(r.accuracy("pgd-3"), r.attacks[1].second);
  EXPECT_FALSE(r.accuracy("cw-9"));
  EXPECT_EQ(r.config_hash, config_hash(cfg));
}

TEST_F(EvalFixture, SelfTransferEqualsWhitebox) {
  const Model m = final_model();
  const auto wb = whitebox_grid(m, test_set, cfg.eval.attacks, {4, 9});
  const auto bb = blackbox_transfer(m, m, test_set, cfg.eval.attacks, {4, 9});
  EXPECT_EQ(bb.natural, wb.natural);
  EXPECT_EQ(bb.attacks, wb.attacks);
}

TEST_F(EvalFixture, SweepStartsAtNaturalAccuracy) {
  const Model m = final_model();
  const auto eps = parse_sweep("0:20:2");
  ASSERT_EQ(eps.size(), 11u);
  EXPECT_DOUBLE_EQ(eps.back(), 20.0 / 255.0);
  const auto curve = budget_sweep(m, test_set, {0.0, 8.0 / 255}, AttackSpec::pgd(3), {4, 0});
  EXPECT_EQ(curve[0].accuracy, evaluate_accuracy(test_set, m.clf, std::nullopt, {4, 0}));
  EXPECT_THROW(budget_sweep(m, test_set, {0.1, 0.0}), InputError);
  EXPECT_THROW(parse_sweep("0:20"), ConfigError);
  EXPECT_THROW(parse_sweep("5:1:1"), ConfigError);
}

TEST_F(EvalFixture, DiversityPinnedZHasNoSpread) {
  const Model m = final_model();
  DiversityOptions opt;
  opt.k = 4;
  opt.subset = 5;
  opt.pin_z = true;
  const auto pinned = diversity_at(m, test_set, opt);
  EXPECT_LT(pinned.std, 1e-6);
  opt.pin_z = false;
  const auto free = diversity_at(m, test_set, opt);
  EXPECT_GT(free.std, 0.0);
  EXPECT_GT(free.mean, 0.0);
  const auto again = diversity_at(m, test_set, opt);
  EXPECT_EQ(again.mean, free.mean);
  EXPECT_EQ(again.std, free.std);
}

TEST_F(EvalFixture, DiversityStudyIsOrderedByStep) {
  auto paths = list_checkpoints(cfg.out_dir);
  std::reverse(paths.begin(), paths.end());
  DiversityOptions opt;
  opt.k = 3;
  opt.subset = 4;
  const auto trace = diversity_study(paths, test_set, opt);
  ASSERT_EQ(trace.size(), paths.size());
  for (std::size_t i = 1; i < trace.size(); ++i) EXPECT_LT(trace[i - 1].step, trace[i].step);
  EXPECT_THROW(diversity_study({}, test_set, opt), InputError);
  opt.k = 1;
  EXPECT_THROW(diversity_at(final_model(), test_set, opt), ConfigError);
}

TEST(DiversitySubset, SortedDeterministicAndBounded) {
  const auto a = diversity_subset(100, 10, 4);
  EXPECT_EQ(a.size(), 10u);
  EXPECT_TRUE(std::is_sorted(a.begin(), a.end()));
  EXPECT_EQ(a, diversity_subset(100, 10, 4));
  EXPECT_EQ(diversity_subset(5, 10, 4).size(), 5u);
}

TEST_F(EvalFixture, ReportWriters) {
  EvalReport r{"m", 0x12, "2026-01-01T00:00:00Z", 0.5, {{"pgd-20", 0.25}}};
  std::ostringstream csv;
  write_report_csv(csv, {r});
  EXPECT_EQ(csv.str(), "model,config_hash,attack,accuracy\nm,0000000000000012,natural,0.5\nm,0000000000000012,pgd-20,0.25\n");
  const auto j = report_json(r);
  EXPECT_EQ(j["attacks"]["pgd-20"], 0.25);
  EXPECT_EQ(j["config_hash"], "0000000000000012");
  std::ostringstream sweep;
  write_sweep_csv(sweep, {{2.0 / 255, 0.5}});
  EXPECT_EQ(sweep.str().substr(0, 28), "epsilon,epsilon_255,accuracy");
  std::ostringstream lat;
  export_latents(lat, final_model(), test_set);
  std::size_t rows = 0;
  for (char c : lat.str()) rows += c == '\n';
  EXPECT_EQ(rows, test_set.size() + 1);
}

TEST_F(EvalFixture, RejectsMismatchedData) {
  ToySpec other = cfg.data.toy;
  other.image_size = 16;
  EXPECT_THROW(whitebox_grid(final_model(), synth_toy(other).second, {}), DimensionError);
}

TEST_F(EvalFixture, AblationTrainsAllThreeVariants) {
  auto base = test::tiny_config((dir / "abl").string(), 1);
  auto [tr, te] = synth_toy(base.data.toy);
  const auto rows = ablation_grid(tr, te, base);
  ASSERT_EQ(rows.size(), 3u);
  EXPECT_EQ(rows[0].variant, Variant::noreg_ot);
  EXPECT_EQ(rows[2].variant, Variant::otreg_ot);
  EXPECT_TRUE(fs::exists(dir / "abl" / "otreg-xent" / "metrics.csv"));
  std::ostringstream os;
  write_ablation_csv(os, rows, base.train.seed);
  EXPECT_EQ(os.str().substr(0, 8), "# seed=3");
  EXPECT_NE(os.str().find("variant,config_hash,checkpoint,natural,pgd-20,cw-20"), std::string::npos);
}

}  // namespace
}  // namespace rvs
