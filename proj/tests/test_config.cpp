#include <gtest/gtest.h>

#include "rvs/config.hpp"

namespace rvs {
namespace {

TEST(Fnv1a, ReferenceVectors) {
  EXPECT_EQ(fnv1a(""), 0xcbf29ce484222325ULL);
  EXPECT_EQ(fnv1a("a"), 0xaf63dc4c8601ec8cULL);
  EXPECT_EQ(fnv1a("foobar"), 0x85944171f73967e8ULL);
  EXPECT_EQ(hex64(0xaf63dc4c8601ec8cULL), "af63dc4c8601ec8c");
  EXPECT_EQ(hex64(1), "0000000000000001");
}

TEST(Config, EmptyTextGivesDefaults) {
  const auto c = parse_config_text("");
  EXPECT_EQ(c.train.lr_transitions, (std::vector<double>{60.0 / 179.0, 90.0 / 179.0}));
  EXPECT_EQ(c.train.sinkhorn_iters, 100);
  EXPECT_DOUBLE_EQ(c.train.label_smoothing, 0.5);
  EXPECT_EQ(c.eval.attacks.size(), 4u);
}

TEST(Config, CanonicalTextRoundTrips) {
  auto c = parse_config_text(
      "[train]\nseed = 7\nepsilon = 4/255\nvariant = noReg+OT\n[eval]\nattacks = fgsm, pgd-7, cw-3\n"
      "[classifier]\nblocks = 8:1, 16:2\nlatent_dim = 16\nnum_classes = 3\ninput = 16x16x3\n"
      "[generator]\nz_dim = 16\nbase_spatial = 4\nchannels = 8, 4, 4, 3\n");
  const auto again = parse_config_text(canonical_text(c));
  EXPECT_EQ(canonical_text(again), canonical_text(c));
  EXPECT_EQ(config_hash(again), config_hash(c));
  EXPECT_DOUBLE_EQ(c.train.epsilon, 4.0 / 255.0);
  EXPECT_EQ(c.eval.attacks[1].name(), "pgd-7");
  EXPECT_EQ(c.train.variant, Variant::noreg_ot);
}

TEST(Config, HashIgnoresOutputDirectoryOnly) {
  RunConfig a;
  RunConfig b = a;
  b.out_dir = "elsewhere";
  EXPECT_EQ(config_hash(a), config_hash(b));
  b.train.seed = 1;
  EXPECT_NE(config_hash(a), config_hash(b));
  b = a;
  b.record_wallclock = false;
  EXPECT_NE(config_hash(a), config_hash(b));
}

TEST(Config, ReportsEveryBadFieldTogether) {
  try {
    parse_config_text("[train]\nepochs = x\nmomentum = 2\n[bogus]\na = 1\n[eval]\nwho = 1\n", "t.cfg");
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    const std::string m = e.what();
    EXPECT_NE(m.find("t.cfg"), std::string::npos);
    EXPECT_NE(m.find("train.epochs"), std::string::npos);
    EXPECT_NE(m.find("bogus: unknown section"), std::string::npos);
    EXPECT_NE(m.find("eval.who: unknown key"), std::string::npos);
  }
}

TEST(Config, CrossFieldValidation) {
  EXPECT_THROW(parse_config_text("[train]\nmomentum = 1.5\n"), ConfigError);
  EXPECT_THROW(parse_config_text("[generator]\nz_dim = 3\n"), ConfigError);
  EXPECT_THROW(parse_config_text("[data]\nsource = file\n"), ConfigError);
  EXPECT_THROW(parse_config_text("[eval]\nattacks = deepfool-3\n"), ConfigError);
  EXPECT_THROW(parse_config_text("[train]\nsinkhorn_gradient = exact\n"), ConfigError);
  EXPECT_THROW(parse_config_text("[run]\nrecord_wallclock = maybe\n"), ConfigError);
}

TEST(Config, EvalEpsilonPropagatesToDefaultAttacks) {
  const auto c = parse_config_text("[eval]\nepsilon = 4/255\nalpha = 1/255\n");
  for (const auto& a : c.eval.attacks) {
    EXPECT_DOUBLE_EQ(a.epsilon, 4.0 / 255.0);
    EXPECT_DOUBLE_EQ(a.alpha, a.kind == AttackKind::fgsm ? 4.0 / 255.0 : 1.0 / 255.0);
  }
}

TEST(ParseReal, FractionsAndErrors) {
  EXPECT_DOUBLE_EQ(parse_real(" 8/255 "), 8.0 / 255.0);
  EXPECT_DOUBLE_EQ(parse_real("0.25"), 0.25);
  EXPECT_THROW(parse_real("1/0"), ConfigError);
  EXPECT_THROW(parse_real("abc"), ConfigError);
  EXPECT_THROW(parse_int("3.5"), ConfigError);
}

TEST(Config, MissingFileIsConfigError) {
  EXPECT_THROW(load_config("/nonexistent/run.cfg"), ConfigError);
}

}  // namespace
}  // namespace rvs
