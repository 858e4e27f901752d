#include <gtest/gtest.h>

#include <sstream>

#include "space/config.hpp"
#include "test_util.hpp"

using namespace space;

TEST(RunConfig, DefaultsAreValid) {
  const RunConfig cfg;
  EXPECT_NO_THROW(cfg.validate());
  EXPECT_EQ(cfg.train.lambda1_warmup_iters, 5000u);
  EXPECT_DOUBLE_EQ(cfg.train.lambda1_value, 1.0);
  EXPECT_DOUBLE_EQ(cfg.train.lambda2, 0.1);
  EXPECT_DOUBLE_EQ(cfg.train.q_hard, 0.99);
  EXPECT_DOUBLE_EQ(cfg.train.alpha_ema, 0.999);
  EXPECT_EQ(cfg.network.pdn_variant, PdnVariant::M);
  EXPECT_EQ(cfg.category, "toy");
}

TEST(ParseConfig, AppliesKeysCommentsAndWhitespace) {
  RunConfig cfg;
  std::istringstream in(
      "# tiny run\n"
      "pdn_variant = tiny\n"
      "  feature_dim=32   # inline comment\n"
      "\n"
      "use_fm = false\n"
      "learning_rate = 1e-3\n"
      "category = screw_bag\n"
      "iterations = 10\n"
      "iterations = 20\n");
  parse_config(in, cfg);
  EXPECT_EQ(cfg.network.pdn_variant, PdnVariant::tiny);
  EXPECT_EQ(cfg.network.feature_dim, 32u);
  EXPECT_FALSE(cfg.train.use_fm);
  EXPECT_DOUBLE_EQ(cfg.train.learning_rate, 1e-3);
  EXPECT_EQ(cfg.category, "screw_bag");
  EXPECT_EQ(cfg.train.iterations, 20u);
}

TEST(ParseConfig, ErrorsNameTheLine) {
  auto fails_with = [](const std::string& text, const std::string& needle) {
    RunConfig cfg;
    std::istringstream in(text);
    try {
      parse_config(in, cfg, "run.cfg");
      ADD_FAILURE() << "no error for: " << text;
    } catch (const ConfigError& e) {
      EXPECT_NE(std::string(e.what()).find(needle), std::string::npos) << e.what();
    }
  };
  fails_with("lambda3 = 1\n", "run.cfg:1: unknown config key 'lambda3'");
  fails_with("\nfeature_dim = many\n", "run.cfg:2:");
  fails_with("feature_dim = 12x\n", "invalid value");
  fails_with("use_fm = maybe\n", "use_fm");
  fails_with("just words\n", "expected 'key = value'");
  fails_with("pdn_variant = L\n", "pdn_variant");
}

TEST(LoadConfig, ValidatesRanges) {
  testutil::TempDir dir;
  testutil::spit(dir / "bad.cfg", "q_hard = 1.5\n");
  EXPECT_THROW(load_config((dir / "bad.cfg").string()), ConfigError);
  testutil::spit(dir / "frac.cfg", "validation_fraction = 0\n");
  EXPECT_THROW(load_config((dir / "frac.cfg").string()), ConfigError);
  EXPECT_THROW(load_config((dir / "none.cfg").string()), ConfigError);
  testutil::spit(dir / "ok.cfg", "seed = 4\n");
  EXPECT_EQ(load_config((dir / "ok.cfg").string()).train.seed, 4u);
}

TEST(FormatConfig, RoundTripsEveryKey) {
  RunConfig cfg;
  cfg.network.pdn_variant = PdnVariant::S;
  cfg.train.alpha_ema = 0.123456789012345;
  cfg.train.use_fm = false;
  cfg.augment.jitter_strength = 0.3;
  cfg.teacher_checkpoint = "/tmp/teacher.ckpt";
  RunConfig back;
  std::istringstream in(format_config(cfg));
  parse_config(in, back);
  EXPECT_EQ(format_config(back), format_config(cfg));
  EXPECT_EQ(back.train.alpha_ema, cfg.train.alpha_ema);
}

TEST(ConfigHelp, ListsEveryKeyWithItsDefault) {
  const std::string help = config_help();
  for (const auto& k : config_keys()) EXPECT_NE(help.find("  " + k.name + " = "), std::string::npos) << k.name;
  EXPECT_NE(help.find("lambda1_warmup_iters = 5000"), std::string::npos);
  EXPECT_NE(help.find("q_hard = 0.99"), std::string::npos);
}

TEST(ConfigKeys, NamesAreUnique) {
  const auto& keys = config_keys();
  for (std::size_t i = 0; i < keys.size(); ++i)
    for (std::size_t j = i + 1; j < keys.size(); ++j) EXPECT_NE(keys[i].name, keys[j].name);
  EXPECT_EQ(find_config_key("nope"), nullptr);
  ASSERT_NE(find_config_key("lambda2"), nullptr);
}
