#include <gtest/gtest.h>

#include <limits>
#include <sstream>

#include "space/trainer.hpp"

using namespace space;
using T3 = Tensor<double>;

namespace {

NetworkConfig small_net() {
  NetworkConfig cfg;
  cfg.pdn_variant = PdnVariant::tiny;
  cfg.feature_dim = 8;
  cfg.fe_bottleneck_dim = 8;
  cfg.input_size = 32;
  return cfg;
}

TrainConfig small_train() {
  TrainConfig cfg;
  cfg.learning_rate = 1e-3;
  cfg.lambda1_warmup_iters = 0;
  cfg.seed = 3;
  return cfg;
}

AugmentSpec no_augment() {
  AugmentSpec a;
  a.weak_max_shift = 0;
  a.rand_n = 0;
  a.flip_h = a.flip_v = false;
  a.jitter_strength = 0;
  return a;
}

const DatasetSplit& toy() {
  static const DatasetSplit d = synth_toy_dataset(7, 4, 2, 1, 32);
  return d;
}

std::vector<T3> units(std::size_t n = 1) {
  std::vector<T3> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(to_unit_tensor<double>(toy().train[i].pixels, 32));
  return out;
}

std::vector<T3> values(const NamedParams<double>& ps) {
  std::vector<T3> out;
  for (const auto& [name, p] : ps) out.push_back(p.value());
  return out;
}

SpaceModel<double> fresh_model(std::uint64_t seed = 11) {
  SpaceModel<double> m(small_net(), seed);
  m.teacher_stats = compute_teacher_stats(m.nets.teacher, std::span(toy().train), 32);
  return m;
}

std::size_t count_fields(const std::string& line) {
  return static_cast<std::size_t>(std::count(line.begin(), line.end(), ',')) + 1;
}

}  // namespace

TEST(TrainConfig, DefaultSchedule) {
  const TrainConfig cfg;
  EXPECT_EQ(cfg.iterations, 70000u);
  EXPECT_EQ(lambda1_at(0, cfg), 0.0);
  EXPECT_EQ(lambda1_at(4999, cfg), 0.0);
  EXPECT_EQ(lambda1_at(5000, cfg), 1.0);
  EXPECT_EQ(lambda1_at(69999, cfg), 1.0);
  EXPECT_DOUBLE_EQ(cfg.lambda2, 0.1);
  EXPECT_DOUBLE_EQ(cfg.q_hard, 0.99);
  EXPECT_DOUBLE_EQ(cfg.alpha_ema, 0.999);
  EXPECT_DOUBLE_EQ(cfg.learning_rate, 1e-4);
}

TEST(TrainConfig, Validation) {
  TrainConfig cfg;
  cfg.batch_size = 0;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = {};
  cfg.q_hard = 1.5;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = {};
  cfg.alpha_ema = -0.1;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = {};
  cfg.student_weight_ema = 1.0;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = {};
  cfg.learning_rate = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(cfg.validate(), ConfigError);
}

TEST(LossCsv, HeaderAndRowAgree) {
  LossBundle b;
  b.l_ts = 0.125;
  b.sel_s = 1.0 / 3.0;
  const std::string row = loss_csv_row(42, b);
  EXPECT_EQ(count_fields(row), count_fields(kLossCsvHeader));
  EXPECT_EQ(row.rfind("42,0.125,", 0), 0u);
  EXPECT_NE(row.find("0.333333333"), std::string::npos);
}

TEST(AdamW, SingleStepByHand) {
  // loss = w^2 at w = 1: grad 2, bias-corrected update 2 / (2 + eps) ~ 1
  for (double wd : {0.0, 0.5}) {
    Var<double> w = Var<double>::parameter(T3({1}, 1.0));
    AdamW<double> opt(0.1);
    opt.add_group({{"w", w}}, wd);
    opt.zero_grad();
    backward(sum(sq_diff(w, Var<double>::constant(T3({1}, 0.0)))));
    opt.step();
    EXPECT_NEAR(w.value()[0], 1.0 * (1 - 0.1 * wd) - 0.1, 1e-7);
  }
}

TEST(MakeViews, DeterministicPerSlotAndIteration) {
  const auto u = units()[0];
  const AugmentSpec aug;
  const auto a = make_views(u, aug, 1, 5, 0);
  const auto b = make_views(u, aug, 1, 5, 0);
  EXPECT_EQ(a.weak, b.weak);
  EXPECT_EQ(a.strong, b.strong);
  EXPECT_EQ(a.jitter, b.jitter);
  EXPECT_EQ(a.original, standardize(u));
  const auto c = make_views(u, aug, 1, 6, 0);
  const auto d = make_views(u, aug, 1, 5, 1);
  EXPECT_NE(a.strong, c.strong);
  EXPECT_NE(a.strong, d.strong);
}

TEST(Trainer, SameSeedSameTrajectory) {
  auto m1 = fresh_model(), m2 = fresh_model();
  const auto cfg = small_train();
  const AugmentSpec aug;
  Trainer<double> t1(m1, cfg, aug), t2(m2, cfg, aug);
  const auto batch = units(2);
  for (int i = 0; i < 4; ++i) EXPECT_EQ(t1.step(batch), t2.step(batch));
  EXPECT_EQ(values(m1.nets.all_parameters()), values(m2.nets.all_parameters()));
  EXPECT_EQ(m1.criterion.upsilon, m2.criterion.upsilon);
  EXPECT_EQ(m1.iteration, 4u);
}

TEST(Trainer, TeacherNeverChanges) {
  auto m = fresh_model();
  const auto before = values(m.nets.teacher.parameters());
  Trainer<double> t(m, small_train(), AugmentSpec{});
  const auto batch = units();
  for (int i = 0; i < 3; ++i) t.step(batch);
  EXPECT_EQ(values(m.nets.teacher.parameters()), before);
}

TEST(Trainer, ZeroWeightEmaShadowTracksLiveStudent) {
  auto m = fresh_model();
  auto cfg = small_train();
  cfg.student_weight_ema = 0;
  Trainer<double> t(m, cfg, AugmentSpec{});
  const auto batch = units();
  for (int i = 0; i < 3; ++i) {
    t.step(batch);
    EXPECT_EQ(values(m.nets.student_shadow.parameters()), values(m.nets.student.parameters()));
  }
}

TEST(Trainer, EmaShadowLagsLiveStudent) {
  auto m = fresh_model();
  const auto shadow0 = values(m.nets.student_shadow.parameters());
  Trainer<double> t(m, small_train(), AugmentSpec{});
  t.step(units());
  const auto live = values(m.nets.student.parameters());
  const auto shadow = values(m.nets.student_shadow.parameters());
  for (std::size_t i = 0; i < live.size(); ++i)
    for (std::size_t k = 0; k < live[i].size(); ++k)
      EXPECT_NEAR(shadow[i][k], 0.999 * shadow0[i][k] + 0.001 * live[i][k], 1e-15);
}

TEST(Trainer, BootstrapSeedsThresholdFromFirstStudent) {
  auto m = fresh_model();
  const auto u = units()[0];
  const auto x = standardize(u);
  const T3 expected = sq_diff(normalize_teacher(infer<double>(m.nets.teacher, x), m.teacher_stats),
                              infer<double>(m.nets.student, x));
  Trainer<double> t(m, small_train(), no_augment());
  const LossBundle b = t.step(std::vector<T3>{u});
  ASSERT_TRUE(m.criterion.initialized);
  EXPECT_EQ(m.criterion.upsilon, expected);
  EXPECT_EQ(b.sel_o, 0.0);  // nothing exceeds a threshold equal to itself
}

TEST(Trainer, WarmupStudentUpdateIgnoresAugmentedViews) {
  // With lambda1 = 0 the student only sees the unaugmented view, so changing
  // the strong augmentation must not change the student update.
  auto cfg = small_train();
  cfg.lambda1_warmup_iters = 100;
  AugmentSpec heavy, light;
  light.rand_n = 0;
  auto a = fresh_model(), b = fresh_model();
  Trainer<double> ta(a, cfg, heavy), tb(b, cfg, light);
  const auto batch = units();
  for (int i = 0; i < 3; ++i) {
    ta.step(batch);
    tb.step(batch);
  }
  EXPECT_EQ(values(a.nets.student.parameters()), values(b.nets.student.parameters()));

  cfg.lambda1_warmup_iters = 0;
  auto c = fresh_model(), d = fresh_model();
  Trainer<double> tc(c, cfg, heavy), td(d, cfg, light);
  for (int i = 0; i < 3; ++i) {
    tc.step(batch);
    td.step(batch);
  }
  EXPECT_NE(values(c.nets.student.parameters()), values(d.nets.student.parameters()));
}

TEST(Trainer, DisabledConverterIsNotOptimized) {
  auto m = fresh_model();
  auto cfg = small_train();
  cfg.use_fm = false;
  const auto before = values(m.nets.converter.parameters());
  Trainer<double> t(m, cfg, AugmentSpec{});
  for (int i = 0; i < 2; ++i) t.step(units());
  EXPECT_EQ(values(m.nets.converter.parameters()), before);
  EXPECT_FALSE(m.use_fm);
}

TEST(Trainer, TeacherStudentLossDecreasesOnOneImage) {
  auto m = fresh_model();
  auto cfg = small_train();
  cfg.lambda1_warmup_iters = 1000;
  Trainer<double> t(m, cfg, no_augment());
  const auto batch = units();
  double first = 0, last = 0;
  for (int i = 0; i < 200; ++i) {
    const double l = t.step(batch).l_ts;
    if (i < 10) first += l;
    if (i >= 190) last += l;
  }
  EXPECT_LT(last, 0.5 * first);
}

TEST(Trainer, NonFiniteLossIsNumericError) {
  auto m = fresh_model();
  m.teacher_stats.std[0] = std::numeric_limits<double>::quiet_NaN();
  Trainer<double> t(m, small_train(), AugmentSpec{});
  EXPECT_THROW(t.step(units()), NumericError);
}

TEST(Train, HooksCalibrationAndFlags) {
  SpaceModel<double> m(small_net(), 2);
  auto cfg = small_train();
  cfg.iterations = 6;
  cfg.checkpoint_every = 2;
  cfg.student_ema_for_fm = false;
  std::vector<std::uint64_t> iters;
  std::vector<std::uint64_t> checkpoints;
  TrainHooks<double> hooks;
  hooks.on_step = [&](std::uint64_t it, const LossBundle& b) {
    iters.push_back(it);
    EXPECT_TRUE(b.finite());
  };
  hooks.on_checkpoint = [&](const SpaceModel<double>& s) { checkpoints.push_back(s.iteration); };
  train(m, cfg, AugmentSpec{}, toy(), hooks);
  EXPECT_EQ(iters, (std::vector<std::uint64_t>{0, 1, 2, 3, 4, 5}));
  EXPECT_EQ(checkpoints, (std::vector<std::uint64_t>{2, 4}));
  EXPECT_TRUE(m.calibration.valid);
  EXPECT_LE(m.calibration.structural_lo, m.calibration.structural_hi);
  EXPECT_LE(m.calibration.logical_lo, m.calibration.logical_hi);
  EXPECT_FALSE(m.student_ema_for_fm);
  EXPECT_EQ(m.iteration, 6u);
}

TEST(Train, EmptyTrainingSetIsConfigError) {
  SpaceModel<double> m(small_net(), 2);
  DatasetSplit empty;
  EXPECT_THROW(train(m, small_train(), AugmentSpec{}, empty), ConfigError);
}
