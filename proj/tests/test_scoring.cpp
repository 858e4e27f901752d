#include <gtest/gtest.h>

#include <numeric>
#include <random>

#include "oracles.hpp"
#include "space/scoring.hpp"

using namespace space;
using T3 = Tensor<double>;

namespace {

SpaceModel<double> small_model(std::uint64_t seed = 5) {
  NetworkConfig cfg;
  cfg.pdn_variant = PdnVariant::tiny;
  cfg.feature_dim = 8;
  cfg.fe_bottleneck_dim = 8;
  cfg.input_size = 32;
  SpaceModel<double> m(cfg, seed);
  m.calibration = {0.1, 0.9, 0.2, 1.5, true};
  return m;
}

const DatasetSplit& toy() {
  static const DatasetSplit d = synth_toy_dataset(9, 2, 3, 1, 48);
  return d;
}

AnomalyMap make_map(std::size_t h, std::size_t w, std::vector<double> v, MapKind k) {
  AnomalyMap m(h, w, k);
  m.values = std::move(v);
  return m;
}

}  // namespace

TEST(ChannelMeanMap, ConstantDifference) {
  const T3 a({2, 3, 3}, 1.0), b({2, 3, 3}, 0.0);
  const auto m = channel_mean_map(a, b, 3, 3, MapKind::structural);
  for (double v : m.values) EXPECT_DOUBLE_EQ(v, 1.0);
  const auto up = channel_mean_map(a, b, 12, 7, MapKind::logical);
  EXPECT_EQ(up.height, 12u);
  EXPECT_EQ(up.width, 7u);
  EXPECT_EQ(up.kind, MapKind::logical);
  for (double v : up.values) EXPECT_NEAR(v, 1.0, 1e-12);
}

TEST(ChannelMeanMap, MatchesOracle) {
  std::mt19937_64 rng(1);
  const auto a = oracle::random_tensor(rng, {5, 4, 6});
  const auto b = oracle::random_tensor(rng, {5, 4, 6});
  const auto m = channel_mean_map(a, b, 4, 6, MapKind::structural);
  const auto ref = oracle::channel_mean(a.vec(), b.vec(), 5, 4, 6);
  for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(m.values[i], ref[i], 1e-12);
}

TEST(Calibration, QuantilesOfAnIntegerRamp) {
  std::vector<double> pool(1000);
  std::iota(pool.begin(), pool.end(), 0.0);
  EXPECT_NEAR(quantile<double>(pool, kCalibrationLo), 899.1, 1e-9);
  EXPECT_NEAR(quantile<double>(pool, kCalibrationHi), 994.005, 1e-9);
}

TEST(Calibration, PoolsValidationPixels) {
  const auto m = small_model();
  const auto cs = calibrate(m, std::span(toy().validation));
  EXPECT_TRUE(cs.valid);
  std::vector<double> s, l;
  for (const auto& v : toy().validation) {
    const auto r = raw_maps(m, v);
    s.insert(s.end(), r.structural.values.begin(), r.structural.values.end());
    l.insert(l.end(), r.logical.values.begin(), r.logical.values.end());
  }
  EXPECT_DOUBLE_EQ(cs.structural_lo, quantile<double>(s, 0.90));
  EXPECT_DOUBLE_EQ(cs.structural_hi, quantile<double>(s, 0.995));
  EXPECT_DOUBLE_EQ(cs.logical_lo, quantile<double>(l, 0.90));
  EXPECT_DOUBLE_EQ(cs.logical_hi, quantile<double>(l, 0.995));
  EXPECT_THROW(calibrate(m, std::span<const ImageSample>{}), ConfigError);
}

TEST(NormalizeMap, ExamplesAndNoClamp) {
  const auto m = make_map(1, 4, {1.0, 2.0, 3.0, 7.0}, MapKind::structural);
  const auto n = normalize_map(m, 1.0, 3.0);
  EXPECT_NEAR(n.values[0], 0.0, 1e-12);
  EXPECT_NEAR(n.values[1], 0.5, 1e-9);
  EXPECT_NEAR(n.values[2], 1.0, 1e-9);
  EXPECT_NEAR(n.values[3], 3.0, 1e-8);
  const auto flat = normalize_map(m, 2.0, 2.0);
  EXPECT_NEAR(flat.values[0], -1e9, 1e-3);
}

TEST(NormalizeMap, PicksStatsByKind) {
  const CalibrationStats cs{0.0, 1.0, 10.0, 20.0, true};
  const auto s = normalize_map(make_map(1, 1, {0.5}, MapKind::structural), cs);
  const auto l = normalize_map(make_map(1, 1, {15.0}, MapKind::logical), cs);
  EXPECT_NEAR(s.values[0], 0.5, 1e-8);
  EXPECT_NEAR(l.values[0], 0.5, 1e-8);
  EXPECT_THROW(normalize_map(make_map(1, 1, {0.0}, MapKind::total), cs), ContractError);
}

TEST(MapTotal, EqualWeights) {
  const auto t = map_total(make_map(1, 2, {1.0, -2.0}, MapKind::structural),
                           make_map(1, 2, {3.0, 4.0}, MapKind::logical));
  EXPECT_EQ(t.kind, MapKind::total);
  EXPECT_DOUBLE_EQ(t.values[0], 2.0);
  EXPECT_DOUBLE_EQ(t.values[1], 1.0);
  EXPECT_THROW(map_total(make_map(1, 2, {0, 0}, MapKind::structural),
                         make_map(2, 1, {0, 0}, MapKind::logical)),
               ContractError);
}

TEST(ImageScore, IsTheMaximum) {
  EXPECT_DOUBLE_EQ(image_score(make_map(1, 3, {-1.0, 4.5, 2.0}, MapKind::total)), 4.5);
  EXPECT_THROW(image_score(AnomalyMap{}), ContractError);
}

TEST(ImageScore, InvariantUnderMonotoneTransformOfTheArgmax) {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(-3, 3);
  for (int trial = 0; trial < 50; ++trial) {
    AnomalyMap m(5, 5, MapKind::total);
    for (auto& v : m.values) v = u(rng);
    AnomalyMap e = m;
    for (auto& v : e.values) v = std::exp(v);
    EXPECT_NEAR(std::exp(image_score(m)), image_score(e), 1e-12);
  }
}

TEST(ScoreImage, MapsMatchImageResolution) {
  const auto m = small_model();
  const auto& s = toy().test[0];
  const auto r = score_image(m, s);
  EXPECT_EQ(r.structural.height, 48u);
  EXPECT_EQ(r.structural.width, 48u);
  EXPECT_EQ(r.total.values.size(), 48u * 48u);
  EXPECT_EQ(r.structural.kind, MapKind::structural);
  EXPECT_EQ(r.logical.kind, MapKind::logical);
}

TEST(ScoreImage, TotalIsHalfOfEachNormalizedMap) {
  const auto m = small_model();
  for (const auto& s : toy().test) {
    const auto r = score_image(m, s);
    const auto& c = m.calibration;
    double best = -1e300;
    for (std::size_t i = 0; i < r.total.values.size(); ++i) {
      const double ns = (r.structural.values[i] - c.structural_lo) / (c.structural_hi - c.structural_lo + 1e-9);
      const double nl = (r.logical.values[i] - c.logical_lo) / (c.logical_hi - c.logical_lo + 1e-9);
      EXPECT_NEAR(r.total.values[i], 0.5 * ns + 0.5 * nl, 1e-6);
      best = std::max(best, 0.5 * ns + 0.5 * nl);
    }
    EXPECT_NEAR(r.score, best, 1e-6);
  }
}

TEST(ScoreImage, StructuralMapIsTeacherStudentChannelMean) {
  auto m = small_model();
  std::mt19937_64 rng(3);
  const T3 mean = oracle::random_tensor(rng, {8});
  m.teacher_stats = {mean, T3({8}, 2.0)};
  const auto& s = toy().test[1];
  const auto x = to_model_input<double>(s, 32);
  const auto t = normalize_teacher(infer<double>(m.nets.teacher, x), m.teacher_stats);
  const auto st = infer<double>(m.nets.student, x);
  const auto expected = channel_mean_map(t, st, 48, 48, MapKind::structural);
  const auto got = map_structural(m, s);
  for (std::size_t i = 0; i < got.values.size(); ++i) EXPECT_NEAR(got.values[i], expected.values[i], 1e-12);
}

TEST(ScoreImage, ZeroWeightConverterActsAsSkip) {
  auto m = small_model();
  for (auto& [name, p] : m.nets.converter.parameters()) {
    Var<double> v = p;
    v.mutable_value().fill(0.0);
  }
  auto skip = m;  // shares parameters, differs only in the flag
  skip.use_fm = false;
  const auto& s = toy().test[2];
  EXPECT_EQ(map_logical(m, s).values, map_logical(skip, s).values);
}

TEST(ScoreImage, LogicalBranchReadsShadowStudentWhenAsked) {
  auto m = small_model();
  for (auto& [name, p] : m.nets.student_shadow.parameters()) {
    Var<double> v = p;
    for (auto& w : v.mutable_value().vec()) w *= 0.5;
  }
  auto live = m;
  live.student_ema_for_fm = false;
  const auto& s = toy().test[0];
  EXPECT_NE(map_logical(m, s).values, map_logical(live, s).values);
  EXPECT_EQ(map_structural(m, s).values, map_structural(live, s).values);
}

TEST(ScoreImages, MatchesSingleImageScoring) {
  const auto m = small_model();
  const auto all = score_images(m, std::span(toy().test));
  ASSERT_EQ(all.size(), toy().test.size());
  for (std::size_t i = 0; i < all.size(); ++i)
    EXPECT_EQ(all[i].score, score_image(m, toy().test[i]).score);
}
