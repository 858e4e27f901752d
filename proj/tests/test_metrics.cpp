#include <gtest/gtest.h>

#include <random>

#include "oracles.hpp"
#include "space/metrics.hpp"

using namespace space;

namespace {

std::vector<double> random_scores(std::mt19937_64& rng, std::size_t n, bool with_ties) {
  std::vector<double> out(n);
  std::uniform_real_distribution<double> u(0, 1);
  std::uniform_int_distribution<int> k(0, 9);
  for (auto& v : out) v = with_ties ? k(rng) : u(rng);
  return out;
}

AnomalyMap map_of(std::size_t h, std::size_t w, std::vector<double> v) {
  AnomalyMap m(h, w, MapKind::total);
  m.values = std::move(v);
  return m;
}

RegionMask mask_of(std::size_t h, std::size_t w, std::initializer_list<std::size_t> on) {
  RegionMask r(h, w);
  for (std::size_t i : on) r.bits[i] = 1;
  return r;
}

}  // namespace

TEST(Auroc, Examples) {
  const std::vector<double> lo{1, 2, 3}, hi{4, 5};
  EXPECT_DOUBLE_EQ(auroc(lo, hi), 1.0);
  EXPECT_DOUBLE_EQ(auroc(hi, lo), 0.0);
  const std::vector<double> same{2, 2};
  EXPECT_DOUBLE_EQ(auroc(same, same), 0.5);
  const std::vector<double> n{1, 2, 3}, a{2.5, 4};
  EXPECT_DOUBLE_EQ(auroc(n, a), 5.0 / 6.0);
  const std::vector<double> tie_n{0, 1}, tie_a{1};
  EXPECT_DOUBLE_EQ(auroc(tie_n, tie_a), 0.75);
  EXPECT_THROW(auroc({}, a), ContractError);
  EXPECT_THROW(auroc(n, {}), ContractError);
}

TEST(Auroc, EqualsPairwiseOracle) {
  std::mt19937_64 rng(1);
  std::uniform_int_distribution<std::size_t> size(1, 40);
  for (int trial = 0; trial < 200; ++trial) {
    const bool ties = trial % 2 == 0;
    const auto n = random_scores(rng, size(rng), ties);
    const auto a = random_scores(rng, size(rng), ties);
    EXPECT_NEAR(auroc(n, a), oracle::auroc_pairwise(n, a), 1e-12) << "trial " << trial;
  }
}

TEST(Auroc, SwappingClassesComplements) {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 50; ++trial) {
    const auto n = random_scores(rng, 17, true);
    const auto a = random_scores(rng, 9, true);
    EXPECT_NEAR(auroc(n, a) + auroc(a, n), 1.0, 1e-12);
  }
}

TEST(Auroc, InvariantUnderStrictlyMonotoneTransform) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    auto n = random_scores(rng, 20, trial % 2);
    auto a = random_scores(rng, 15, trial % 2);
    const double before = auroc(n, a);
    for (auto* v : {&n, &a})
      for (auto& x : *v) x = std::exp(3 * x) - 7;
    EXPECT_DOUBLE_EQ(auroc(n, a), before);
  }
}

TEST(PixelAuroc, SmallExample) {
  const std::vector<AnomalyMap> maps{map_of(1, 4, {0.9, 0.1, 0.2, 0.3}), map_of(1, 2, {0.5, 0.0})};
  const std::vector<std::vector<RegionMask>> regions{{mask_of(1, 4, {0})}, {mask_of(1, 2, {1})}};
  // positives {0.9, 0.0} against negatives {0.1, 0.2, 0.3, 0.5}
  EXPECT_DOUBLE_EQ(pixel_auroc(maps, regions), 0.5);
  const std::vector<std::vector<RegionMask>> wrong{{mask_of(2, 2, {0})}, {}};
  EXPECT_THROW(pixel_auroc(maps, wrong), ContractError);
}

TEST(Spro, HandComputedFourByFour) {
  // Region: the top-left 2x2 block, saturated after 2 pixels. Region scores
  // 0.9 and 0.55 reach saturation after two false positives (0.7, 0.6).
  const std::vector<double> v{0.9, 0.55, 0.7, 0.6,  //
                              0.1, 0.05, 0.5, 0.45,  //
                              0.4, 0.35, 0.3, 0.25,  //
                              0.2, 0.15, 0.12, 0.11};
  const std::vector<AnomalyMap> maps{map_of(4, 4, v)};
  const std::vector<SproRegion> regions{{0, mask_of(4, 4, {0, 1, 4, 5}), 2.0}};
  const auto curve = spro_curve(maps, regions);
  ASSERT_GE(curve.size(), 5u);
  EXPECT_DOUBLE_EQ(curve[1].spro, 0.5);
  EXPECT_DOUBLE_EQ(curve[1].fpr, 0.0);
  EXPECT_DOUBLE_EQ(curve[3].fpr, 2.0 / 12.0);
  EXPECT_DOUBLE_EQ(curve[4].spro, 1.0);
  // area = 0.5 * 2/12 + 1 * (0.3 - 2/12), divided by 0.3
  EXPECT_NEAR(spro_auc(maps, regions, 0.3), 13.0 / 18.0, 1e-9);
  EXPECT_NEAR(spro_auc(maps, regions, 2.0 / 12.0), 0.5, 1e-9);
}

TEST(Spro, SaturationOneEqualsAnyPixelDetected) {
  const std::vector<AnomalyMap> maps{map_of(1, 4, {0.9, 0.1, 0.5, 0.4})};
  const std::vector<SproRegion> regions{{0, mask_of(1, 4, {0, 1}), 1.0}};
  EXPECT_NEAR(spro_auc(maps, regions, 0.5), 1.0, 1e-12);
}

TEST(Spro, PerfectSeparationScoresOne) {
  const std::vector<AnomalyMap> maps{map_of(2, 2, {5, 4, 1, 0}), map_of(2, 2, {0, 0, 3, 0})};
  const std::vector<SproRegion> regions{{0, mask_of(2, 2, {0, 1}), 2.0}, {1, mask_of(2, 2, {2}), 1.0}};
  EXPECT_NEAR(spro_auc(maps, regions), 1.0, 1e-12);
}

TEST(Spro, AreaIsAFractionAndCurveIsMonotone) {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(0, 1);
  std::bernoulli_distribution coin(0.3);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<AnomalyMap> maps;
    std::vector<SproRegion> regions;
    for (std::size_t k = 0; k < 3; ++k) {
      AnomalyMap m(6, 6, MapKind::total);
      for (auto& v : m.values) v = trial % 2 ? std::round(u(rng) * 5) : u(rng);
      maps.push_back(m);
      RegionMask r(6, 6);
      for (auto& b : r.bits) b = coin(rng);
      r.bits[0] = 1;
      r.bits[35] = 0;
      regions.push_back({k, r, 1 + std::floor(u(rng) * static_cast<double>(r.count()))});
    }
    const auto curve = spro_curve(maps, regions);
    for (std::size_t i = 1; i < curve.size(); ++i) {
      ASSERT_GE(curve[i].fpr, curve[i - 1].fpr);
      ASSERT_GE(curve[i].spro, curve[i - 1].spro - 1e-15);
    }
    EXPECT_NEAR(curve.back().fpr, 1.0, 1e-12);
    EXPECT_NEAR(curve.back().spro, 1.0, 1e-12);
    const double a = spro_auc(maps, regions);
    EXPECT_GE(a, 0.0);
    EXPECT_LE(a, 1.0);
  }
}

TEST(Spro, Preconditions) {
  const std::vector<AnomalyMap> maps{map_of(1, 2, {0.1, 0.2})};
  EXPECT_THROW(spro_curve(maps, std::vector<SproRegion>{}), ContractError);
  const std::vector<SproRegion> all{{0, mask_of(1, 2, {0, 1}), 1.0}};
  EXPECT_THROW(spro_curve(maps, all), ContractError);
  const std::vector<SproRegion> zero_sat{{0, mask_of(1, 2, {0}), 0.0}};
  EXPECT_THROW(spro_curve(maps, zero_sat), ContractError);
  const std::vector<SproRegion> ok{{0, mask_of(1, 2, {0}), 1.0}};
  EXPECT_THROW(spro_auc(maps, ok, 0.0), ContractError);
}

TEST(Spro, RegionsClampSaturationToArea) {
  ImageSample s;
  s.gt_regions = std::vector<RegionMask>{mask_of(2, 2, {0, 1}), mask_of(2, 2, {}), mask_of(2, 2, {3})};
  s.saturation_area = {10.0, 0.0, 0.5};
  ImageSample normal;
  const std::vector<ImageSample> samples{normal, s};
  const auto r = spro_regions(samples);
  ASSERT_EQ(r.size(), 2u);  // the empty mask is dropped
  EXPECT_EQ(r[0].image, 1u);
  EXPECT_DOUBLE_EQ(r[0].saturation, 2.0);
  EXPECT_DOUBLE_EQ(r[1].saturation, 0.5);
}
