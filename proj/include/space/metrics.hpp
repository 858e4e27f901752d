#pragma once

#include <algorithm>
#include <numeric>
#include <span>
#include <vector>

#include "space/datasets.hpp"
#include "space/errors.hpp"
#include "space/scoring.hpp"

namespace space {

// P(anomalous > normal) + 0.5 P(tie), from midranks of the pooled scores.
inline double auroc(std::span<const double> normal, std::span<const double> anomalous) {
  if (normal.empty() || anomalous.empty())
    throw ContractError("auroc needs at least one normal and one anomalous score");
  struct Item {
    double score;
    bool positive;
  };
  std::vector<Item> all;
  all.reserve(normal.size() + anomalous.size());
  for (double s : normal) all.push_back({s, false});
  for (double s : anomalous) all.push_back({s, true});
  std::sort(all.begin(), all.end(), [](const Item& a, const Item& b) { return a.score < b.score; });
  long double rank_sum = 0;
  for (std::size_t i = 0; i < all.size();) {
    std::size_t j = i;
    std::size_t pos = 0;
    while (j < all.size() && all[j].score == all[i].score) pos += all[j++].positive;
    // Ranks i+1 .. j share the midrank.
    const long double midrank = (static_cast<long double>(i + 1) + static_cast<long double>(j)) / 2;
    rank_sum += midrank * static_cast<long double>(pos);
    i = j;
  }
  const auto np = static_cast<long double>(anomalous.size());
  const auto nn = static_cast<long double>(normal.size());
  return static_cast<double>((rank_sum - np * (np + 1) / 2) / (np * nn));
}

// Pixel-level AUROC: region pixels are positives, everything else negative.
inline double pixel_auroc(std::span<const AnomalyMap> maps,
                          std::span<const std::vector<RegionMask>> regions) {
  if (maps.size() != regions.size()) throw ContractError("pixel_auroc: maps/masks count differ");
  std::vector<double> neg, pos;
  for (std::size_t k = 0; k < maps.size(); ++k) {
    const AnomalyMap& m = maps[k];
    std::vector<std::uint8_t> inside(m.values.size(), 0);
    for (const auto& r : regions[k]) {
      if (r.height != m.height || r.width != m.width)
        throw ContractError("pixel_auroc: mask size differs from map size");
      for (std::size_t i = 0; i < r.bits.size(); ++i) inside[i] |= r.bits[i];
    }
    for (std::size_t i = 0; i < m.values.size(); ++i)
      (inside[i] ? pos : neg).push_back(m.values[i]);
  }
  return auroc(neg, pos);
}

struct SproRegion {
  std::size_t image = 0;
  RegionMask mask;
  double saturation = 0;  // pixels, > 0
};

struct SproPoint {
  double fpr = 0;
  double spro = 0;
};

// The (FPR, mean sPRO) curve swept from the highest threshold downwards;
// a pixel is detected when its score is >= the threshold. Negatives are
// pixels outside every region.
inline std::vector<SproPoint> spro_curve(std::span<const AnomalyMap> maps,
                                         std::span<const SproRegion> regions) {
  if (regions.empty()) throw ContractError("spro needs at least one region");
  struct Pixel {
    double score;
    std::size_t image, index;
  };
  std::vector<std::vector<std::vector<std::size_t>>> owner(maps.size());
  for (std::size_t k = 0; k < maps.size(); ++k) owner[k].resize(maps[k].values.size());
  for (std::size_t r = 0; r < regions.size(); ++r) {
    const auto& reg = regions[r];
    if (reg.image >= maps.size()) throw ContractError("spro region refers to a missing map");
    const AnomalyMap& m = maps[reg.image];
    if (reg.mask.height != m.height || reg.mask.width != m.width)
      throw ContractError("spro region size differs from map size");
    if (!(reg.saturation > 0)) throw ContractError("spro saturation area must be positive");
    for (std::size_t i = 0; i < reg.mask.bits.size(); ++i)
      if (reg.mask.bits[i]) owner[reg.image][i].push_back(r);
  }
  std::vector<Pixel> px;
  std::size_t negatives = 0;
  for (std::size_t k = 0; k < maps.size(); ++k)
    for (std::size_t i = 0; i < maps[k].values.size(); ++i) {
      px.push_back({maps[k].values[i], k, i});
      negatives += owner[k][i].empty();
    }
  if (negatives == 0) throw ContractError("spro needs at least one negative pixel");
  std::sort(px.begin(), px.end(), [](const Pixel& a, const Pixel& b) { return a.score > b.score; });

  std::vector<double> detected(regions.size(), 0);
  double spro_sum = 0;
  std::size_t false_pos = 0;
  std::vector<SproPoint> curve{{0, 0}};
  for (std::size_t i = 0; i < px.size();) {
    std::size_t j = i;
    while (j < px.size() && px[j].score == px[i].score) {
      const auto& owners = owner[px[j].image][px[j].index];
      if (owners.empty()) ++false_pos;
      for (std::size_t r : owners) {
        const double sat = regions[r].saturation;
        const double before = std::min(1.0, detected[r] / sat);
        detected[r] += 1;
        spro_sum += std::min(1.0, detected[r] / sat) - before;
      }
      ++j;
    }
    curve.push_back({static_cast<double>(false_pos) / static_cast<double>(negatives),
                     spro_sum / static_cast<double>(regions.size())});
    i = j;
  }
  return curve;
}

// Trapezoidal area under the sPRO curve up to fpr_limit, divided by fpr_limit.
inline double spro_area(const std::vector<SproPoint>& curve, double fpr_limit) {
  if (!(fpr_limit > 0)) throw ContractError("fpr_limit must be positive");
  double area = 0;
  for (std::size_t i = 1; i < curve.size(); ++i) {
    const SproPoint a = curve[i - 1], b = curve[i];
    if (a.fpr >= fpr_limit) break;
    if (b.fpr <= fpr_limit) {
      area += (b.fpr - a.fpr) * (a.spro + b.spro) / 2;
      continue;
    }
    const double t = (fpr_limit - a.fpr) / (b.fpr - a.fpr);
    const double y = a.spro + t * (b.spro - a.spro);
    area += (fpr_limit - a.fpr) * (a.spro + y) / 2;
    break;
  }
  return area / fpr_limit;
}

inline double spro_auc(std::span<const AnomalyMap> maps, std::span<const SproRegion> regions,
                       double fpr_limit = 0.05) {
  if (!(fpr_limit > 0)) throw ContractError("fpr_limit must be positive");
  return spro_area(spro_curve(maps, regions), fpr_limit);
}

// Regions (with clamped saturation areas) for a scored test set.
inline std::vector<SproRegion> spro_regions(std::span<const ImageSample> samples) {
  std::vector<SproRegion> out;
  for (std::size_t k = 0; k < samples.size(); ++k) {
    const auto& s = samples[k];
    if (!s.gt_regions) continue;
    for (std::size_t r = 0; r < s.gt_regions->size(); ++r) {
      if ((*s.gt_regions)[r].count() == 0) continue;
      out.push_back({k, (*s.gt_regions)[r], s.saturation(r)});
    }
  }
  return out;
}

}  // namespace space
