#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include "space/datasets.hpp"
#include "space/losses.hpp"
#include "space/model.hpp"
#include "space/parallel.hpp"

namespace space {

enum class MapKind : std::uint16_t { structural = 0, logical = 1, total = 2 };

struct AnomalyMap {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> values;
  MapKind kind = MapKind::structural;

  AnomalyMap() = default;
  AnomalyMap(std::size_t h, std::size_t w, MapKind k, double fill = 0)
      : height(h), width(w), values(h * w, fill), kind(k) {}
  double& at(std::size_t y, std::size_t x) { return values[y * width + x]; }
  double at(std::size_t y, std::size_t x) const { return values[y * width + x]; }
};

inline constexpr double kCalibrationLo = 0.90;
inline constexpr double kCalibrationHi = 0.995;
inline constexpr double kNormalizeEps = 1e-9;

// (1/C) sum_c (a - b)^2 on a (C,H,W) pair, bilinearly resized to out_h x out_w.
template <typename T>
AnomalyMap channel_mean_map(const FeatureMap<T>& a, const FeatureMap<T>& b, std::size_t out_h,
                            std::size_t out_w, MapKind kind) {
  require_same_shape(a.shape(), b.shape(), "channel_mean_map");
  const std::size_t c = a.dim(0), h = a.dim(1), w = a.dim(2), plane = h * w;
  Tensor<double> m({1, h, w});
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t i = 0; i < plane; ++i) {
      const double d = static_cast<double>(a[ch * plane + i]) - static_cast<double>(b[ch * plane + i]);
      m[i] += d * d;
    }
  for (auto& v : m.vec()) v /= static_cast<double>(c);
  const Tensor<double> up = resize_bilinear(m, out_h, out_w);
  AnomalyMap out(out_h, out_w, kind);
  out.values = up.vec();
  return out;
}

template <typename T>
struct RawMaps {
  AnomalyMap structural;
  AnomalyMap logical;
};

// Both raw maps for one image, at the image's own resolution.
template <typename T>
RawMaps<T> raw_maps(const SpaceModel<T>& model, const ImageSample& sample) {
  NoGradGuard guard;
  const Tensor<T> x = to_model_input<T>(sample, model.nets.config.input_size);
  const Var<T> xv = Var<T>::constant(x);
  const FeatureMap<T> t = normalize_teacher(model.nets.teacher.forward(xv).value(), model.teacher_stats);
  const FeatureMap<T> s = model.nets.student.forward(xv).value();
  const Var<T> s_fm = model.student_ema_for_fm ? model.nets.student_shadow.forward(xv)
                                               : Var<T>::constant(s);
  const FeatureMap<T> ae = model.nets.encoder.forward(xv).value();
  const FeatureMap<T> fm = model.convert(s_fm).value();
  const std::size_t h = sample.pixels.height, w = sample.pixels.width;
  return {channel_mean_map(t, s, h, w, MapKind::structural),
          channel_mean_map(ae, fm, h, w, MapKind::logical)};
}

template <typename T>
AnomalyMap map_structural(const SpaceModel<T>& model, const ImageSample& sample) {
  return raw_maps(model, sample).structural;
}

template <typename T>
AnomalyMap map_logical(const SpaceModel<T>& model, const ImageSample& sample) {
  return raw_maps(model, sample).logical;
}

// Pooled-pixel quantiles of each raw map kind over the validation images.
template <typename T>
CalibrationStats calibrate(const SpaceModel<T>& model, std::span<const ImageSample> validation) {
  if (validation.empty()) throw ConfigError("calibration needs at least one validation image");
  std::vector<RawMaps<T>> maps(validation.size());
  parallel_for(validation.size(), [&](std::size_t i) { maps[i] = raw_maps(model, validation[i]); });
  std::vector<double> s_pool, l_pool;
  for (const auto& m : maps) {
    s_pool.insert(s_pool.end(), m.structural.values.begin(), m.structural.values.end());
    l_pool.insert(l_pool.end(), m.logical.values.begin(), m.logical.values.end());
  }
  CalibrationStats cs;
  cs.structural_lo = quantile<double>(s_pool, kCalibrationLo);
  cs.structural_hi = quantile<double>(s_pool, kCalibrationHi);
  cs.logical_lo = quantile<double>(l_pool, kCalibrationLo);
  cs.logical_hi = quantile<double>(l_pool, kCalibrationHi);
  cs.valid = true;
  return cs;
}

// (m - lo) / (hi - lo + eps), unclamped.
inline AnomalyMap normalize_map(const AnomalyMap& m, double lo, double hi) {
  AnomalyMap out = m;
  const double denom = hi - lo + kNormalizeEps;
  for (auto& v : out.values) v = (v - lo) / denom;
  return out;
}

inline AnomalyMap normalize_map(const AnomalyMap& m, const CalibrationStats& cs) {
  if (m.kind == MapKind::total) throw ContractError("normalize_map: total maps are already normalized");
  return m.kind == MapKind::structural ? normalize_map(m, cs.structural_lo, cs.structural_hi)
                                       : normalize_map(m, cs.logical_lo, cs.logical_hi);
}

inline AnomalyMap map_total(const AnomalyMap& ms, const AnomalyMap& ml) {
  if (ms.height != ml.height || ms.width != ml.width)
    throw ContractError("map_total: map sizes differ");
  AnomalyMap out(ms.height, ms.width, MapKind::total);
  for (std::size_t i = 0; i < out.values.size(); ++i)
    out.values[i] = 0.5 * ms.values[i] + 0.5 * ml.values[i];
  return out;
}

inline double image_score(const AnomalyMap& m) {
  if (m.values.empty()) throw ContractError("image_score of an empty map");
  return *std::max_element(m.values.begin(), m.values.end());
}

struct ScoredImage {
  AnomalyMap structural;  // raw
  AnomalyMap logical;     // raw
  AnomalyMap total;       // normalized average
  double score = 0;
};

template <typename T>
ScoredImage score_image(const SpaceModel<T>& model, const ImageSample& sample) {
  RawMaps<T> raw = raw_maps(model, sample);
  ScoredImage s;
  s.total = map_total(normalize_map(raw.structural, model.calibration),
                      normalize_map(raw.logical, model.calibration));
  s.score = image_score(s.total);
  s.structural = std::move(raw.structural);
  s.logical = std::move(raw.logical);
  return s;
}

template <typename T>
std::vector<ScoredImage> score_images(const SpaceModel<T>& model,
                                      std::span<const ImageSample> samples) {
  std::vector<ScoredImage> out(samples.size());
  parallel_for(samples.size(), [&](std::size_t i) { out[i] = score_image(model, samples[i]); });
  return out;
}

}  // namespace space
