#pragma once

#include <cmath>
#include <limits>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "space/datasets.hpp"
#include "space/export.hpp"
#include "space/metrics.hpp"
#include "space/scoring.hpp"

namespace space {

struct ReportRow {
  std::string category;
  std::string subset;  // "all", a defect type, or "mean" for the cross-category row
  std::size_t n_normal = 0;
  std::size_t n_anomalous = 0;
  double image_auroc = std::numeric_limits<double>::quiet_NaN();
  double pixel_auroc = std::numeric_limits<double>::quiet_NaN();
  double spro = std::numeric_limits<double>::quiet_NaN();
};

struct EvalReport {
  std::vector<ReportRow> rows;
  std::vector<double> scores;  // per test image, in test-set order
};

namespace detail {

// Metrics over the good images plus the anomalous images accepted by keep.
template <typename Keep>
ReportRow metric_row(const std::string& category, const std::string& subset,
                     std::span<const ImageSample> test, std::span<const ScoredImage> scored,
                     Keep keep) {
  ReportRow row{category, subset};
  std::vector<double> normal, anomalous;
  std::vector<ImageSample> subset_samples;
  std::vector<AnomalyMap> maps;
  std::vector<std::vector<RegionMask>> masks;
  bool any_region = false;
  for (std::size_t i = 0; i < test.size(); ++i) {
    const bool is_anom = test[i].label == Label::anomalous;
    if (is_anom && !keep(test[i])) continue;
    (is_anom ? anomalous : normal).push_back(scored[i].score);
    subset_samples.push_back(test[i]);
    maps.push_back(scored[i].total);
    masks.push_back(test[i].gt_regions.value_or(std::vector<RegionMask>{}));
    for (const auto& r : masks.back()) any_region |= r.count() > 0;
  }
  row.n_normal = normal.size();
  row.n_anomalous = anomalous.size();
  if (normal.empty() || anomalous.empty()) return row;
  row.image_auroc = auroc(normal, anomalous);
  if (any_region) {
    bool any_negative = false;
    for (std::size_t k = 0; k < maps.size() && !any_negative; ++k) {
      std::vector<std::uint8_t> inside(maps[k].values.size(), 0);
      for (const auto& r : masks[k])
        for (std::size_t i = 0; i < r.bits.size(); ++i) inside[i] |= r.bits[i];
      for (auto b : inside) any_negative |= b == 0;
    }
    if (any_negative) {
      row.pixel_auroc = pixel_auroc(maps, masks);
      row.spro = spro_auc(maps, spro_regions(subset_samples));
    }
  }
  return row;
}

}  // namespace detail

// Image AUROC, pixel AUROC and sPRO for a scored test set, overall and per
// defect type.
inline EvalReport evaluate_scored(const std::string& category, std::span<const ImageSample> test,
                                  std::span<const ScoredImage> scored) {
  if (test.size() != scored.size()) throw ContractError("evaluate: count mismatch");
  EvalReport rep;
  for (const auto& s : scored) rep.scores.push_back(s.score);
  rep.rows.push_back(detail::metric_row(category, "all", test, scored,
                                        [](const ImageSample&) { return true; }));
  std::map<std::string, int> types;
  for (const auto& s : test)
    if (s.label == Label::anomalous) types[s.defect_type];
  for (const auto& [type, unused] : types)
    rep.rows.push_back(detail::metric_row(category, type, test, scored, [&](const ImageSample& s) {
      return s.defect_type == type;
    }));
  return rep;
}

template <typename T>
EvalReport evaluate(const SpaceModel<T>& model, const std::string& category,
                    std::span<const ImageSample> test) {
  const auto scored = score_images(model, test);
  return evaluate_scored(category, test, scored);
}

// Appends a "mean" row averaging the "all" rows of every category.
inline void add_mean_row(EvalReport& rep) {
  ReportRow mean{"mean", "all"};
  double ia = 0, pa = 0, sp = 0;
  std::size_t n = 0;
  for (const auto& r : rep.rows) {
    if (r.subset != "all" || r.category == "mean") continue;
    ia += r.image_auroc;
    pa += r.pixel_auroc;
    sp += r.spro;
    mean.n_normal += r.n_normal;
    mean.n_anomalous += r.n_anomalous;
    ++n;
  }
  if (n == 0) return;
  mean.image_auroc = ia / static_cast<double>(n);
  mean.pixel_auroc = pa / static_cast<double>(n);
  mean.spro = sp / static_cast<double>(n);
  rep.rows.push_back(mean);
}

inline std::string report_csv(const EvalReport& rep) {
  std::string out = "category,subset,n_normal,n_anomalous,image_auroc,pixel_auroc,spro\n";
  for (const auto& r : rep.rows)
    out += r.category + "," + r.subset + "," + std::to_string(r.n_normal) + "," +
           std::to_string(r.n_anomalous) + "," + format_score(r.image_auroc) + "," +
           format_score(r.pixel_auroc) + "," + format_score(r.spro) + "\n";
  return out;
}

inline std::string report_summary(const EvalReport& rep) {
  auto pct = [](double v) {
    if (std::isnan(v)) return std::string("   n/a");
    std::ostringstream os;
    os << std::fixed << std::setprecision(1) << std::setw(6) << 100 * v;
    return os.str();
  };
  std::ostringstream os;
  os << std::left << std::setw(14) << "category" << std::setw(18) << "subset"
     << "  img AUROC  px AUROC   sPRO\n";
  for (const auto& r : rep.rows)
    os << std::left << std::setw(14) << r.category << std::setw(18) << r.subset << "     "
       << pct(r.image_auroc) << "    " << pct(r.pixel_auroc) << "  " << pct(r.spro) << "\n";
  return os.str();
}

}  // namespace space
