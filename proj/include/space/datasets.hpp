#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "space/errors.hpp"
#include "space/image.hpp"

namespace space {

enum class Label { normal, anomalous };

inline const char* label_name(Label l) { return l == Label::normal ? "normal" : "anomalous"; }

// Binary H x W region mask, one byte per pixel (0 or 1).
struct RegionMask {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> bits;

  RegionMask() = default;
  RegionMask(std::size_t h, std::size_t w, std::uint8_t fill = 0)
      : height(h), width(w), bits(h * w, fill) {}

  std::size_t count() const {
    return static_cast<std::size_t>(std::count(bits.begin(), bits.end(), std::uint8_t{1}));
  }
  std::uint8_t& at(std::size_t y, std::size_t x) { return bits[y * width + x]; }
  std::uint8_t at(std::size_t y, std::size_t x) const { return bits[y * width + x]; }
  friend bool operator==(const RegionMask&, const RegionMask&) = default;
};

struct ImageSample {
  Image pixels;
  std::string identifier;
  Label label = Label::normal;
  std::string defect_type = "good";
  std::optional<std::vector<RegionMask>> gt_regions;
  // One entry per gt region, in pixels; empty means "use region area".
  std::vector<double> saturation_area;

  // Saturation for region i, clamped to the region's pixel count.
  double saturation(std::size_t i) const {
    const double area = static_cast<double>(gt_regions->at(i).count());
    if (i < saturation_area.size() && saturation_area[i] > 0)
      return std::min(saturation_area[i], area);
    return area;
  }
};

struct DatasetSplit {
  std::vector<ImageSample> train;
  std::vector<ImageSample> validation;
  std::vector<ImageSample> test;
};

// Standardized (3, size, size) network input.
template <typename T>
Tensor<T> to_model_input(const ImageSample& sample, std::size_t size) {
  return standardize(to_unit_tensor<T>(sample.pixels, size));
}

// Number of validation images carved from n normal training images.
inline std::size_t validation_count(std::size_t n, double fraction) {
  if (n < 2) return 0;
  auto v = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n)));
  return std::clamp<std::size_t>(v, 1, n - 1);
}

namespace detail {

namespace fs = std::filesystem;

inline std::vector<fs::path> sorted_pngs(const fs::path& dir) {
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".png") out.push_back(e.path());
  std::sort(out.begin(), out.end());
  return out;
}

// 8-connected components of the nonzero pixels.
inline std::vector<RegionMask> connected_regions(const Image& gray) {
  const std::size_t h = gray.height, w = gray.width;
  std::vector<int> label(h * w, -1);
  std::vector<RegionMask> regions;
  std::vector<std::size_t> stack;
  for (std::size_t start = 0; start < h * w; ++start) {
    if (gray.pixels[start] == 0 || label[start] >= 0) continue;
    const int id = static_cast<int>(regions.size());
    regions.emplace_back(h, w);
    stack.push_back(start);
    label[start] = id;
    while (!stack.empty()) {
      const std::size_t p = stack.back();
      stack.pop_back();
      regions.back().bits[p] = 1;
      const long py = static_cast<long>(p / w), px = static_cast<long>(p % w);
      for (long dy = -1; dy <= 1; ++dy)
        for (long dx = -1; dx <= 1; ++dx) {
          const long y = py + dy, x = px + dx;
          if (y < 0 || x < 0 || y >= static_cast<long>(h) || x >= static_cast<long>(w)) continue;
          const std::size_t q = static_cast<std::size_t>(y) * w + static_cast<std::size_t>(x);
          if (gray.pixels[q] != 0 && label[q] < 0) {
            label[q] = id;
            stack.push_back(q);
          }
        }
    }
  }
  return regions;
}

inline RegionMask binarize(const Image& gray) {
  RegionMask m(gray.height, gray.width);
  for (std::size_t i = 0; i < m.bits.size(); ++i) m.bits[i] = gray.pixels[i] != 0;
  return m;
}

inline std::uint8_t max_value(const Image& gray) {
  return gray.pixels.empty() ? 0 : *std::max_element(gray.pixels.begin(), gray.pixels.end());
}

struct SaturationRule {
  double threshold = 0;
  bool relative = false;
};

// MVTec LOCO style defects_config.json: pixel_value -> saturation rule per defect.
inline std::map<std::pair<std::string, int>, SaturationRule> read_saturation_config(
    const fs::path& file) {
  std::map<std::pair<std::string, int>, SaturationRule> rules;
  if (!fs::exists(file)) return rules;
  std::ifstream in(file);
  nlohmann::json j;
  try {
    in >> j;
    for (const auto& e : j)
      rules[{e.at("defect_name").get<std::string>(), e.at("pixel_value").get<int>()}] = {
          e.at("saturation_threshold").get<double>(), e.value("relative_saturation", false)};
  } catch (const nlohmann::json::exception& ex) {
    throw ConfigError("malformed saturation config '" + file.string() + "': " + ex.what());
  }
  return rules;
}

inline ImageSample read_sample(const fs::path& path, Label label, const std::string& defect) {
  ImageSample s;
  s.pixels = read_png(path, 3);
  s.identifier = path.string();
  s.label = label;
  s.defect_type = defect;
  return s;
}

}  // namespace detail

// Reads <root>/<category>/{train/good, test/<defect>, ground_truth/<defect>}.
// Ground truth is paired by stem: either "<stem>_mask.png" (split into
// connected components) or a directory "<stem>/" holding one PNG per region.
inline DatasetSplit load_mvtec_layout(const std::filesystem::path& root,
                                      const std::string& category, double validation_fraction) {
  namespace fs = std::filesystem;
  if (!(validation_fraction > 0 && validation_fraction < 1))
    throw ConfigError("validation_fraction must be in (0,1)");
  const fs::path base = root / category;
  const fs::path train_dir = base / "train" / "good";
  if (!fs::is_directory(train_dir))
    throw ConfigError("missing directory '" + train_dir.string() + "'");

  DatasetSplit split;
  const auto train_files = detail::sorted_pngs(train_dir);
  if (train_files.empty())
    throw ConfigError("no normal images in '" + train_dir.string() + "'");
  const std::size_t n_val = validation_count(train_files.size(), validation_fraction);
  for (std::size_t i = 0; i < train_files.size(); ++i) {
    auto s = detail::read_sample(train_files[i], Label::normal, "good");
    (i < train_files.size() - n_val ? split.train : split.validation).push_back(std::move(s));
  }

  const fs::path test_dir = base / "test";
  if (!fs::is_directory(test_dir)) return split;
  const auto rules = detail::read_saturation_config(base / "defects_config.json");

  std::vector<fs::path> defect_dirs;
  for (const auto& e : fs::directory_iterator(test_dir))
    if (e.is_directory()) defect_dirs.push_back(e.path());
  std::sort(defect_dirs.begin(), defect_dirs.end());

  for (const auto& ddir : defect_dirs) {
    const std::string defect = ddir.filename().string();
    const Label label = defect == "good" ? Label::normal : Label::anomalous;
    for (const auto& file : detail::sorted_pngs(ddir)) {
      ImageSample s = detail::read_sample(file, label, defect);
      if (label == Label::anomalous) {
        const fs::path gt = base / "ground_truth" / defect;
        const std::string stem = file.stem().string();
        std::vector<RegionMask> regions;
        std::vector<double> saturation;
        auto check_dims = [&](const Image& m, const fs::path& p) {
          if (m.height != s.pixels.height || m.width != s.pixels.width)
            throw ItemError(p.string(), "mask size does not match image");
        };
        if (fs::is_regular_file(gt / (stem + "_mask.png"))) {
          const fs::path p = gt / (stem + "_mask.png");
          const Image m = read_png(p, 1);
          check_dims(m, p);
          regions = detail::connected_regions(m);
        } else if (fs::is_directory(gt / stem)) {
          for (const auto& p : detail::sorted_pngs(gt / stem)) {
            const Image m = read_png(p, 1);
            check_dims(m, p);
            RegionMask r = detail::binarize(m);
            if (r.count() == 0) continue;
            double sat = 0;
            if (auto it = rules.find({defect, detail::max_value(m)}); it != rules.end())
              sat = it->second.relative ? it->second.threshold * static_cast<double>(r.count())
                                        : it->second.threshold;
            saturation.push_back(sat);
            regions.push_back(std::move(r));
          }
        }
        if (!regions.empty()) {
          s.gt_regions = std::move(regions);
          s.saturation_area = std::move(saturation);
        }
      }
      split.test.push_back(std::move(s));
    }
  }
  return split;
}

// ---------------------------------------------------------------------------
// Synthetic toy data: bright discs on a textured background at jittered grid
// slots. Structural anomalies scratch one disc; logical anomalies drop one
// disc or add one in an empty slot.

struct Disc {
  double cy = 0, cx = 0, radius = 0;
  std::array<double, 3> color{};
};

struct Scratch {
  double y0 = 0, x0 = 0, y1 = 0, x1 = 0;  // segment endpoints
  double half_width = 0.75;
};

struct ToyScene {
  std::size_t size = 64;
  std::vector<Disc> discs;
  std::optional<Scratch> scratch;
  std::uint64_t texture_seed = 0;
  std::array<double, 3> background{};
};

enum class ToyKind { normal, structural, logical_missing, logical_extra };

struct ToySpec {
  std::size_t discs = 3;
};

namespace detail {

inline std::pair<std::size_t, std::size_t> toy_grid(std::size_t k) {
  const auto cols = static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(k))));
  return {(k + cols - 1) / cols, cols};
}

inline Disc toy_disc(std::mt19937_64& rng, std::size_t size, std::size_t slot, std::size_t k) {
  const auto [rows, cols] = toy_grid(k);
  const double cell_h = static_cast<double>(size) / static_cast<double>(rows);
  const double cell_w = static_cast<double>(size) / static_cast<double>(cols);
  const double jitter = static_cast<double>(size) / 20.0;
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Disc d;
  d.cy = (static_cast<double>(slot / cols) + 0.5) * cell_h + jitter * u(rng);
  d.cx = (static_cast<double>(slot % cols) + 0.5) * cell_w + jitter * u(rng);
  d.radius = static_cast<double>(size) * (0.11 + 0.01 * u(rng));
  d.color = {225 + 10 * u(rng), 195 + 10 * u(rng), 110 + 10 * u(rng)};
  return d;
}

inline double segment_distance(double py, double px, const Scratch& s) {
  const double vy = s.y1 - s.y0, vx = s.x1 - s.x0;
  const double len2 = vy * vy + vx * vx;
  double t = len2 > 0 ? ((py - s.y0) * vy + (px - s.x0) * vx) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  const double dy = py - (s.y0 + t * vy), dx = px - (s.x0 + t * vx);
  return std::sqrt(dy * dy + dx * dx);
}

}  // namespace detail

// Pixels covered by the scratch (pixel centers within half_width of the segment).
inline RegionMask scratch_mask(const ToyScene& scene) {
  RegionMask m(scene.size, scene.size);
  if (!scene.scratch) return m;
  for (std::size_t y = 0; y < scene.size; ++y)
    for (std::size_t x = 0; x < scene.size; ++x)
      m.at(y, x) = detail::segment_distance(static_cast<double>(y), static_cast<double>(x),
                                            *scene.scratch) <= scene.scratch->half_width;
  return m;
}

inline Image render_toy(const ToyScene& scene) {
  const std::size_t n = scene.size;
  Image img(n, n, 3);
  std::mt19937_64 rng(scene.texture_seed);
  std::uniform_real_distribution<double> noise(-6.0, 6.0);
  const double freq = 2.0 * 3.14159265358979323846 / (static_cast<double>(n) / 6.0);
  const RegionMask scratch = scratch_mask(scene);
  for (std::size_t y = 0; y < n; ++y)
    for (std::size_t x = 0; x < n; ++x) {
      const double fy = static_cast<double>(y), fx = static_cast<double>(x);
      const double tex = 10.0 * std::sin(freq * (fx + 0.5 * fy)) * std::cos(freq * 0.7 * fy);
      std::array<double, 3> px{scene.background[0] + tex, scene.background[1] + tex,
                               scene.background[2] + tex};
      for (const Disc& d : scene.discs) {
        const double r = std::hypot(fy - d.cy, fx - d.cx);
        if (r <= d.radius) {
          const double shade = 1.0 - 0.15 * r / d.radius;
          for (int c = 0; c < 3; ++c) px[c] = d.color[c] * shade;
        }
      }
      if (scratch.at(y, x)) px = {35.0, 30.0, 28.0};
      for (int c = 0; c < 3; ++c) {
        const double v = std::clamp(std::round(px[c] + noise(rng)), 0.0, 255.0);
        img.at(y, x, c) = static_cast<std::uint8_t>(v);
      }
    }
  return img;
}

// Deterministic scene for (seed, stream, index). Streams separate the
// train/validation/test draws so changing one count never shifts another.
inline ToyScene make_toy_scene(std::uint64_t seed, std::uint64_t stream, std::uint64_t index,
                               std::size_t size, ToyKind kind, const ToySpec& spec = {}) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(index)};
  std::mt19937_64 rng(seq);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  ToyScene scene;
  scene.size = size;
  scene.texture_seed = rng();
  const double shade = 75 + 10 * u(rng);
  scene.background = {shade, shade + 8, shade + 16};
  const std::size_t k = spec.discs;
  for (std::size_t slot = 0; slot < k; ++slot)
    scene.discs.push_back(detail::toy_disc(rng, size, slot, k));

  switch (kind) {
    case ToyKind::normal:
      break;
    case ToyKind::structural: {
      const Disc& d = scene.discs[static_cast<std::size_t>(u(rng) * static_cast<double>(k)) % k];
      const double angle = u(rng) * 3.14159265358979323846;
      // Stay clear of the rim so every scratch pixel lands on the disc.
      const double reach = d.radius - 1.5;
      Scratch s;
      s.y0 = d.cy - reach * std::sin(angle);
      s.x0 = d.cx - reach * std::cos(angle);
      s.y1 = d.cy + reach * std::sin(angle);
      s.x1 = d.cx + reach * std::cos(angle);
      scene.scratch = s;
      break;
    }
    case ToyKind::logical_missing: {
      const auto drop = static_cast<std::size_t>(u(rng) * static_cast<double>(k)) % k;
      scene.discs.erase(scene.discs.begin() + static_cast<long>(drop));
      break;
    }
    case ToyKind::logical_extra: {
      const auto [rows, cols] = detail::toy_grid(k);
      if (rows * cols > k) {
        scene.discs.push_back(detail::toy_disc(rng, size, k, k));
      } else {
        // Full grid: place the extra disc on a cell corner between slots.
        Disc d = detail::toy_disc(rng, size, 0, k);
        d.cy = static_cast<double>(size) / static_cast<double>(rows);
        d.cx = static_cast<double>(size) / static_cast<double>(cols);
        scene.discs.push_back(d);
      }
      break;
    }
  }
  return scene;
}

inline ImageSample toy_sample(std::uint64_t seed, std::uint64_t stream, std::uint64_t index,
                              std::size_t size, ToyKind kind, const ToySpec& spec = {}) {
  const ToyScene scene = make_toy_scene(seed, stream, index, size, kind, spec);
  ImageSample s;
  s.pixels = render_toy(scene);
  const char* split = stream == 0 ? "train" : stream == 1 ? "validation" : "test";
  s.label = kind == ToyKind::normal ? Label::normal : Label::anomalous;
  switch (kind) {
    case ToyKind::normal:
      s.defect_type = "good";
      break;
    case ToyKind::structural:
      s.defect_type = "structural";
      s.gt_regions = std::vector<RegionMask>{scratch_mask(scene)};
      break;
    case ToyKind::logical_missing:
    case ToyKind::logical_extra:
      s.defect_type = "logical";
      s.gt_regions = std::vector<RegionMask>{RegionMask(size, size, 1)};
      break;
  }
  s.identifier = "synthetic/" + std::to_string(seed) + "/" + split + "/" + s.defect_type + "/" +
                 std::to_string(index);
  return s;
}

// Test set holds n_test_per_class images each of good, structural and logical
// (logical alternates missing / extra disc).
inline DatasetSplit synth_toy_dataset(std::uint64_t seed, std::size_t n_train, std::size_t n_val,
                                      std::size_t n_test_per_class, std::size_t image_size,
                                      const ToySpec& spec = {}) {
  if (n_train < 1 || n_val < 1 || n_test_per_class < 1)
    throw ConfigError("synthetic dataset counts must all be >= 1");
  if (image_size < 32) throw ConfigError("synthetic image_size must be >= 32");
  if (spec.discs < 1) throw ConfigError("synthetic disc count must be >= 1");
  DatasetSplit d;
  for (std::size_t i = 0; i < n_train; ++i)
    d.train.push_back(toy_sample(seed, 0, i, image_size, ToyKind::normal, spec));
  for (std::size_t i = 0; i < n_val; ++i)
    d.validation.push_back(toy_sample(seed, 1, i, image_size, ToyKind::normal, spec));
  for (std::size_t i = 0; i < n_test_per_class; ++i)
    d.test.push_back(toy_sample(seed, 2, i, image_size, ToyKind::normal, spec));
  for (std::size_t i = 0; i < n_test_per_class; ++i)
    d.test.push_back(toy_sample(seed, 3, i, image_size, ToyKind::structural, spec));
  for (std::size_t i = 0; i < n_test_per_class; ++i)
    d.test.push_back(toy_sample(seed, 4, i, image_size,
                                i % 2 ? ToyKind::logical_extra : ToyKind::logical_missing, spec));
  return d;
}

// Writes a split in MVTec layout under <root>/<category>. Validation images
// follow the training images in train/good so that loading with fraction
// n_val / (n_train + n_val) restores the same split.
inline void export_mvtec_layout(const DatasetSplit& d, const std::filesystem::path& root,
                                const std::string& category) {
  namespace fs = std::filesystem;
  const fs::path base = root / category;
  std::error_code ec;
  fs::create_directories(base / "train" / "good", ec);
  if (ec) throw IoError("cannot create '" + (base / "train" / "good").string() + "'");
  auto name = [](std::size_t i) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "%03zu", i);
    return std::string(buf);
  };
  std::size_t idx = 0;
  for (const auto* part : {&d.train, &d.validation})
    for (const auto& s : *part) write_png(base / "train" / "good" / (name(idx++) + ".png"), s.pixels);

  std::map<std::string, std::size_t> counters;
  for (const auto& s : d.test) {
    const std::string stem = name(counters[s.defect_type]++);
    fs::create_directories(base / "test" / s.defect_type);
    write_png(base / "test" / s.defect_type / (stem + ".png"), s.pixels);
    if (!s.gt_regions) continue;
    fs::create_directories(base / "ground_truth" / s.defect_type);
    Image m(s.pixels.height, s.pixels.width, 1);
    for (const auto& r : *s.gt_regions)
      for (std::size_t i = 0; i < r.bits.size(); ++i)
        if (r.bits[i]) m.pixels[i] = 255;
    write_png(base / "ground_truth" / s.defect_type / (stem + "_mask.png"), m);
  }
}

}  // namespace space
