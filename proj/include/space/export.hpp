#pragma once

// File formats for scored output:
//   SPMAP raw map: "SPMAP\0", u16 version, u16 kind, u32 H, u32 W (18 bytes,
//   packed, little-endian), then H*W f32 values in row-major order.
//   Heatmap: 8-bit RGB PNG; values are clamped to [0,1] and looked up in
//   heatmap_ramp().
//   Scores: CSV "identifier,label,score".

#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <span>
#include <string>

#include "space/checkpoint.hpp"
#include "space/datasets.hpp"
#include "space/image.hpp"
#include "space/scoring.hpp"

namespace space {

static_assert(std::endian::native == std::endian::little, "map export assumes little-endian");

inline constexpr char kSpmapMagic[6] = {'S', 'P', 'M', 'A', 'P', '\0'};
inline constexpr std::uint16_t kSpmapVersion = 1;
inline constexpr std::size_t kSpmapHeaderBytes = 18;

inline std::string encode_spmap(const AnomalyMap& m) {
  if (m.values.size() != m.height * m.width) throw ContractError("encode_spmap: bad map size");
  std::string out(kSpmapHeaderBytes + 4 * m.values.size(), '\0');
  char* p = out.data();
  const auto kind = static_cast<std::uint16_t>(m.kind);
  const auto h = static_cast<std::uint32_t>(m.height);
  const auto w = static_cast<std::uint32_t>(m.width);
  std::memcpy(p, kSpmapMagic, 6);
  std::memcpy(p + 6, &kSpmapVersion, 2);
  std::memcpy(p + 8, &kind, 2);
  std::memcpy(p + 10, &h, 4);
  std::memcpy(p + 14, &w, 4);
  p += kSpmapHeaderBytes;
  for (double v : m.values) {
    const auto f = static_cast<float>(v);
    std::memcpy(p, &f, 4);
    p += 4;
  }
  return out;
}

inline AnomalyMap decode_spmap(const std::string& bytes, const std::string& origin = "<spmap>") {
  if (bytes.size() < kSpmapHeaderBytes || std::memcmp(bytes.data(), kSpmapMagic, 6) != 0)
    throw IoError(origin + ": not an SPMAP file");
  std::uint16_t version = 0, kind = 0;
  std::uint32_t h = 0, w = 0;
  std::memcpy(&version, bytes.data() + 6, 2);
  std::memcpy(&kind, bytes.data() + 8, 2);
  std::memcpy(&h, bytes.data() + 10, 4);
  std::memcpy(&w, bytes.data() + 14, 4);
  if (version != kSpmapVersion) throw IoError(origin + ": unsupported SPMAP version " + std::to_string(version));
  if (kind > 2) throw IoError(origin + ": unknown map kind " + std::to_string(kind));
  const std::size_t n = static_cast<std::size_t>(h) * w;
  if (bytes.size() != kSpmapHeaderBytes + 4 * n) throw IoError(origin + ": truncated SPMAP data");
  AnomalyMap m(h, w, static_cast<MapKind>(kind));
  const char* p = bytes.data() + kSpmapHeaderBytes;
  for (std::size_t i = 0; i < n; ++i, p += 4) {
    float f;
    std::memcpy(&f, p, 4);
    m.values[i] = f;
  }
  return m;
}

inline void write_spmap(const std::filesystem::path& path, const AnomalyMap& m) {
  write_bytes(path, encode_spmap(m));
}

inline AnomalyMap read_spmap(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return decode_spmap(buf.str(), path.string());
}

// 256 RGB entries interpolated linearly between five fixed anchors
// (black, indigo, crimson, orange, pale yellow). Integer arithmetic only.
inline const std::array<std::array<std::uint8_t, 3>, 256>& heatmap_ramp() {
  static const auto table = [] {
    constexpr int anchors[5][3] = {{0, 0, 4}, {87, 16, 110}, {188, 55, 84}, {249, 142, 9}, {252, 255, 164}};
    std::array<std::array<std::uint8_t, 3>, 256> t{};
    for (int i = 0; i < 256; ++i) {
      const int seg = std::min(3, i * 4 / 255);
      const int start = (seg * 255 + 3) / 4;  // 0, 64, 128, 192
      const int end = ((seg + 1) * 255 + 3) / 4;
      const int span = std::max(1, end - start), off = std::min(span, i - start);
      for (int c = 0; c < 3; ++c) {
        const int a = anchors[seg][c], b = anchors[seg + 1][c];
        t[i][c] = static_cast<std::uint8_t>(a + ((b - a) * off * 2 + span) / (2 * span));
      }
    }
    return t;
  }();
  return table;
}

inline std::uint8_t heatmap_index(double v) {
  if (!(v > 0)) return 0;  // also maps NaN to 0
  if (v >= 1) return 255;
  return static_cast<std::uint8_t>(std::lround(v * 255.0));
}

inline Image render_heatmap(const AnomalyMap& m) {
  Image img;
  img.height = m.height;
  img.width = m.width;
  img.channels = 3;
  img.pixels.resize(m.height * m.width * 3);
  const auto& ramp = heatmap_ramp();
  for (std::size_t i = 0; i < m.values.size(); ++i) {
    const auto& rgb = ramp[heatmap_index(m.values[i])];
    for (int c = 0; c < 3; ++c) img.pixels[i * 3 + c] = rgb[c];
  }
  return img;
}

inline void write_heatmap(const std::filesystem::path& path, const AnomalyMap& m) {
  write_png(path, render_heatmap(m));
}

inline std::string format_score(double v) {
  std::ostringstream os;
  os << std::setprecision(9) << v;
  return os.str();
}

inline std::string scores_csv(std::span<const ImageSample> samples, std::span<const double> scores) {
  if (samples.size() != scores.size()) throw ContractError("scores_csv: count mismatch");
  std::string out = "identifier,label,score\n";
  for (std::size_t i = 0; i < samples.size(); ++i)
    out += samples[i].identifier + "," +
           (samples[i].label == Label::anomalous ? "anomalous" : "normal") + "," +
           format_score(scores[i]) + "\n";
  return out;
}

}  // namespace space
