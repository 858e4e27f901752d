#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <random>

#include "space/errors.hpp"
#include "space/tensor.hpp"

// Augmentations act on (3, H, W) images in [0,1] pixel space, before
// standardization. Geometric ops replicate edge pixels into vacated areas.

namespace space {

struct AugmentSpec {
  int weak_max_shift = 3;
  int rand_n = 4;
  int rand_m = 10;  // 0..30 magnitude scale
  bool flip_h = true;
  bool flip_v = true;
  double jitter_strength = 0.2;

  void validate() const {
    if (weak_max_shift < 0) throw ConfigError("weak_max_shift must be >= 0");
    if (rand_n < 0) throw ConfigError("rand_n must be >= 0");
    if (rand_m < 0 || rand_m > 30) throw ConfigError("rand_m must be in [0,30]");
    if (!(jitter_strength >= 0 && jitter_strength < 1))
      throw ConfigError("jitter_strength must be in [0,1)");
  }
};

enum class RandOp {
  autocontrast,
  equalize,
  rotate,
  posterize,
  solarize,
  color,
  contrast,
  brightness,
  sharpness,
  shear_x,
  shear_y,
  translate_x,
  translate_y,
};

inline constexpr std::array<RandOp, 13> kRandOps{
    RandOp::autocontrast, RandOp::equalize,   RandOp::rotate,     RandOp::posterize,
    RandOp::solarize,     RandOp::color,      RandOp::contrast,   RandOp::brightness,
    RandOp::sharpness,    RandOp::shear_x,    RandOp::shear_y,    RandOp::translate_x,
    RandOp::translate_y};

namespace detail {

template <typename T>
T clamp01(T v) {
  return std::clamp(v, T{0}, T{1});
}

template <typename T>
void require_image(const Tensor<T>& img) {
  if (img.rank() != 3 || img.dim(0) != 3)
    throw ContractError("augmentation expects a (3,H,W) image, got " + shape_str(img.shape()));
}

template <typename T>
Tensor<T> grayscale(const Tensor<T>& img) {
  const std::size_t plane = img.dim(1) * img.dim(2);
  Tensor<T> g({1, img.dim(1), img.dim(2)});
  for (std::size_t i = 0; i < plane; ++i)
    g[i] = T(0.299) * img[i] + T(0.587) * img[plane + i] + T(0.114) * img[2 * plane + i];
  return g;
}

// out = clamp(f * img + (1 - f) * other), other broadcast over channels if it has one.
template <typename T>
Tensor<T> blend(const Tensor<T>& img, const Tensor<T>& other, T f) {
  const std::size_t plane = img.dim(1) * img.dim(2);
  const bool mono = other.dim(0) == 1;
  Tensor<T> out(img.shape());
  for (std::size_t c = 0; c < img.dim(0); ++c)
    for (std::size_t i = 0; i < plane; ++i) {
      const T o = other[(mono ? 0 : c) * plane + i];
      out[c * plane + i] = clamp01(f * img[c * plane + i] + (T{1} - f) * o);
    }
  return out;
}

template <typename T>
T sample_clamped(const Tensor<T>& img, std::size_t c, double y, double x) {
  const double h = static_cast<double>(img.dim(1) - 1), w = static_cast<double>(img.dim(2) - 1);
  y = std::clamp(y, 0.0, h);
  x = std::clamp(x, 0.0, w);
  const auto y0 = static_cast<std::size_t>(y), x0 = static_cast<std::size_t>(x);
  const std::size_t y1 = std::min(y0 + 1, img.dim(1) - 1), x1 = std::min(x0 + 1, img.dim(2) - 1);
  const double fy = y - static_cast<double>(y0), fx = x - static_cast<double>(x0);
  return static_cast<T>((1 - fy) * ((1 - fx) * img(c, y0, x0) + fx * img(c, y0, x1)) +
                        fy * ((1 - fx) * img(c, y1, x0) + fx * img(c, y1, x1)));
}

// Output pixel p samples the input at inv * (p - center) + center + offset.
template <typename T>
Tensor<T> affine(const Tensor<T>& img, const std::array<double, 4>& inv, double off_y,
                 double off_x) {
  const double cy = (static_cast<double>(img.dim(1)) - 1) / 2;
  const double cx = (static_cast<double>(img.dim(2)) - 1) / 2;
  Tensor<T> out(img.shape());
  for (std::size_t y = 0; y < img.dim(1); ++y)
    for (std::size_t x = 0; x < img.dim(2); ++x) {
      const double dy = static_cast<double>(y) - cy, dx = static_cast<double>(x) - cx;
      const double sy = inv[0] * dy + inv[1] * dx + cy + off_y;
      const double sx = inv[2] * dy + inv[3] * dx + cx + off_x;
      for (std::size_t c = 0; c < img.dim(0); ++c) out(c, y, x) = sample_clamped(img, c, sy, sx);
    }
  return out;
}

template <typename T>
std::uint8_t to_byte(T v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(static_cast<double>(v), 0.0, 1.0) * 255));
}

}  // namespace detail

template <typename T>
Tensor<T> shift_image(const Tensor<T>& img, int dy, int dx) {
  detail::require_image(img);
  const long h = static_cast<long>(img.dim(1)), w = static_cast<long>(img.dim(2));
  Tensor<T> out(img.shape());
  for (std::size_t c = 0; c < 3; ++c)
    for (long y = 0; y < h; ++y)
      for (long x = 0; x < w; ++x)
        out(c, static_cast<std::size_t>(y), static_cast<std::size_t>(x)) =
            img(c, static_cast<std::size_t>(std::clamp(y - dy, 0L, h - 1)),
                static_cast<std::size_t>(std::clamp(x - dx, 0L, w - 1)));
  return out;
}

template <typename T>
Tensor<T> flip_horizontal(const Tensor<T>& img) {
  Tensor<T> out(img.shape());
  const std::size_t w = img.dim(2);
  for (std::size_t c = 0; c < img.dim(0); ++c)
    for (std::size_t y = 0; y < img.dim(1); ++y)
      for (std::size_t x = 0; x < w; ++x) out(c, y, x) = img(c, y, w - 1 - x);
  return out;
}

template <typename T>
Tensor<T> flip_vertical(const Tensor<T>& img) {
  Tensor<T> out(img.shape());
  const std::size_t h = img.dim(1);
  for (std::size_t c = 0; c < img.dim(0); ++c)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < img.dim(2); ++x) out(c, y, x) = img(c, h - 1 - y, x);
  return out;
}

template <typename T>
Tensor<T> adjust_brightness(const Tensor<T>& img, T f) {
  Tensor<T> zero({1, img.dim(1), img.dim(2)});
  return detail::blend(img, zero, f);
}

template <typename T>
Tensor<T> adjust_contrast(const Tensor<T>& img, T f) {
  const Tensor<T> g = detail::grayscale(img);
  long double m = 0;
  for (T v : g.vec()) m += v;
  Tensor<T> mean_img(g.shape(), static_cast<T>(m / static_cast<long double>(g.size())));
  return detail::blend(img, mean_img, f);
}

template <typename T>
Tensor<T> adjust_saturation(const Tensor<T>& img, T f) {
  return detail::blend(img, detail::grayscale(img), f);
}

template <typename T>
Tensor<T> adjust_sharpness(const Tensor<T>& img, T f) {
  Tensor<T> smooth = img;
  for (std::size_t c = 0; c < img.dim(0); ++c)
    for (std::size_t y = 1; y + 1 < img.dim(1); ++y)
      for (std::size_t x = 1; x + 1 < img.dim(2); ++x) {
        T acc = 4 * img(c, y, x);
        for (int dy = -1; dy <= 1; ++dy)
          for (int dx = -1; dx <= 1; ++dx) acc += img(c, y + dy, x + dx);
        smooth(c, y, x) = acc / T{13};
      }
  return detail::blend(img, smooth, f);
}

template <typename T>
Tensor<T> autocontrast(const Tensor<T>& img) {
  Tensor<T> out = img;
  const std::size_t plane = img.dim(1) * img.dim(2);
  for (std::size_t c = 0; c < img.dim(0); ++c) {
    auto first = img.vec().begin() + static_cast<long>(c * plane);
    const auto [lo, hi] = std::minmax_element(first, first + static_cast<long>(plane));
    if (*hi <= *lo) continue;
    const T lo_v = *lo, range = *hi - *lo;
    for (std::size_t i = 0; i < plane; ++i) out[c * plane + i] = (img[c * plane + i] - lo_v) / range;
  }
  return out;
}

// Histogram equalization per channel on 8-bit quantized values.
template <typename T>
Tensor<T> equalize(const Tensor<T>& img) {
  Tensor<T> out = img;
  const std::size_t plane = img.dim(1) * img.dim(2);
  for (std::size_t c = 0; c < img.dim(0); ++c) {
    std::array<std::size_t, 256> hist{};
    for (std::size_t i = 0; i < plane; ++i) ++hist[detail::to_byte(img[c * plane + i])];
    std::size_t last = 255;
    while (last > 0 && hist[last] == 0) --last;
    const std::size_t step = (plane - hist[last]) / 255;
    if (step == 0) continue;
    std::array<T, 256> lut{};
    std::size_t n = step / 2;
    for (std::size_t i = 0; i < 256; ++i) {
      lut[i] = static_cast<T>(std::min<std::size_t>(n / step, 255)) / T{255};
      n += hist[i];
    }
    for (std::size_t i = 0; i < plane; ++i)
      out[c * plane + i] = lut[detail::to_byte(img[c * plane + i])];
  }
  return out;
}

template <typename T>
Tensor<T> posterize(const Tensor<T>& img, int bits) {
  Tensor<T> out(img.shape());
  const auto mask = static_cast<std::uint8_t>(0xFFu << (8 - bits));
  for (std::size_t i = 0; i < img.size(); ++i)
    out[i] = static_cast<T>(detail::to_byte(img[i]) & mask) / T{255};
  return out;
}

template <typename T>
Tensor<T> solarize(const Tensor<T>& img, T threshold) {
  Tensor<T> out(img.shape());
  for (std::size_t i = 0; i < img.size(); ++i)
    out[i] = img[i] >= threshold ? T{1} - img[i] : img[i];
  return out;
}

// One RandAugment op at magnitude m on the 0..30 scale; negate flips the
// direction of signed ops.
template <typename T>
Tensor<T> apply_rand_op(const Tensor<T>& img, RandOp op, int m, bool negate) {
  const double level = static_cast<double>(m) / 30.0;
  const double sign = negate ? -1.0 : 1.0;
  const auto factor = static_cast<T>(1.0 + sign * 0.9 * level);
  constexpr double kPi = 3.14159265358979323846;
  switch (op) {
    case RandOp::autocontrast:
      return autocontrast(img);
    case RandOp::equalize:
      return equalize(img);
    case RandOp::rotate: {
      const double a = sign * 30.0 * level * kPi / 180.0;
      return detail::affine(img, {std::cos(a), std::sin(a), -std::sin(a), std::cos(a)}, 0, 0);
    }
    case RandOp::posterize:
      return posterize(img, 8 - static_cast<int>(std::lround(4.0 * level)));
    case RandOp::solarize:
      return solarize(img, static_cast<T>(1.0 - level));
    case RandOp::color:
      return adjust_saturation(img, factor);
    case RandOp::contrast:
      return adjust_contrast(img, factor);
    case RandOp::brightness:
      return adjust_brightness(img, factor);
    case RandOp::sharpness:
      return adjust_sharpness(img, factor);
    case RandOp::shear_x:
      return detail::affine(img, {1, 0, -sign * 0.3 * level, 1}, 0, 0);
    case RandOp::shear_y:
      return detail::affine(img, {1, -sign * 0.3 * level, 0, 1}, 0, 0);
    case RandOp::translate_x:
      return detail::affine(img, {1, 0, 0, 1}, 0,
                            -sign * 150.0 / 331.0 * static_cast<double>(img.dim(2)) * level);
    case RandOp::translate_y:
      return detail::affine(img, {1, 0, 0, 1},
                            -sign * 150.0 / 331.0 * static_cast<double>(img.dim(1)) * level, 0);
  }
  return img;
}

template <typename T, typename Rng>
Tensor<T> weak_augment(const Tensor<T>& img, const AugmentSpec& spec, Rng& rng) {
  detail::require_image(img);
  if (spec.weak_max_shift == 0) return img;
  std::uniform_int_distribution<int> d(-spec.weak_max_shift, spec.weak_max_shift);
  const int dy = d(rng);
  const int dx = d(rng);
  return shift_image(img, dy, dx);
}

template <typename T, typename Rng>
Tensor<T> strong_augment(const Tensor<T>& img, const AugmentSpec& spec, Rng& rng) {
  detail::require_image(img);
  std::bernoulli_distribution coin(0.5);
  Tensor<T> out = img;
  if (spec.flip_h && coin(rng)) out = flip_horizontal(out);
  if (spec.flip_v && coin(rng)) out = flip_vertical(out);
  std::uniform_int_distribution<std::size_t> pick(0, kRandOps.size() - 1);
  for (int i = 0; i < spec.rand_n; ++i) {
    const RandOp op = kRandOps[pick(rng)];
    const bool negate = coin(rng);
    out = apply_rand_op(out, op, spec.rand_m, negate);
  }
  return out;
}

// Brightness, contrast and saturation with factors in [1-s, 1+s], random order.
template <typename T, typename Rng>
Tensor<T> color_jitter(const Tensor<T>& img, const AugmentSpec& spec, Rng& rng) {
  detail::require_image(img);
  const double s = spec.jitter_strength;
  std::uniform_real_distribution<double> f(1.0 - s, 1.0 + s);
  const std::array<T, 3> factors{static_cast<T>(f(rng)), static_cast<T>(f(rng)),
                                 static_cast<T>(f(rng))};
  std::array<int, 3> order{0, 1, 2};
  std::shuffle(order.begin(), order.end(), rng);
  Tensor<T> out = img;
  for (int which : order) {
    const T v = factors[static_cast<std::size_t>(which)];
    if (which == 0) out = adjust_brightness(out, v);
    else if (which == 1) out = adjust_contrast(out, v);
    else out = adjust_saturation(out, v);
  }
  return out;
}

}  // namespace space
