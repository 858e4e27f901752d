#pragma once

// Straight-line reference implementations. They deliberately avoid the
// library's tensor ops so agreement means something.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "space/tensor.hpp"

namespace oracle {

using Vec = std::vector<double>;

inline Vec to_vec(const space::Tensor<double>& t) { return t.vec(); }

inline space::Tensor<double> random_tensor(std::mt19937_64& rng, space::Shape shape, double lo = -1,
                                           double hi = 1) {
  std::uniform_real_distribution<double> u(lo, hi);
  space::Tensor<double> t(std::move(shape));
  for (auto& v : t.vec()) v = u(rng);
  return t;
}

struct Scl {
  double l_ts, l_ow, l_os, l_ws, l_structural;
};

// Structural branch, element by element.
inline Scl scl(const Vec& t_o, const Vec& s_o, const Vec& s_w, const Vec& s_s, const Vec& ups,
               double lambda1) {
  double num_ts = 0, den_ts = 0, num_ow = 0, den_ow = 0, num_os = 0, den_os = 0, num_ws = 0,
         den_ws = 0;
  for (std::size_t i = 0; i < t_o.size(); ++i) {
    const double fo = (t_o[i] - s_o[i]) * (t_o[i] - s_o[i]);
    const double fw = (t_o[i] - s_w[i]) * (t_o[i] - s_w[i]);
    const double fs = (t_o[i] - s_s[i]) * (t_o[i] - s_s[i]);
    const bool mo = fo > ups[i], mw = fw < ups[i], ms = fs < ups[i];
    if (mo) {
      num_ts += fo;
      den_ts += 1;
    }
    if (mw) {
      num_ow += (s_o[i] - s_w[i]) * (s_o[i] - s_w[i]);
      den_ow += 1;
    }
    if (ms) {
      num_os += (s_o[i] - s_s[i]) * (s_o[i] - s_s[i]);
      den_os += 1;
    }
    if (mw && ms) {
      num_ws += (s_w[i] - s_s[i]) * (s_w[i] - s_s[i]);
      den_ws += 1;
    }
  }
  auto ratio = [](double n, double d) { return d == 0 ? 0.0 : n / d; };
  Scl r{ratio(num_ts, den_ts), ratio(num_ow, den_ow), ratio(num_os, den_os), ratio(num_ws, den_ws), 0};
  r.l_structural = r.l_ts + lambda1 * (r.l_ow + r.l_os + r.l_ws);
  return r;
}

// Sort-based quantile with linear interpolation at q*(n-1).
inline double quantile(Vec v, double q) {
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

// Naive same-shape convolution, x: (C,H,W), w: (O,C,K,K), zero padding k/2.
inline Vec conv_same(const Vec& x, std::size_t c, std::size_t h, std::size_t w, const Vec& weight,
                     const Vec& bias, std::size_t o, std::size_t k) {
  Vec out(o * h * w, 0.0);
  const long r = static_cast<long>(k / 2);
  for (std::size_t oc = 0; oc < o; ++oc)
    for (long y = 0; y < static_cast<long>(h); ++y)
      for (long xx = 0; xx < static_cast<long>(w); ++xx) {
        double acc = bias[oc];
        for (std::size_t ic = 0; ic < c; ++ic)
          for (long ky = 0; ky < static_cast<long>(k); ++ky)
            for (long kx = 0; kx < static_cast<long>(k); ++kx) {
              const long iy = y + ky - r, ix = xx + kx - r;
              if (iy < 0 || ix < 0 || iy >= static_cast<long>(h) || ix >= static_cast<long>(w)) continue;
              acc += weight[((oc * c + ic) * k + ky) * k + kx] * x[(ic * h + iy) * w + ix];
            }
        out[(oc * h + y) * w + xx] = acc;
      }
  return out;
}

struct ConvLayer {
  Vec weight, bias;
};

// f + convs(f) with ReLU between layers.
inline Vec converter(const Vec& f, std::size_t c, std::size_t h, std::size_t w,
                     const std::vector<ConvLayer>& layers, std::size_t k) {
  Vec x = f;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    x = conv_same(x, c, h, w, layers[l].weight, layers[l].bias, c, k);
    if (l + 1 < layers.size())
      for (auto& v : x) v = std::max(0.0, v);
  }
  for (std::size_t i = 0; i < x.size(); ++i) x[i] += f[i];
  return x;
}

struct Logical {
  double l_fae, l_fm, l_logical;
};

inline Logical logical(const Vec& t, const Vec& ae, const Vec& converted, double q, double lambda2) {
  double fae = 0;
  Vec z(t.size());
  for (std::size_t i = 0; i < t.size(); ++i) {
    fae += (ae[i] - t[i]) * (ae[i] - t[i]);
    z[i] = (ae[i] - converted[i]) * (ae[i] - converted[i]);
  }
  fae /= static_cast<double>(t.size());
  const double d = quantile(z, q);
  double num = 0, den = 0;
  for (double v : z)
    if (v >= d) {
      num += v;
      den += 1;
    }
  const double fm = den == 0 ? 0 : num / den;
  return {fae, fm, fae + lambda2 * fm};
}

// O(n^2) pairwise AUROC with half credit for ties.
inline double auroc_pairwise(const Vec& normal, const Vec& anomalous) {
  double wins = 0;
  for (double a : anomalous)
    for (double n : normal) wins += a > n ? 1.0 : (a == n ? 0.5 : 0.0);
  return wins / (static_cast<double>(normal.size()) * static_cast<double>(anomalous.size()));
}

// Channel mean of squared differences, (C,H,W) -> (H,W).
inline Vec channel_mean(const Vec& a, const Vec& b, std::size_t c, std::size_t h, std::size_t w) {
  Vec out(h * w, 0.0);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      double s = 0;
      for (std::size_t ch = 0; ch < c; ++ch) {
        const double d = a[(ch * h + y) * w + x] - b[(ch * h + y) * w + x];
        s += d * d;
      }
      out[y * w + x] = s / static_cast<double>(c);
    }
  return out;
}

// Bilinear resize of one (H,W) plane with half-pixel centers and edge clamping.
inline Vec bilinear(const Vec& m, std::size_t h, std::size_t w, std::size_t oh, std::size_t ow) {
  auto tap = [](std::size_t i, std::size_t in, std::size_t out, std::size_t& a, std::size_t& b) {
    const double src = std::max(0.0, (static_cast<double>(i) + 0.5) * static_cast<double>(in) /
                                         static_cast<double>(out) - 0.5);
    a = std::min(static_cast<std::size_t>(std::floor(src)), in - 1);
    b = std::min(a + 1, in - 1);
    return src - static_cast<double>(a);
  };
  Vec out(oh * ow);
  for (std::size_t y = 0; y < oh; ++y)
    for (std::size_t x = 0; x < ow; ++x) {
      std::size_t y0, y1, x0, x1;
      const double fy = tap(y, h, oh, y0, y1), fx = tap(x, w, ow, x0, x1);
      const double top = m[y0 * w + x0] * (1 - fx) + m[y0 * w + x1] * fx;
      const double bottom = m[y1 * w + x0] * (1 - fx) + m[y1 * w + x1] * fx;
      out[y * ow + x] = top * (1 - fy) + bottom * fy;
    }
  return out;
}

}  // namespace oracle
