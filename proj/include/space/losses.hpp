#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <vector>

#include "space/autodiff.hpp"
#include "space/errors.hpp"
#include "space/networks.hpp"

namespace space {

// Per-element running threshold on squared teacher-student distances.
template <typename T>
struct CriterionState {
  Tensor<T> upsilon;
  T alpha = T(0.999);
  bool initialized = false;
};

// First call copies f_ts_o; later calls blend with factor alpha.
template <typename T>
void update_criterion(CriterionState<T>& crit, const Tensor<T>& f_ts_o) {
  if (!crit.initialized) {
    crit.upsilon = f_ts_o;
    crit.initialized = true;
    return;
  }
  require_same_shape(crit.upsilon.shape(), f_ts_o.shape(), "update_criterion");
  const T a = crit.alpha;
  for (std::size_t i = 0; i < f_ts_o.size(); ++i)
    crit.upsilon[i] = a * crit.upsilon[i] + (T{1} - a) * f_ts_o[i];
}

template <typename T>
struct SclIntermediates {
  Tensor<T> f_ts_o, f_ts_w, f_ts_s;
  Tensor<T> d_ow, d_os, d_ws;
  Tensor<T> m_o, m_w, m_s;
};

struct LossBundle {
  double l_ts = 0, l_ow = 0, l_os = 0, l_ws = 0, l_structural = 0;
  double l_fae = 0, l_fm = 0, l_logical = 0, l_total = 0;
  double sel_o = 0, sel_w = 0, sel_s = 0;

  bool finite() const {
    for (double v : {l_ts, l_ow, l_os, l_ws, l_structural, l_fae, l_fm, l_logical, l_total})
      if (!std::isfinite(v)) return false;
    return true;
  }
  friend bool operator==(const LossBundle&, const LossBundle&) = default;
};

template <typename T>
Tensor<T> sq_diff(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a.shape(), b.shape(), "sq_diff");
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) {
    const T d = a[i] - b[i];
    out[i] = d * d;
  }
  return out;
}

// sum(loss * mask) / sum(mask); zero (and no gradient) when the mask is empty.
template <typename T>
Var<T> masked_mean(const Var<T>& loss, const Tensor<T>& mask) {
  require_same_shape(loss.shape(), mask.shape(), "masked_mean");
  long double selected = 0;
  for (T m : mask.vec()) selected += m;
  if (selected == 0) return Var<T>::constant(Tensor<T>::scalar(T{0}));
  return scale(sum(mul_const(loss, mask)), static_cast<T>(1.0L / selected));
}

template <typename T>
T masked_mean(const Tensor<T>& loss, const Tensor<T>& mask) {
  return masked_mean(Var<T>::constant(loss), mask).value().item();
}

template <typename T>
T mask_fraction(const Tensor<T>& mask) {
  long double s = 0;
  for (T m : mask.vec()) s += m;
  return mask.empty() ? T{0} : static_cast<T>(s / static_cast<long double>(mask.size()));
}

// m_o = [f_ts_o > U], m_w = [f_ts_w < U], m_s = [f_ts_s < U]; strict, ties excluded.
template <typename T>
void build_masks(SclIntermediates<T>& inter, const CriterionState<T>& crit) {
  if (!crit.initialized) throw ContractError("build_masks needs an initialized criterion");
  const Tensor<T>& u = crit.upsilon;
  require_same_shape(inter.f_ts_o.shape(), u.shape(), "build_masks");
  auto mask = [&](const Tensor<T>& f, bool above) {
    require_same_shape(f.shape(), u.shape(), "build_masks");
    Tensor<T> m(f.shape());
    for (std::size_t i = 0; i < f.size(); ++i) m[i] = (above ? f[i] > u[i] : f[i] < u[i]) ? 1 : 0;
    return m;
  };
  inter.m_o = mask(inter.f_ts_o, true);
  inter.m_w = mask(inter.f_ts_w, false);
  inter.m_s = mask(inter.f_ts_s, false);
}

template <typename T>
struct SclResult {
  Var<T> structural;  // differentiable L_structural
  LossBundle bundle;  // l_ts..l_structural and selected fractions
  SclIntermediates<T> inter;
};

// Structural branch. t_o is the (normalized) teacher on x_o; s_o, s_w, s_s
// are student outputs on the original, weak and strong views. The criterion
// is read, never written; the caller updates it after the step.
template <typename T>
SclResult<T> scl_losses(const Tensor<T>& t_o, const Var<T>& s_o, const Var<T>& s_w,
                        const Var<T>& s_s, const CriterionState<T>& crit, T lambda1) {
  require_same_shape(t_o.shape(), s_o.shape(), "scl_losses");
  require_same_shape(t_o.shape(), s_w.shape(), "scl_losses");
  require_same_shape(t_o.shape(), s_s.shape(), "scl_losses");
  const Var<T> teacher = Var<T>::constant(t_o);
  const Var<T> s_o_fixed = stop_gradient(s_o);

  const Var<T> f_ts_o = sq_diff(teacher, s_o);
  const Var<T> d_ow = sq_diff(s_o_fixed, s_w);
  const Var<T> d_os = sq_diff(s_o_fixed, s_s);
  const Var<T> d_ws = sq_diff(s_w, s_s);

  SclResult<T> r;
  r.inter.f_ts_o = f_ts_o.value();
  r.inter.f_ts_w = sq_diff(t_o, s_w.value());
  r.inter.f_ts_s = sq_diff(t_o, s_s.value());
  r.inter.d_ow = d_ow.value();
  r.inter.d_os = d_os.value();
  r.inter.d_ws = d_ws.value();
  build_masks(r.inter, crit);

  Tensor<T> m_ws(r.inter.m_w.shape());
  for (std::size_t i = 0; i < m_ws.size(); ++i) m_ws[i] = r.inter.m_w[i] * r.inter.m_s[i];

  const Var<T> l_ts = masked_mean(f_ts_o, r.inter.m_o);
  const Var<T> l_ow = masked_mean(d_ow, r.inter.m_w);
  const Var<T> l_os = masked_mean(d_os, r.inter.m_s);
  const Var<T> l_ws = masked_mean(d_ws, m_ws);
  r.structural = add(l_ts, scale(add(add(l_ow, l_os), l_ws), lambda1));

  auto& b = r.bundle;
  b.l_ts = l_ts.value().item();
  b.l_ow = l_ow.value().item();
  b.l_os = l_os.value().item();
  b.l_ws = l_ws.value().item();
  b.l_structural = r.structural.value().item();
  b.sel_o = mask_fraction(r.inter.m_o);
  b.sel_w = mask_fraction(r.inter.m_w);
  b.sel_s = mask_fraction(r.inter.m_s);
  return r;
}

// Linear interpolation between order statistics at position q * (N - 1).
template <typename T>
T quantile(std::span<const T> values, double q) {
  if (values.empty()) throw ContractError("quantile of an empty tensor");
  if (!(q >= 0 && q <= 1)) throw ContractError("quantile level must be in [0,1]");
  std::vector<T> v(values.begin(), values.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const double frac = pos - static_cast<double>(lo);
  std::nth_element(v.begin(), v.begin() + static_cast<long>(lo), v.end());
  const T a = v[lo];
  if (frac == 0 || lo + 1 >= v.size()) return a;
  const T b = *std::min_element(v.begin() + static_cast<long>(lo) + 1, v.end());
  return static_cast<T>(a + frac * (b - a));
}

template <typename T>
struct LogicalResult {
  Var<T> logical;
  LossBundle bundle;  // l_fae, l_fm, l_logical
  Tensor<T> z_fm;
  T d_hard{};
};

// Logical branch on the feature-encoder view. converter maps a stop-gradient
// copy of the student features toward the encoder's output.
template <typename T, typename Converter>
LogicalResult<T> logical_losses(const Tensor<T>& t_w, const Var<T>& ae_w, const Var<T>& s_w,
                                const Converter& converter, double q, T lambda2) {
  require_same_shape(t_w.shape(), ae_w.shape(), "logical_losses");
  require_same_shape(t_w.shape(), s_w.shape(), "logical_losses");
  LogicalResult<T> r;
  const Var<T> l_fae = mean(sq_diff(ae_w, Var<T>::constant(t_w)));
  const Var<T> converted = converter(stop_gradient(s_w));
  require_same_shape(converted.shape(), ae_w.shape(), "logical_losses");
  const Var<T> z = sq_diff(ae_w, converted);
  r.z_fm = z.value();
  r.d_hard = quantile<T>(r.z_fm.span(), q);
  Tensor<T> hard(r.z_fm.shape());
  for (std::size_t i = 0; i < hard.size(); ++i) hard[i] = r.z_fm[i] >= r.d_hard ? 1 : 0;
  const Var<T> l_fm = masked_mean(z, hard);
  r.logical = add(l_fae, scale(l_fm, lambda2));
  r.bundle.l_fae = l_fae.value().item();
  r.bundle.l_fm = l_fm.value().item();
  r.bundle.l_logical = r.logical.value().item();
  return r;
}

inline double total_loss(double structural, double logical) { return structural + logical; }

// Merges the two partial bundles and fills l_total.
inline LossBundle combine(const LossBundle& structural, const LossBundle& logical) {
  LossBundle b = structural;
  b.l_fae = logical.l_fae;
  b.l_fm = logical.l_fm;
  b.l_logical = logical.l_logical;
  b.l_total = total_loss(b.l_structural, b.l_logical);
  return b;
}

}  // namespace space
