#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "space/autodiff.hpp"
#include "space/errors.hpp"
#include "space/tensor.hpp"

namespace space {

enum class PdnVariant { M, S, tiny };

inline PdnVariant parse_pdn_variant(const std::string& s) {
  if (s == "M") return PdnVariant::M;
  if (s == "S") return PdnVariant::S;
  if (s == "tiny") return PdnVariant::tiny;
  throw ConfigError("unknown pdn_variant '" + s + "' (expected M, S or tiny)");
}

inline const char* pdn_variant_name(PdnVariant v) {
  switch (v) {
    case PdnVariant::M: return "M";
    case PdnVariant::S: return "S";
    case PdnVariant::tiny: return "tiny";
  }
  return "?";
}

struct NetworkConfig {
  std::size_t feature_dim = 384;
  PdnVariant pdn_variant = PdnVariant::M;
  std::size_t fe_bottleneck_dim = 256;
  std::size_t fm_layers = 3;
  std::size_t fm_kernel = 3;
  std::size_t input_size = 256;

  void validate() const {
    if (feature_dim == 0) throw ConfigError("feature_dim must be > 0");
    if (fe_bottleneck_dim == 0) throw ConfigError("fe_bottleneck_dim must be > 0");
    if (fm_layers == 0) throw ConfigError("fm_layers must be > 0");
    if (fm_kernel % 2 == 0) throw ConfigError("fm_kernel must be odd");
    if (input_size < 16) throw ConfigError("input_size must be >= 16");
  }
  friend bool operator==(const NetworkConfig&, const NetworkConfig&) = default;
};

template <typename T>
using FeatureMap = Tensor<T>;

template <typename T>
using NamedParams = std::vector<std::pair<std::string, Var<T>>>;

template <typename T>
struct Conv2d {
  Var<T> weight;
  Var<T> bias;
  std::size_t stride = 1;
  std::size_t pad = 0;

  Conv2d() = default;
  Conv2d(std::size_t in_c, std::size_t out_c, std::size_t kernel, std::size_t stride_,
         std::size_t pad_)
      : weight(Var<T>::parameter(Tensor<T>({out_c, in_c, kernel, kernel}))),
        bias(Var<T>::parameter(Tensor<T>({out_c}))),
        stride(stride_),
        pad(pad_) {}

  std::size_t kernel() const { return weight.shape()[2]; }
  std::size_t out_size(std::size_t in) const { return (in + 2 * pad - kernel()) / stride + 1; }

  // He-uniform weights scaled by fan-in, zero bias.
  template <typename Rng>
  void init(Rng& rng) {
    const Shape& s = weight.shape();
    const double bound = std::sqrt(6.0 / static_cast<double>(s[1] * s[2] * s[3]));
    std::uniform_real_distribution<double> u(-bound, bound);
    for (auto& v : weight.mutable_value().vec()) v = static_cast<T>(u(rng));
    bias.mutable_value().fill(T{0});
  }

  Var<T> operator()(const Var<T>& x) const { return conv2d(x, weight, bias, stride, pad); }
};

namespace detail {
template <typename T>
void append_conv(NamedParams<T>& out, const std::string& name, const Conv2d<T>& c) {
  out.emplace_back(name + ".weight", c.weight);
  out.emplace_back(name + ".bias", c.bias);
}

template <typename T>
std::vector<Conv2d<T>> clone_convs(const std::vector<Conv2d<T>>& convs) {
  std::vector<Conv2d<T>> out;
  for (const auto& c : convs) {
    Conv2d<T> d;
    d.weight = Var<T>::parameter(c.weight.value());
    d.bias = Var<T>::parameter(c.bias.value());
    d.stride = c.stride;
    d.pad = c.pad;
    out.push_back(std::move(d));
  }
  return out;
}
}  // namespace detail

// Patch description network shared by teacher and student.
//   M:    conv4(256) pool conv4(512) pool conv3(512) conv4(C)
//   S:    same with halved widths
//   tiny: conv4/s2(32) pool conv3(C)
template <typename T>
class Pdn {
 public:
  struct Step {
    enum Kind { conv, relu, pool } kind;
    std::size_t index = 0;  // conv index for conv steps
    std::size_t kernel = 0, stride = 0, pad = 0;
  };

  Pdn() = default;
  Pdn(PdnVariant variant, std::size_t feature_dim) : variant_(variant) {
    auto conv = [&](std::size_t in, std::size_t out, std::size_t k, std::size_t s, std::size_t p) {
      steps_.push_back({Step::conv, convs_.size(), 0, 0, 0});
      convs_.emplace_back(in, out, k, s, p);
    };
    auto relu = [&] { steps_.push_back({Step::relu}); };
    auto pool = [&](std::size_t k, std::size_t s, std::size_t p) {
      steps_.push_back({Step::pool, 0, k, s, p});
    };
    if (variant == PdnVariant::tiny) {
      conv(3, 32, 4, 2, 1);
      relu();
      pool(2, 2, 0);
      conv(32, feature_dim, 3, 1, 1);
      return;
    }
    const std::size_t w = variant == PdnVariant::M ? 256 : 128;
    conv(3, w, 4, 1, 3);
    relu();
    pool(2, 2, 1);
    conv(w, 2 * w, 4, 1, 3);
    relu();
    pool(2, 2, 1);
    conv(2 * w, 2 * w, 3, 1, 1);
    relu();
    conv(2 * w, feature_dim, 4, 1, 0);
  }

  PdnVariant variant() const { return variant_; }

  template <typename Rng>
  void init(Rng& rng) {
    for (auto& c : convs_) c.init(rng);
  }

  std::size_t output_size(std::size_t in) const {
    for (const auto& s : steps_) {
      if (s.kind == Step::conv) in = convs_[s.index].out_size(in);
      if (s.kind == Step::pool) in = (in + 2 * s.pad - s.kernel) / s.stride + 1;
    }
    return in;
  }
  std::size_t feature_dim() const { return convs_.back().weight.shape()[0]; }

  Var<T> forward(const Var<T>& x) const {
    Var<T> h = x;
    for (const auto& s : steps_) {
      switch (s.kind) {
        case Step::conv: h = convs_[s.index](h); break;
        case Step::relu: h = relu(h); break;
        case Step::pool: h = avg_pool2d(h, s.kernel, s.stride, s.pad); break;
      }
    }
    return h;
  }

  NamedParams<T> parameters() const {
    NamedParams<T> out;
    for (std::size_t i = 0; i < convs_.size(); ++i)
      detail::append_conv(out, "conv" + std::to_string(i), convs_[i]);
    return out;
  }

  // Leaves the weights out of every gradient computation.
  void freeze() {
    for (auto& c : convs_) {
      c.weight.set_requires_grad(false);
      c.bias.set_requires_grad(false);
    }
  }

  Pdn clone() const {
    Pdn p = *this;
    p.convs_ = detail::clone_convs(convs_);
    return p;
  }

 private:
  PdnVariant variant_ = PdnVariant::tiny;
  std::vector<Step> steps_;
  std::vector<Conv2d<T>> convs_;
};

// Bottleneck encoder: stride-2 convs down to <= 8 px, one valid conv to a
// 1x1 latent, then a resize-conv decoder back to the feature grid.
template <typename T>
class FeatureEncoder {
 public:
  FeatureEncoder() = default;
  FeatureEncoder(std::size_t input_size, std::size_t out_h, std::size_t out_w,
                 std::size_t bottleneck, std::size_t feature_dim, std::size_t width)
      : out_h_(out_h), out_w_(out_w) {
    std::size_t s = input_size, in_c = 3;
    while (s > 8) {
      down_.emplace_back(in_c, width, 4, 2, 1);
      s = down_.back().out_size(s);
      in_c = width;
    }
    latent_ = Conv2d<T>(in_c, bottleneck, s, 1, 0);
    // Decoder grid sizes: halve the output size until <= 2, then climb back.
    std::vector<std::pair<std::size_t, std::size_t>> sizes;
    for (std::size_t h = out_h, w = out_w; h > 2 || w > 2;) {
      h = (h + 1) / 2;
      w = (w + 1) / 2;
      sizes.emplace_back(h, w);
    }
    in_c = bottleneck;
    for (auto it = sizes.rbegin(); it != sizes.rend(); ++it) {
      up_sizes_.push_back(*it);
      up_.emplace_back(in_c, width, 3, 1, 1);
      in_c = width;
    }
    up_sizes_.emplace_back(out_h, out_w);
    up_.emplace_back(in_c, width, 3, 1, 1);
    head_ = Conv2d<T>(width, feature_dim, 3, 1, 1);
  }

  template <typename Rng>
  void init(Rng& rng) {
    for (auto& c : down_) c.init(rng);
    latent_.init(rng);
    for (auto& c : up_) c.init(rng);
    head_.init(rng);
  }

  Var<T> forward(const Var<T>& x) const {
    Var<T> h = x;
    for (const auto& c : down_) h = relu(c(h));
    h = latent_(h);
    for (std::size_t i = 0; i < up_.size(); ++i) {
      h = resize_bilinear(h, up_sizes_[i].first, up_sizes_[i].second);
      h = relu(up_[i](h));
    }
    return head_(h);
  }

  NamedParams<T> parameters() const {
    NamedParams<T> out;
    for (std::size_t i = 0; i < down_.size(); ++i)
      detail::append_conv(out, "down" + std::to_string(i), down_[i]);
    detail::append_conv(out, "latent", latent_);
    for (std::size_t i = 0; i < up_.size(); ++i)
      detail::append_conv(out, "up" + std::to_string(i), up_[i]);
    detail::append_conv(out, "head", head_);
    return out;
  }

  std::size_t bottleneck_dim() const { return latent_.weight.shape()[0]; }

 private:
  std::size_t out_h_ = 0, out_w_ = 0;
  std::vector<Conv2d<T>> down_;
  Conv2d<T> latent_;
  std::vector<Conv2d<T>> up_;
  std::vector<std::pair<std::size_t, std::size_t>> up_sizes_;
  Conv2d<T> head_;
};

// Feature converter: output = input + stack of same-padded stride-1 convs,
// ReLU between convs and none after the last.
template <typename T>
class FeatureConverter {
 public:
  FeatureConverter() = default;
  FeatureConverter(std::size_t feature_dim, std::size_t layers, std::size_t kernel) {
    for (std::size_t i = 0; i < layers; ++i)
      convs_.emplace_back(feature_dim, feature_dim, kernel, 1, kernel / 2);
  }

  template <typename Rng>
  void init(Rng& rng) {
    for (auto& c : convs_) c.init(rng);
  }

  Var<T> forward(const Var<T>& f) const {
    if (f.shape().size() != 3 || f.shape()[0] != convs_.front().weight.shape()[1])
      throw ConfigError("feature converter expects " +
                        std::to_string(convs_.front().weight.shape()[1]) + " channels, got " +
                        shape_str(f.shape()));
    Var<T> h = f;
    for (std::size_t i = 0; i < convs_.size(); ++i) {
      h = convs_[i](h);
      if (i + 1 < convs_.size()) h = relu(h);
    }
    return add(f, h);
  }

  NamedParams<T> parameters() const {
    NamedParams<T> out;
    for (std::size_t i = 0; i < convs_.size(); ++i)
      detail::append_conv(out, "conv" + std::to_string(i), convs_[i]);
    return out;
  }

 private:
  std::vector<Conv2d<T>> convs_;
};

inline constexpr double kStdFloor = 1e-6;

template <typename T>
struct TeacherStats {
  Tensor<T> mean;  // (C)
  Tensor<T> std;   // (C), entries >= kStdFloor
};

// Per-channel mean and population std pooled over all maps and positions.
template <typename T>
TeacherStats<T> teacher_stats_from_features(std::span<const FeatureMap<T>> maps) {
  if (maps.empty()) throw ConfigError("teacher statistics need at least one training image");
  const std::size_t c = maps.front().dim(0);
  std::vector<long double> s1(c, 0), s2(c, 0);
  std::size_t count = 0;
  for (const auto& m : maps) {
    if (m.dim(0) != c) throw ContractError("teacher feature maps disagree on channel count");
    const std::size_t plane = m.dim(1) * m.dim(2);
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t i = 0; i < plane; ++i) s1[ch] += m[ch * plane + i];
    count += plane;
  }
  TeacherStats<T> st{Tensor<T>({c}), Tensor<T>({c})};
  for (std::size_t ch = 0; ch < c; ++ch) st.mean[ch] = static_cast<T>(s1[ch] / count);
  for (const auto& m : maps) {
    const std::size_t plane = m.dim(1) * m.dim(2);
    for (std::size_t ch = 0; ch < c; ++ch) {
      const long double mu = s1[ch] / count;
      for (std::size_t i = 0; i < plane; ++i) {
        const long double d = m[ch * plane + i] - mu;
        s2[ch] += d * d;
      }
    }
  }
  for (std::size_t ch = 0; ch < c; ++ch)
    st.std[ch] = static_cast<T>(std::max<long double>(std::sqrt(s2[ch] / count), kStdFloor));
  return st;
}

template <typename T>
FeatureMap<T> normalize_teacher(const FeatureMap<T>& f, const TeacherStats<T>& st) {
  if (f.dim(0) != st.mean.size()) throw ContractError("teacher stats channel mismatch");
  FeatureMap<T> out(f.shape());
  const std::size_t plane = f.dim(1) * f.dim(2);
  for (std::size_t c = 0; c < f.dim(0); ++c)
    for (std::size_t i = 0; i < plane; ++i)
      out[c * plane + i] = (f[c * plane + i] - st.mean[c]) / st.std[c];
  return out;
}

template <typename T>
FeatureMap<T> denormalize_teacher(const FeatureMap<T>& f, const TeacherStats<T>& st) {
  if (f.dim(0) != st.mean.size()) throw ContractError("teacher stats channel mismatch");
  FeatureMap<T> out(f.shape());
  const std::size_t plane = f.dim(1) * f.dim(2);
  for (std::size_t c = 0; c < f.dim(0); ++c)
    for (std::size_t i = 0; i < plane; ++i)
      out[c * plane + i] = f[c * plane + i] * st.std[c] + st.mean[c];
  return out;
}

inline std::size_t encoder_width(PdnVariant v) { return v == PdnVariant::tiny ? 32 : 64; }

// The four networks plus everything a trained model carries.
template <typename T>
struct NetworkSet {
  NetworkConfig config;
  Pdn<T> teacher;
  Pdn<T> student;
  Pdn<T> student_shadow;  // EMA copy of the student weights
  FeatureEncoder<T> encoder;
  FeatureConverter<T> converter;

  NetworkSet() = default;
  explicit NetworkSet(const NetworkConfig& cfg) : config(cfg) {
    cfg.validate();
    teacher = Pdn<T>(cfg.pdn_variant, cfg.feature_dim);
    student = Pdn<T>(cfg.pdn_variant, cfg.feature_dim);
    const std::size_t fs = teacher.output_size(cfg.input_size);
    if (fs == 0 || fs > cfg.input_size)
      throw ConfigError("input_size " + std::to_string(cfg.input_size) +
                        " too small for pdn_variant " + pdn_variant_name(cfg.pdn_variant));
    encoder = FeatureEncoder<T>(cfg.input_size, fs, fs, cfg.fe_bottleneck_dim, cfg.feature_dim,
                                encoder_width(cfg.pdn_variant));
    converter = FeatureConverter<T>(cfg.feature_dim, cfg.fm_layers, cfg.fm_kernel);
    student_shadow = student.clone();
    teacher.freeze();
    student_shadow.freeze();
  }

  // Independent streams per network so changing one architecture leaves the
  // others' initial weights untouched.
  void init(std::uint64_t seed) {
    auto stream = [seed](std::uint32_t id) {
      std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                        id};
      return std::mt19937_64(seq);
    };
    auto r0 = stream(0), r1 = stream(1), r2 = stream(2), r3 = stream(3);
    teacher.init(r0);
    student.init(r1);
    encoder.init(r2);
    converter.init(r3);
    student_shadow = student.clone();
    student_shadow.freeze();
  }

  std::size_t feature_size() const { return teacher.output_size(config.input_size); }

  // Canonical parameter names for checkpoints.
  NamedParams<T> all_parameters() const {
    NamedParams<T> out;
    auto add_group = [&](const std::string& prefix, const NamedParams<T>& ps) {
      for (const auto& [n, v] : ps) out.emplace_back(prefix + "." + n, v);
    };
    add_group("teacher", teacher.parameters());
    add_group("student", student.parameters());
    add_group("student_shadow", student_shadow.parameters());
    add_group("encoder", encoder.parameters());
    add_group("converter", converter.parameters());
    return out;
  }
};

// Forward without recording a graph.
template <typename T, typename Net>
FeatureMap<T> infer(const Net& net, const Tensor<T>& x) {
  NoGradGuard guard;
  return net.forward(Var<T>::constant(x)).value();
}

}  // namespace space
