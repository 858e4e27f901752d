#pragma once

// Flat "key = value" run configuration. One registry drives parsing,
// printing and the --help listing, so the three cannot drift apart.

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

#include "space/augment.hpp"
#include "space/errors.hpp"
#include "space/networks.hpp"
#include "space/trainer.hpp"

namespace space {

struct RunConfig {
  NetworkConfig network;
  TrainConfig train;
  AugmentSpec augment;
  std::string category = "toy";
  double validation_fraction = 0.1;
  std::uint64_t teacher_seed = 0;
  std::string teacher_checkpoint;  // empty: randomly initialized teacher

  void validate() const {
    network.validate();
    train.validate();
    augment.validate();
    if (!(validation_fraction > 0 && validation_fraction < 1))
      throw ConfigError("validation_fraction must be in (0,1)");
  }
};

namespace detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

template <typename U>
U parse_number(const std::string& key, const std::string& v) {
  U out{};
  const char* end = v.data() + v.size();
  auto [p, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || p != end)
    throw ConfigError("invalid value '" + v + "' for key '" + key + "'");
  return out;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("invalid boolean '" + v + "' for key '" + key + "'");
}

// Shortest text that parses back to the same double.
inline std::string format_double(double v) {
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

}  // namespace detail

struct ConfigKey {
  std::string name;
  std::string help;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

namespace detail {

template <typename Field>
ConfigKey make_key(std::string name, std::string help, Field field) {
  using U = std::remove_cvref_t<decltype(field(std::declval<RunConfig&>()))>;
  ConfigKey k;
  k.name = name;
  k.help = std::move(help);
  k.set = [name, field](RunConfig& c, const std::string& v) {
    if constexpr (std::is_same_v<U, bool>)
      field(c) = parse_bool(name, v);
    else if constexpr (std::is_same_v<U, std::string>)
      field(c) = v;
    else if constexpr (std::is_same_v<U, PdnVariant>) {
      try {
        field(c) = parse_pdn_variant(v);
      } catch (const ConfigError&) {
        throw ConfigError("invalid value '" + v + "' for key '" + name + "' (M, S or tiny)");
      }
    } else
      field(c) = parse_number<U>(name, v);
  };
  k.get = [field](const RunConfig& c) -> std::string {
    const auto& f = field(c);
    if constexpr (std::is_same_v<U, bool>)
      return f ? "true" : "false";
    else if constexpr (std::is_same_v<U, std::string>)
      return f;
    else if constexpr (std::is_same_v<U, PdnVariant>)
      return pdn_variant_name(f);
    else if constexpr (std::is_floating_point_v<U>)
      return format_double(f);
    else
      return std::to_string(f);
  };
  return k;
}

}  // namespace detail

#define SPACE_KEY(name, help, expr) \
  detail::make_key(name, help, [](auto& c) -> auto& { return expr; })

inline const std::vector<ConfigKey>& config_keys() {
  static const std::vector<ConfigKey> keys = {
      SPACE_KEY("feature_dim", "feature channels C of teacher/student/encoder", c.network.feature_dim),
      SPACE_KEY("pdn_variant", "PDN size: M, S or tiny", c.network.pdn_variant),
      SPACE_KEY("fe_bottleneck_dim", "latent width of the feature encoder", c.network.fe_bottleneck_dim),
      SPACE_KEY("fm_layers", "conv layers in the feature converter", c.network.fm_layers),
      SPACE_KEY("fm_kernel", "kernel size of converter convs (odd)", c.network.fm_kernel),
      SPACE_KEY("input_size", "square network input side", c.network.input_size),
      SPACE_KEY("iterations", "optimization steps", c.train.iterations),
      SPACE_KEY("batch_size", "images per step", c.train.batch_size),
      SPACE_KEY("learning_rate", "AdamW learning rate", c.train.learning_rate),
      SPACE_KEY("lr_decay_at", "step at which lr drops 10x (0 = never)", c.train.lr_decay_at),
      SPACE_KEY("wd_student", "weight decay of the student", c.train.wd_student),
      SPACE_KEY("wd_fe_fm", "weight decay of encoder and converter", c.train.wd_fe_fm),
      SPACE_KEY("lambda1_warmup_iters", "consistency terms are off before this step", c.train.lambda1_warmup_iters),
      SPACE_KEY("lambda1_value", "consistency weight after warmup", c.train.lambda1_value),
      SPACE_KEY("lambda2", "weight of the hard converter loss", c.train.lambda2),
      SPACE_KEY("q_hard", "quantile selecting hard converter pixels", c.train.q_hard),
      SPACE_KEY("alpha_ema", "EMA factor of the per-position threshold", c.train.alpha_ema),
      SPACE_KEY("student_weight_ema", "EMA factor of the shadow student (0 = copy)", c.train.student_weight_ema),
      SPACE_KEY("student_ema_for_fm", "logical branch reads the shadow student", c.train.student_ema_for_fm),
      SPACE_KEY("use_fm", "false replaces the converter with identity", c.train.use_fm),
      SPACE_KEY("normalize_teacher_in_losses", "standardize teacher features per channel", c.train.normalize_teacher_in_losses),
      SPACE_KEY("seed", "training RNG seed", c.train.seed),
      SPACE_KEY("checkpoint_every", "intermediate checkpoint period (0 = off)", c.train.checkpoint_every),
      SPACE_KEY("weak_max_shift", "max pixel shift of the weak view", c.augment.weak_max_shift),
      SPACE_KEY("rand_n", "random ops per strong view", c.augment.rand_n),
      SPACE_KEY("rand_m", "magnitude of strong ops (0..30)", c.augment.rand_m),
      SPACE_KEY("flip_h", "random horizontal flip in the strong view", c.augment.flip_h),
      SPACE_KEY("flip_v", "random vertical flip in the strong view", c.augment.flip_v),
      SPACE_KEY("jitter_strength", "color jitter strength of the logical view", c.augment.jitter_strength),
      SPACE_KEY("category", "dataset category directory", c.category),
      SPACE_KEY("validation_fraction", "share of train/good held out for calibration", c.validation_fraction),
      SPACE_KEY("teacher_seed", "init seed of networks when no teacher checkpoint is given", c.teacher_seed),
      SPACE_KEY("teacher_checkpoint", "checkpoint providing pretrained teacher weights", c.teacher_checkpoint),
  };
  return keys;
}

#undef SPACE_KEY

inline const ConfigKey* find_config_key(std::string_view name) {
  for (const auto& k : config_keys())
    if (k.name == name) return &k;
  return nullptr;
}

inline void set_config_value(RunConfig& cfg, const std::string& key, const std::string& value) {
  const ConfigKey* k = find_config_key(key);
  if (!k) throw ConfigError("unknown config key '" + key + "'");
  k->set(cfg, value);
}

// Applies "key = value" lines over cfg. Later lines win.
inline void parse_config(std::istream& in, RunConfig& cfg, const std::string& origin = "<config>") {
  std::string line;
  for (std::size_t n = 1; std::getline(in, line); ++n) {
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const std::string t = detail::trim(line);
    if (t.empty()) continue;
    const auto eq = t.find('=');
    const std::string where = origin + ":" + std::to_string(n);
    if (eq == std::string::npos) throw ConfigError(where + ": expected 'key = value'");
    const std::string key = detail::trim(std::string_view(t).substr(0, eq));
    const std::string value = detail::trim(std::string_view(t).substr(eq + 1));
    try {
      set_config_value(cfg, key, value);
    } catch (const ConfigError& e) {
      throw ConfigError(where + ": " + e.what());
    }
  }
}

inline RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  RunConfig cfg;
  parse_config(in, cfg, path);
  cfg.validate();
  return cfg;
}

inline std::string format_config(const RunConfig& cfg) {
  std::string out;
  for (const auto& k : config_keys()) out += k.name + " = " + k.get(cfg) + "\n";
  return out;
}

inline std::string config_help() {
  const RunConfig defaults;
  std::string out = "Config keys (key = value, '#' starts a comment):\n";
  for (const auto& k : config_keys()) {
    std::string left = "  " + k.name + " = " + k.get(defaults);
    if (left.size() < 40) left.resize(40, ' ');
    out += left + "  " + k.help + "\n";
  }
  return out;
}

}  // namespace space
