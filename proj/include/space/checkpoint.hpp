#pragma once

// Single-file checkpoint, little-endian:
//   "SPACECKP" u32 version
//   u32 n_meta   { str key, str value }           (str = u32 length + bytes)
//   u32 n_tensor { str name, u8 dtype, u32 rank, u64 dims[rank], raw data }
// dtype 1 = float32, 2 = float64. Parameters are stored in their native
// precision so a save/load/save cycle is byte-identical.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <type_traits>
#include <vector>

#include "space/errors.hpp"
#include "space/model.hpp"

namespace space {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes little-endian");

inline constexpr char kCheckpointMagic[8] = {'S', 'P', 'A', 'C', 'E', 'C', 'K', 'P'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

template <typename T>
constexpr std::uint8_t dtype_code() {
  static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);
  return std::is_same_v<T, float> ? 1 : 2;
}

// Raw contents of a checkpoint file, before interpretation.
struct CheckpointFile {
  struct Entry {
    std::uint8_t dtype = 0;
    Shape shape;
    std::vector<char> bytes;
  };
  std::vector<std::pair<std::string, std::string>> meta;
  std::vector<std::pair<std::string, Entry>> tensors;

  const std::string& meta_value(const std::string& key) const {
    for (const auto& [k, v] : meta)
      if (k == key) return v;
    throw ConfigError("checkpoint is missing key '" + key + "'");
  }
  const Entry* find(const std::string& name) const {
    for (const auto& [n, e] : tensors)
      if (n == name) return &e;
    return nullptr;
  }

  template <typename T>
  void put(const std::string& name, const Tensor<T>& t) {
    Entry e;
    e.dtype = dtype_code<T>();
    e.shape = t.shape();
    e.bytes.resize(t.size() * sizeof(T));
    std::memcpy(e.bytes.data(), t.data(), e.bytes.size());
    tensors.emplace_back(name, std::move(e));
  }

  template <typename T>
  Tensor<T> get(const std::string& name) const {
    const Entry* e = find(name);
    if (!e) throw ConfigError("checkpoint is missing tensor '" + name + "'");
    if (e->dtype != dtype_code<T>())
      throw ConfigError("checkpoint tensor '" + name + "' has a different precision");
    Tensor<T> t(e->shape);
    if (e->bytes.size() != t.size() * sizeof(T))
      throw ConfigError("checkpoint tensor '" + name + "' is truncated");
    std::memcpy(t.data(), e->bytes.data(), e->bytes.size());
    return t;
  }
};

namespace detail {

template <typename U>
void put_pod(std::ostream& os, U v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(U));
}
inline void put_str(std::ostream& os, const std::string& s) {
  put_pod(os, static_cast<std::uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}
template <typename U>
U get_pod(std::istream& is) {
  U v{};
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(U))) throw ConfigError("checkpoint truncated");
  return v;
}
inline std::string get_str(std::istream& is) {
  const auto n = get_pod<std::uint32_t>(is);
  if (n > (1u << 30)) throw ConfigError("checkpoint string length is implausible");
  std::string s(n, '\0');
  if (!is.read(s.data(), n)) throw ConfigError("checkpoint truncated");
  return s;
}

}  // namespace detail

inline std::string serialize_checkpoint(const CheckpointFile& f) {
  std::ostringstream os(std::ios::binary);
  os.write(kCheckpointMagic, sizeof kCheckpointMagic);
  detail::put_pod(os, kCheckpointVersion);
  detail::put_pod(os, static_cast<std::uint32_t>(f.meta.size()));
  for (const auto& [k, v] : f.meta) {
    detail::put_str(os, k);
    detail::put_str(os, v);
  }
  detail::put_pod(os, static_cast<std::uint32_t>(f.tensors.size()));
  for (const auto& [name, e] : f.tensors) {
    detail::put_str(os, name);
    detail::put_pod(os, e.dtype);
    detail::put_pod(os, static_cast<std::uint32_t>(e.shape.size()));
    for (auto d : e.shape) detail::put_pod(os, static_cast<std::uint64_t>(d));
    os.write(e.bytes.data(), static_cast<std::streamsize>(e.bytes.size()));
  }
  return os.str();
}

inline CheckpointFile parse_checkpoint(const std::string& bytes, const std::string& origin) {
  std::istringstream is(bytes, std::ios::binary);
  char magic[8];
  if (!is.read(magic, 8) || std::memcmp(magic, kCheckpointMagic, 8) != 0)
    throw ConfigError("'" + origin + "' is not a checkpoint file");
  const auto version = detail::get_pod<std::uint32_t>(is);
  if (version != kCheckpointVersion)
    throw ConfigError("'" + origin + "' has unsupported checkpoint version " +
                      std::to_string(version));
  CheckpointFile f;
  const auto n_meta = detail::get_pod<std::uint32_t>(is);
  for (std::uint32_t i = 0; i < n_meta; ++i) {
    std::string k = detail::get_str(is);
    f.meta.emplace_back(std::move(k), detail::get_str(is));
  }
  const auto n_tensors = detail::get_pod<std::uint32_t>(is);
  for (std::uint32_t i = 0; i < n_tensors; ++i) {
    std::string name = detail::get_str(is);
    CheckpointFile::Entry e;
    e.dtype = detail::get_pod<std::uint8_t>(is);
    if (e.dtype != 1 && e.dtype != 2) throw ConfigError("checkpoint tensor '" + name + "' has unknown dtype");
    const auto rank = detail::get_pod<std::uint32_t>(is);
    if (rank > 8) throw ConfigError("checkpoint tensor '" + name + "' has implausible rank");
    for (std::uint32_t d = 0; d < rank; ++d)
      e.shape.push_back(static_cast<std::size_t>(detail::get_pod<std::uint64_t>(is)));
    const std::size_t elem = e.dtype == 1 ? 4 : 8;
    e.bytes.resize(shape_numel(e.shape) * elem);
    if (!is.read(e.bytes.data(), static_cast<std::streamsize>(e.bytes.size())))
      throw ConfigError("checkpoint truncated in tensor '" + name + "'");
    f.tensors.emplace_back(std::move(name), std::move(e));
  }
  return f;
}

inline CheckpointFile read_checkpoint_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open checkpoint '" + path.string() + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_checkpoint(buf.str(), path.string());
}

inline void write_bytes(const std::filesystem::path& path, const std::string& bytes) {
  const std::filesystem::path tmp = path.string() + ".partial";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write '" + tmp.string() + "'");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out.flush()) throw IoError("write failed for '" + tmp.string() + "'");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move '" + tmp.string() + "' to '" + path.string() + "': " + ec.message());
}

namespace detail {
inline std::string exact_decimal(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}
}  // namespace detail

template <typename T>
CheckpointFile to_checkpoint(const SpaceModel<T>& m) {
  CheckpointFile f;
  const NetworkConfig& c = m.nets.config;
  f.meta = {{"feature_dim", std::to_string(c.feature_dim)},
            {"pdn_variant", pdn_variant_name(c.pdn_variant)},
            {"fe_bottleneck_dim", std::to_string(c.fe_bottleneck_dim)},
            {"fm_layers", std::to_string(c.fm_layers)},
            {"fm_kernel", std::to_string(c.fm_kernel)},
            {"input_size", std::to_string(c.input_size)},
            {"init_seed", std::to_string(m.init_seed)},
            {"iteration", std::to_string(m.iteration)},
            {"student_ema_for_fm", m.student_ema_for_fm ? "true" : "false"},
            {"use_fm", m.use_fm ? "true" : "false"},
            {"criterion_initialized", m.criterion.initialized ? "true" : "false"},
            {"calibration_valid", m.calibration.valid ? "true" : "false"},
            {"category", m.category},
            {"validation_fraction", detail::exact_decimal(m.validation_fraction)}};
  for (const auto& [name, v] : m.nets.all_parameters()) f.put(name, v.value());
  f.put("teacher_stats.mean", m.teacher_stats.mean);
  f.put("teacher_stats.std", m.teacher_stats.std);
  f.put("criterion.alpha", Tensor<T>::scalar(m.criterion.alpha));
  if (m.criterion.initialized) f.put("criterion.upsilon", m.criterion.upsilon);
  f.put("calibration", Tensor<double>({4}, {m.calibration.structural_lo, m.calibration.structural_hi,
                                            m.calibration.logical_lo, m.calibration.logical_hi}));
  return f;
}

namespace detail {
inline std::size_t meta_size(const CheckpointFile& f, const std::string& key) {
  const std::string& v = f.meta_value(key);
  try {
    return static_cast<std::size_t>(std::stoull(v));
  } catch (const std::exception&) {
    throw ConfigError("checkpoint key '" + key + "' is not an integer: '" + v + "'");
  }
}

template <typename T>
void copy_into(Var<T> dst, const Tensor<T>& src, const std::string& name) {
  if (dst.shape() != src.shape())
    throw ConfigError("checkpoint tensor '" + name + "' has shape " + shape_str(src.shape()) +
                      ", network expects " + shape_str(dst.shape()));
  dst.mutable_value() = src;
}
}  // namespace detail

inline NetworkConfig network_config_from(const CheckpointFile& f) {
  NetworkConfig c;
  c.feature_dim = detail::meta_size(f, "feature_dim");
  c.pdn_variant = parse_pdn_variant(f.meta_value("pdn_variant"));
  c.fe_bottleneck_dim = detail::meta_size(f, "fe_bottleneck_dim");
  c.fm_layers = detail::meta_size(f, "fm_layers");
  c.fm_kernel = detail::meta_size(f, "fm_kernel");
  c.input_size = detail::meta_size(f, "input_size");
  return c;
}

template <typename T>
SpaceModel<T> from_checkpoint(const CheckpointFile& f) {
  SpaceModel<T> m;
  m.nets = NetworkSet<T>(network_config_from(f));
  m.init_seed = detail::meta_size(f, "init_seed");
  m.iteration = detail::meta_size(f, "iteration");
  m.student_ema_for_fm = f.meta_value("student_ema_for_fm") == "true";
  m.use_fm = f.meta_value("use_fm") == "true";
  m.category = f.meta_value("category");
  try {
    m.validation_fraction = std::stod(f.meta_value("validation_fraction"));
  } catch (const std::exception&) {
    throw ConfigError("checkpoint key 'validation_fraction' is not a number");
  }
  for (const auto& [name, v] : m.nets.all_parameters()) detail::copy_into(v, f.get<T>(name), name);
  m.teacher_stats.mean = f.get<T>("teacher_stats.mean");
  m.teacher_stats.std = f.get<T>("teacher_stats.std");
  if (m.teacher_stats.mean.size() != m.nets.config.feature_dim ||
      m.teacher_stats.std.size() != m.nets.config.feature_dim)
    throw ConfigError("checkpoint teacher statistics do not match feature_dim");
  m.criterion.alpha = f.get<T>("criterion.alpha").item();
  m.criterion.initialized = f.meta_value("criterion_initialized") == "true";
  if (m.criterion.initialized) m.criterion.upsilon = f.get<T>("criterion.upsilon");
  const Tensor<double> cal = f.get<double>("calibration");
  if (cal.size() != 4) throw ConfigError("checkpoint calibration block is malformed");
  m.calibration = {cal[0], cal[1], cal[2], cal[3], f.meta_value("calibration_valid") == "true"};
  return m;
}

template <typename T>
void save_checkpoint(const SpaceModel<T>& m, const std::filesystem::path& path) {
  write_bytes(path, serialize_checkpoint(to_checkpoint(m)));
}

template <typename T>
SpaceModel<T> load_checkpoint(const std::filesystem::path& path) {
  return from_checkpoint<T>(read_checkpoint_file(path));
}

// Copies teacher.* weights from another checkpoint into nets.
template <typename T>
void load_teacher(NetworkSet<T>& nets, const std::filesystem::path& path) {
  const CheckpointFile f = read_checkpoint_file(path);
  for (const auto& [name, v] : nets.teacher.parameters()) {
    const std::string key = "teacher." + name;
    detail::copy_into(v, f.get<T>(key), key);
  }
}

}  // namespace space
