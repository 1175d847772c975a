#ifndef RVS_CHECKPOINT_HPP
#define RVS_CHECKPOINT_HPP

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "rvs/binio.hpp"
#include "rvs/config.hpp"
#include "rvs/training.hpp"

namespace rvs {

enum class DType : std::uint8_t { f32 = 0, f64 = 1, u8 = 2 };

inline std::size_t dtype_size(DType d) {
  switch (d) {
    case DType::f32: return 4;
    case DType::f64: return 8;
    case DType::u8: return 1;
  }
  throw FormatError("checkpoint: unknown dtype tag");
}

/// One named array in its on-disk form: dtype, shape and little-endian bytes.
struct StoredTensor {
  DType dtype = DType::f32;
  Shape shape;
  std::string bytes;

  friend bool operator==(const StoredTensor&, const StoredTensor&) = default;
};

inline StoredTensor store_tensor(const Tensor<float>& t) {
  std::ostringstream os;
  binio::put_f32_array(os, t.data());
  return {DType::f32, t.shape(), os.str()};
}

inline Tensor<float> load_tensor(const StoredTensor& s, const std::string& name) {
  if (s.dtype != DType::f32) throw FormatError("checkpoint: tensor '" + name + "' is not float32");
  Tensor<float> t(s.shape, uninitialized);
  std::istringstream is(s.bytes);
  binio::get_f32_array(is, t.data(), name.c_str());
  return t;
}

inline StoredTensor store_bytes(const std::string& raw) {
  return {DType::u8, Shape{std::max<std::size_t>(raw.size(), 1)}, raw.empty() ? std::string(1, '\0') : raw};
}

/// Versioned container: config hash, step, canonical config text and a
/// name-sorted tensor table.
struct Checkpoint {
  std::uint64_t config_hash = 0;
  std::int64_t step = 0;
  std::string config_text;
  std::map<std::string, StoredTensor> tensors;

  friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

inline constexpr char kCheckpointMagic[8] = {'R', 'V', 'S', 'C', 'K', 'P', 'T', '\0'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

inline void save_checkpoint(const Checkpoint& c, std::ostream& os) {
  os.write(kCheckpointMagic, 8);
  binio::put_uint<std::uint32_t>(os, kCheckpointVersion);
  binio::put_uint<std::uint64_t>(os, c.config_hash);
  binio::put_uint<std::uint64_t>(os, static_cast<std::uint64_t>(c.step));
  binio::put_uint<std::uint32_t>(os, static_cast<std::uint32_t>(c.config_text.size()));
  binio::put_bytes(os, c.config_text);
  binio::put_uint<std::uint32_t>(os, static_cast<std::uint32_t>(c.tensors.size()));
  for (const auto& [name, t] : c.tensors) {
    binio::put_uint<std::uint16_t>(os, static_cast<std::uint16_t>(name.size()));
    binio::put_bytes(os, name);
    binio::put_uint<std::uint8_t>(os, static_cast<std::uint8_t>(t.dtype));
    binio::put_uint<std::uint8_t>(os, static_cast<std::uint8_t>(t.shape.size()));
    for (auto d : t.shape) binio::put_uint<std::uint64_t>(os, d);
    binio::put_bytes(os, t.bytes);
  }
}

inline Checkpoint load_checkpoint(std::istream& is) {
  if (binio::get_bytes(is, 8, "magic") != std::string(kCheckpointMagic, 8))
    throw FormatError("checkpoint: bad magic");
  const auto version = binio::get_uint<std::uint32_t>(is, "version");
  if (version != kCheckpointVersion)
    throw FormatError("checkpoint: unsupported version " + std::to_string(version));
  Checkpoint c;
  c.config_hash = binio::get_uint<std::uint64_t>(is, "config hash");
  c.step = static_cast<std::int64_t>(binio::get_uint<std::uint64_t>(is, "step"));
  c.config_text = binio::get_bytes(is, binio::get_uint<std::uint32_t>(is, "config length"), "config text");
  const auto count = binio::get_uint<std::uint32_t>(is, "tensor count");
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::string name = binio::get_bytes(is, binio::get_uint<std::uint16_t>(is, "name length"), "name");
    StoredTensor t;
    t.dtype = static_cast<DType>(binio::get_uint<std::uint8_t>(is, "dtype"));
    const std::size_t elem = dtype_size(t.dtype);
    const auto rank = binio::get_uint<std::uint8_t>(is, "rank");
    for (std::uint8_t r = 0; r < rank; ++r) t.shape.push_back(binio::get_uint<std::uint64_t>(is, "dims"));
    t.bytes = binio::get_bytes(is, shape_volume(t.shape) * elem, name.c_str());
    c.tensors.emplace(name, std::move(t));
  }
  return c;
}

/// Writes via a temporary file and a rename, so a failed write never
/// replaces an existing checkpoint.
inline void save_checkpoint(const Checkpoint& c, const std::filesystem::path& path) {
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("cannot write checkpoint " + tmp);
    save_checkpoint(c, os);
    os.flush();
    if (!os) throw std::runtime_error("write failed for checkpoint " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw InputError("cannot open checkpoint " + path.string());
  return load_checkpoint(is);
}

namespace detail {

inline void store_params(Checkpoint& c, const std::string& prefix, const ParamStore<float>& p) {
  for (const auto& [name, e] : p.entries()) {
    c.tensors[prefix + "/" + name] = store_tensor(e.value);
    c.tensors[prefix + "/" + name + "#mom"] = store_tensor(e.momentum);
  }
}

inline void store_bn(Checkpoint& c, const std::string& prefix, const BnStates<float>& bn) {
  for (const auto& [name, s] : bn) {
    c.tensors[prefix + "/" + name + ".mean"] = store_tensor(s.mean);
    c.tensors[prefix + "/" + name + ".var"] = store_tensor(s.var);
  }
}

inline const StoredTensor& find(const Checkpoint& c, const std::string& name) {
  auto it = c.tensors.find(name);
  if (it == c.tensors.end()) throw FormatError("checkpoint: missing tensor '" + name + "'");
  return it->second;
}

inline Tensor<float> fetch(const Checkpoint& c, const std::string& name, const Shape& expect) {
  Tensor<float> t = load_tensor(find(c, name), name);
  if (t.shape() != expect)
    throw DimensionError("checkpoint: tensor '" + name + "' has shape " + shape_str(t.shape()) +
                         ", architecture expects " + shape_str(expect));
  return t;
}

inline void restore_params(const Checkpoint& c, const std::string& prefix, ParamStore<float>& p) {
  for (const auto& [name, e] : p.entries()) {
    Tensor<float> v = fetch(c, prefix + "/" + name, e.value.shape());
    Tensor<float> m = fetch(c, prefix + "/" + name + "#mom", e.value.shape());
    p.set(name, std::move(v), std::move(m));
  }
}

inline void restore_bn(const Checkpoint& c, const std::string& prefix, BnStates<float>& bn) {
  for (auto& [name, s] : bn) {
    s.mean = fetch(c, prefix + "/" + name + ".mean", s.mean.shape());
    s.var = fetch(c, prefix + "/" + name + ".var", s.var.shape());
  }
}

}  // namespace detail

/// Snapshot of the complete training state, including the rng stream.
inline Checkpoint make_checkpoint(const RunConfig& cfg, const TrainState& st) {
  Checkpoint c;
  c.config_text = canonical_text(cfg);
  c.config_hash = fnv1a(c.config_text);
  c.step = st.step;
  detail::store_params(c, "theta", st.clf.params);
  detail::store_bn(c, "theta_bn", st.clf.bn);
  detail::store_params(c, "phi", st.gen.params);
  detail::store_bn(c, "phi_bn", st.gen.bn);
  std::ostringstream rng;
  rng << st.rng;
  c.tensors["rng"] = store_bytes(rng.str());
  return c;
}

/// Rebuilds the training state recorded in a checkpoint, architecture included.
inline TrainState restore_state(const Checkpoint& c) {
  const RunConfig cfg = parse_config_text(c.config_text, "checkpoint config");
  TrainState st = init_state(cfg.classifier, cfg.generator_config(), cfg.train.seed);
  detail::restore_params(c, "theta", st.clf.params);
  detail::restore_bn(c, "theta_bn", st.clf.bn);
  detail::restore_params(c, "phi", st.gen.params);
  detail::restore_bn(c, "phi_bn", st.gen.bn);
  const auto& r = detail::find(c, "rng");
  std::istringstream is(r.bytes);
  is >> st.rng;
  if (!is) throw FormatError("checkpoint: corrupt rng state");
  st.step = c.step;
  return st;
}

inline RunConfig checkpoint_config(const Checkpoint& c) {
  return parse_config_text(c.config_text, "checkpoint config");
}

}  // namespace rvs

#endif  // RVS_CHECKPOINT_HPP
