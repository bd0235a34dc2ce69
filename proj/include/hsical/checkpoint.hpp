#ifndef HSICAL_CHECKPOINT_HPP_
#define HSICAL_CHECKPOINT_HPP_

#include <string>
#include <vector>

#include "hsical/common.hpp"
#include "hsical/tensor.hpp"

namespace hsical::tk {

// Checkpoint file:
//   magic "HSW1" | u32 version=1 | u32 tensor count
//   | per tensor: u32 name length, name bytes, u32 ndim, u32 dims, f32 data.
// The model config travels inside as a pseudo-tensor named "__config__"
// holding the key=value text one byte per f32 value.

inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr const char* kConfigEntry = "__config__";

struct NamedTensor {
  std::string name;
  Tensor<float> tensor;
};

inline std::vector<std::uint8_t> checkpoint_to_bytes(const std::vector<NamedTensor>& entries) {
  std::vector<std::uint8_t> buf;
  buf.insert(buf.end(), {'H', 'S', 'W', '1'});
  io::put_u32(buf, kCheckpointVersion);
  io::put_u32(buf, static_cast<std::uint32_t>(entries.size()));
  for (const NamedTensor& e : entries) {
    io::put_u32(buf, static_cast<std::uint32_t>(e.name.size()));
    buf.insert(buf.end(), e.name.begin(), e.name.end());
    io::put_u32(buf, static_cast<std::uint32_t>(e.tensor.ndim()));
    for (std::size_t d : e.tensor.shape) io::put_u32(buf, static_cast<std::uint32_t>(d));
    for (float v : e.tensor.data) io::put_f32(buf, v);
  }
  return buf;
}

inline void save_checkpoint(const std::vector<NamedTensor>& entries, const std::string& path) {
  io::write_file(path, checkpoint_to_bytes(entries));
}

inline std::vector<NamedTensor> load_checkpoint(const std::string& path) {
  io::Reader rd = io::Reader::from_file(path);
  char magic[4];
  rd.bytes(magic, 4);
  require(std::memcmp(magic, "HSW1", 4) == 0, Err::BadMagic, "expected magic HSW1");
  const std::uint32_t version = rd.u32();
  require(version == kCheckpointVersion, Err::VersionUnsupported,
          "checkpoint version " + std::to_string(version));
  const std::uint32_t count = rd.u32();
  std::vector<NamedTensor> entries;
  entries.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedTensor e;
    const std::uint32_t name_len = rd.u32();
    e.name.resize(name_len);
    rd.bytes(e.name.data(), name_len);
    const std::uint32_t ndim = rd.u32();
    e.tensor.shape.resize(ndim);
    for (auto& d : e.tensor.shape) d = rd.u32();
    e.tensor.data.resize(Tensor<float>::count(e.tensor.shape));
    for (auto& v : e.tensor.data) v = rd.f32();
    entries.push_back(std::move(e));
  }
  return entries;
}

inline NamedTensor config_entry(const std::string& text) {
  NamedTensor e;
  e.name = kConfigEntry;
  e.tensor.shape = {text.size()};
  e.tensor.data.reserve(text.size());
  for (unsigned char c : text) e.tensor.data.push_back(static_cast<float>(c));
  return e;
}

inline std::string config_text(const std::vector<NamedTensor>& entries) {
  for (const NamedTensor& e : entries)
    if (e.name == kConfigEntry) {
      std::string s;
      s.reserve(e.tensor.numel());
      for (float v : e.tensor.data) s.push_back(static_cast<char>(v));
      return s;
    }
  return {};
}

}  // namespace hsical::tk

#endif  // HSICAL_CHECKPOINT_HPP_
