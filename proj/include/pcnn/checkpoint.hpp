#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "pcnn/error.hpp"
#include "pcnn/network.hpp"
#include "pcnn/tensor.hpp"

// Checkpoint container:
//   "PCKP" | u8 version | str family | str profile | u64 iteration |
//   4 x u64 rng state | str spec text | u32 record count |
//   records: str name, NTSR tensor
// Strings are u32 byte length + UTF-8; integers little-endian. Momentum
// buffers are stored as records named "velocity:<param>".
namespace pcnn {

namespace ckpt {

inline constexpr char magic[4] = {'P', 'C', 'K', 'P'};
inline constexpr std::uint8_t version = 1;
inline constexpr std::string_view velocity_prefix = "velocity:";

inline void put_u64(std::ostream& os, std::uint64_t v) {
  ntsr::put_u32(os, static_cast<std::uint32_t>(v));
  ntsr::put_u32(os, static_cast<std::uint32_t>(v >> 32));
}

inline void put_string(std::ostream& os, const std::string& s) {
  ntsr::put_u32(os, static_cast<std::uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

[[noreturn]] inline void corrupt(const std::string& what) {
  fail(ErrorKind::corrupt_checkpoint, "corrupt checkpoint: " + what);
}

inline std::uint32_t get_u32(std::istream& is) {
  std::uint32_t v = 0;
  if (!ntsr::get_u32(is, v)) corrupt("truncated");
  return v;
}

inline std::uint64_t get_u64(std::istream& is) {
  const std::uint64_t lo = get_u32(is);
  const std::uint64_t hi = get_u32(is);
  return lo | hi << 32;
}

inline std::string get_string(std::istream& is) {
  const std::uint32_t n = get_u32(is);
  if (n > (1u << 24)) corrupt("string length " + std::to_string(n));
  std::string s(n, '\0');
  if (n && !is.read(s.data(), n)) corrupt("truncated string");
  return s;
}

}  // namespace ckpt

inline void write_checkpoint(std::ostream& os, const Checkpoint& c) {
  os.write(ckpt::magic, 4);
  os.put(static_cast<char>(ckpt::version));
  ckpt::put_string(os, c.spec.family);
  ckpt::put_string(os, c.spec.profile);
  ckpt::put_u64(os, c.iteration);
  for (std::uint64_t w : c.rng_state) ckpt::put_u64(os, w);
  ckpt::put_string(os, to_text(c.spec));
  ntsr::put_u32(os, static_cast<std::uint32_t>(c.params.size() + c.velocity.size()));
  for (const auto& [name, t] : c.params) {
    ckpt::put_string(os, name);
    write_tensor(os, t);
  }
  for (const auto& [name, t] : c.velocity) {
    ckpt::put_string(os, std::string(ckpt::velocity_prefix) + name);
    write_tensor(os, t);
  }
}

/// Parses and validates a checkpoint. Any inconsistency, including trailing
/// bytes, raises a corrupt-checkpoint error; no partial model is returned.
inline Checkpoint read_checkpoint(std::istream& is) {
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, ckpt::magic, 4) != 0) ckpt::corrupt("bad magic");
  const int version = is.get();
  if (version != ckpt::version) ckpt::corrupt("unsupported version " + std::to_string(version));

  Checkpoint c;
  const std::string family = ckpt::get_string(is);
  const std::string profile = ckpt::get_string(is);
  c.iteration = ckpt::get_u64(is);
  for (auto& w : c.rng_state) w = ckpt::get_u64(is);
  const std::string spec_text = ckpt::get_string(is);
  try {
    c.spec = parse_network_spec(spec_text);
    validate(c.spec);
  } catch (const Error& e) {
    ckpt::corrupt(std::string("network spec: ") + e.what());
  }
  if (c.spec.family != family || c.spec.profile != profile) ckpt::corrupt("header/spec mismatch");

  const std::uint32_t records = ckpt::get_u32(is);
  for (std::uint32_t r = 0; r < records; ++r) {
    std::string name = ckpt::get_string(is);
    Tensor t = read_tensor(is, ErrorKind::corrupt_checkpoint);
    auto& target = name.starts_with(ckpt::velocity_prefix) ? c.velocity : c.params;
    if (name.starts_with(ckpt::velocity_prefix)) name.erase(0, ckpt::velocity_prefix.size());
    if (!target.emplace(name, std::move(t)).second) ckpt::corrupt("duplicate record '" + name + "'");
  }
  if (is.peek() != std::char_traits<char>::eof()) ckpt::corrupt("trailing bytes");

  const auto slots = parameter_slots(c.spec);
  if (c.params.size() != slots.size() || c.velocity.size() != slots.size()) {
    ckpt::corrupt("parameter count does not match the network spec");
  }
  for (const auto& slot : slots) {
    for (const auto* m : {&c.params, &c.velocity}) {
      auto it = m->find(slot.name);
      if (it == m->end()) ckpt::corrupt("missing tensor '" + slot.name + "'");
      if (it->second.shape() != slot.shape) {
        ckpt::corrupt("tensor '" + slot.name + "' has shape " + shape_string(it->second.shape()) +
                      ", expected " + shape_string(slot.shape));
      }
    }
  }
  return c;
}

inline void save_checkpoint(const Checkpoint& c, const std::filesystem::path& path) {
  std::ostringstream buf;
  write_checkpoint(buf, c);
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) fail(ErrorKind::io, "cannot write checkpoint " + path.string());
  const std::string bytes = buf.str();
  os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!os) fail(ErrorKind::io, "write failed for " + path.string());
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) fail(ErrorKind::io, "cannot open checkpoint " + path.string());
  try {
    return read_checkpoint(is);
  } catch (const Error& e) {
    fail(e.kind(), path.string() + ": " + e.what());
  }
}

}  // namespace pcnn
