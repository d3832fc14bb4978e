#pragma once

#include <filesystem>
#include <fstream>
#include <sstream>
#include <optional>
#include <string>

#include <unistd.h>

#include "pcnn/pcnn.hpp"

namespace pcnn::testing {

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    path_ = std::filesystem::temp_directory_path() /
            ("pcnn-test-" + tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter_++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  static inline int counter_ = 0;
  std::filesystem::path path_;
};

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

inline void write_file(const std::filesystem::path& p, const std::string& text) {
  std::ofstream os(p, std::ios::binary | std::ios::trunc);
  os << text;
}

/// The ErrorKind `body` throws, or nullopt if it returns normally.
template <typename F>
std::optional<ErrorKind> error_kind_of(F&& body) {
  try {
    body();
  } catch (const Error& e) {
    return e.kind();
  }
  return std::nullopt;
}

/// Small labelled synthetic set with pixels attached.
inline Dataset small_synthetic(std::size_t count, std::uint64_t seed, double noise = 0.0, double signal = 0.35) {
  SyntheticConfig sc;
  sc.count = count;
  sc.seed = seed;
  sc.noise_rate = noise;
  sc.signal = signal;
  return generate_synthetic(sc);
}

}  // namespace pcnn::testing
