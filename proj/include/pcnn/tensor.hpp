#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <functional>
#include <istream>
#include <numeric>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "pcnn/error.hpp"
#include "pcnn/gemm.hpp"

namespace pcnn {

using Shape = std::vector<std::size_t>;

inline std::size_t element_count(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

/// Dense row-major array of doubles. A default-constructed tensor is the
/// rank-0 scalar 0.
class Tensor {
 public:
  Tensor() : data_(1, 0.0) {}

  explicit Tensor(Shape shape, double fill = 0.0) : shape_(std::move(shape)) {
    check_shape(shape_);
    data_.assign(element_count(shape_), fill);
  }

  Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
    check_shape(shape_);
    if (data_.size() != element_count(shape_)) {
      fail(ErrorKind::shape, "tensor data length " + std::to_string(data_.size()) +
                                 " does not match shape " + shape_string(shape_));
    }
  }

  template <typename Generator>
  static Tensor generate(Shape shape, Generator&& gen) {
    Tensor t(std::move(shape));
    for (auto& v : t.data_) v = gen();
    return t;
  }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const noexcept { return data_.size(); }

  std::span<double> values() noexcept { return data_; }
  std::span<const double> values() const noexcept { return data_; }
  double* data() noexcept { return data_.data(); }
  const double* data() const noexcept { return data_.data(); }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  double& at(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }
  double at(std::size_t i, std::size_t j) const { return data_[i * shape_[1] + j]; }

  double& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) {
    return data_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
  }
  double at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
    return data_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
  }

  Tensor reshape(Shape shape) const {
    check_shape(shape);
    if (element_count(shape) != size()) {
      fail(ErrorKind::shape, "cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
    }
    return Tensor(std::move(shape), data_);
  }

  void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

  Tensor& operator+=(const Tensor& other) {
    require_same_shape(other, "+=");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
    return *this;
  }

  Tensor& operator*=(double s) {
    for (auto& v : data_) v *= s;
    return *this;
  }

  bool all_finite() const {
    for (double v : data_) {
      if (!std::isfinite(v)) return false;
    }
    return true;
  }

  void require_same_shape(const Tensor& other, const char* what) const {
    if (shape_ != other.shape_) {
      fail(ErrorKind::shape, std::string(what) + ": shape " + shape_string(shape_) + " vs " +
                                 shape_string(other.shape_));
    }
  }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  static void check_shape(const Shape& shape) {
    for (std::size_t d : shape) {
      if (d == 0) fail(ErrorKind::invalid_shape, "zero dimension in shape " + shape_string(shape));
    }
  }

  Shape shape_;
  std::vector<double> data_;
};

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2) fail(ErrorKind::shape, "matmul expects rank-2 operands");
  if (a.dim(1) != b.dim(0)) {
    fail(ErrorKind::shape, "matmul inner dimension mismatch: " + shape_string(a.shape()) + " x " +
                               shape_string(b.shape()));
  }
  Tensor c({a.dim(0), b.dim(1)});
  gemm::nn(a.dim(0), b.dim(1), a.dim(1), a.data(), b.data(), c.data());
  return c;
}

enum class ReduceOp { sum, max, argmax };

/// Removes `axis`, combining along it. argmax ties go to the lowest index
/// and the index is stored as a double.
inline Tensor reduce(const Tensor& t, ReduceOp op, std::size_t axis) {
  if (axis >= t.rank()) {
    fail(ErrorKind::shape, "reduce axis " + std::to_string(axis) + " out of range for rank " +
                               std::to_string(t.rank()));
  }
  const Shape& s = t.shape();
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  const std::size_t len = s[axis];

  Shape out_shape;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i != axis) out_shape.push_back(s[i]);
  }
  Tensor out(out_shape);
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      const double* base = t.data() + o * len * inner + in;
      double acc = base[0];
      std::size_t best = 0;
      for (std::size_t k = 1; k < len; ++k) {
        const double v = base[k * inner];
        if (op == ReduceOp::sum) {
          acc += v;
        } else if (v > acc) {
          acc = v;
          best = k;
        }
      }
      out[o * inner + in] = op == ReduceOp::argmax ? static_cast<double>(best) : acc;
    }
  }
  return out;
}

// Binary interchange format: "NTSR", version byte, u32 rank, u32 dims,
// float32 payload, all little-endian.
namespace ntsr {

inline constexpr char magic[4] = {'N', 'T', 'S', 'R'};
inline constexpr std::uint8_t version = 1;

inline void put_u32(std::ostream& os, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v >> 16),
                              static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

inline bool get_u32(std::istream& is, std::uint32_t& v) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4)) return false;
  v = std::uint32_t{b[0]} | std::uint32_t{b[1]} << 8 | std::uint32_t{b[2]} << 16 |
      std::uint32_t{b[3]} << 24;
  return true;
}

}  // namespace ntsr

inline void write_tensor(std::ostream& os, const Tensor& t) {
  os.write(ntsr::magic, 4);
  os.put(static_cast<char>(ntsr::version));
  ntsr::put_u32(os, static_cast<std::uint32_t>(t.rank()));
  for (std::size_t d : t.shape()) ntsr::put_u32(os, static_cast<std::uint32_t>(d));
  for (double v : t.values()) {
    ntsr::put_u32(os, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
  }
}

/// Throws `error_kind` (decode by default) on bad magic, version or a short
/// payload.
inline Tensor read_tensor(std::istream& is, ErrorKind error_kind = ErrorKind::decode) {
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, ntsr::magic, 4) != 0) {
    fail(error_kind, "tensor record: bad magic");
  }
  const int version = is.get();
  if (version != ntsr::version) {
    fail(error_kind, "tensor record: unsupported version " + std::to_string(version));
  }
  std::uint32_t rank = 0;
  if (!ntsr::get_u32(is, rank) || rank > 16) fail(error_kind, "tensor record: bad rank");
  Shape shape(rank);
  std::uint64_t count = 1;
  for (auto& d : shape) {
    std::uint32_t v = 0;
    if (!ntsr::get_u32(is, v) || v == 0) fail(error_kind, "tensor record: bad dimension");
    d = v;
    count *= v;
    if (count > (std::uint64_t{1} << 34)) fail(error_kind, "tensor record: implausible size");
  }
  std::vector<double> data(count);
  for (auto& x : data) {
    std::uint32_t bits = 0;
    if (!ntsr::get_u32(is, bits)) fail(error_kind, "tensor record: truncated payload");
    x = static_cast<double>(std::bit_cast<float>(bits));
  }
  return Tensor(std::move(shape), std::move(data));
}

/// Rounds every element to the nearest float32, the storage precision of
/// the binary format.
inline void round_to_storage(Tensor& t) {
  for (auto& v : t.values()) v = static_cast<double>(static_cast<float>(v));
}

}  // namespace pcnn
