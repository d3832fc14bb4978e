#pragma once

#include <cmath>
#include <limits>
#include <vector>

#include "pcnn/pcnn.hpp"

// Brute-force reference implementations of the low-level features.
namespace pcnn::testing {

/// Joint 4x4x4 histogram of a region, computed per pixel from the definition.
inline std::vector<double> gch_oracle(const Tensor& img, std::size_t y0, std::size_t y1, std::size_t x0,
                                      std::size_t x1) {
  std::vector<double> h(64, 0.0);
  auto level = [](double v) { return std::min(3, static_cast<int>(v * 4.0)); };
  const std::size_t rows = img.dim(1), cols = img.dim(2);
  for (std::size_t y = y0; y < y1; ++y) {
    for (std::size_t x = x0; x < x1; ++x) {
      const int r = level(img[(0 * rows + y) * cols + x]);
      const int g = level(img[(1 * rows + y) * cols + x]);
      const int b = level(img[(2 * rows + y) * cols + x]);
      h[static_cast<std::size_t>(r * 16 + g * 4 + b)] += 1.0;
    }
  }
  for (double& v : h) v /= static_cast<double>((y1 - y0) * (x1 - x0));
  return h;
}

inline std::vector<double> gch_oracle(const Tensor& img) { return gch_oracle(img, 0, img.dim(1), 0, img.dim(2)); }

/// 16 blocks with edges at ceil(i * len / 4), each histogrammed on its own.
inline std::vector<double> lch_oracle(const Tensor& img) {
  const double h = static_cast<double>(img.dim(1)), w = static_cast<double>(img.dim(2));
  std::vector<double> out;
  for (int by = 0; by < 4; ++by) {
    for (int bx = 0; bx < 4; ++bx) {
      const auto part = gch_oracle(img, static_cast<std::size_t>(std::ceil(by * h / 4)),
                                   static_cast<std::size_t>(std::ceil((by + 1) * h / 4)),
                                   static_cast<std::size_t>(std::ceil(bx * w / 4)),
                                   static_cast<std::size_t>(std::ceil((bx + 1) * w / 4)));
      out.insert(out.end(), part.begin(), part.end());
    }
  }
  return out;
}

/// Nearest-centroid counts by exhaustive search, ties to the lowest index.
inline std::vector<double> bow_oracle(const std::vector<Descriptor>& descriptors, const Tensor& centroids) {
  const std::size_t k = centroids.dim(0), dim = centroids.dim(1);
  std::vector<double> counts(k, 0.0);
  for (const auto& d : descriptors) {
    std::size_t arg = 0;
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < k; ++j) {
      double s = 0.0;
      for (std::size_t c = 0; c < dim; ++c) s += (d[c] - centroids.at(j, c)) * (d[c] - centroids.at(j, c));
      if (s < best) {
        best = s;
        arg = j;
      }
    }
    counts[arg] += 1.0;
  }
  for (double& v : counts) v /= static_cast<double>(descriptors.size());
  return counts;
}

}  // namespace pcnn::testing
