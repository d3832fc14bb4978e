#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numbers>
#include <ostream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "pcnn/error.hpp"
#include "pcnn/rng.hpp"
#include "pcnn/tensor.hpp"

// Low-level image features: colour histograms and a bag of dense
// gradient-orientation words.
namespace pcnn {

struct FeatureVector {
  std::vector<double> values;
  std::string descriptor;  // extractor name and parameters
};

inline constexpr std::size_t gch_bins = 64;
inline constexpr std::size_t lch_blocks = 4;  // per side
inline constexpr std::size_t descriptor_dim = 128;

namespace detail {

inline void require_rgb(const Tensor& img, const char* who) {
  if (img.rank() != 3 || img.dim(0) != 3) {
    fail(ErrorKind::format, std::string(who) + ": expected an RGB image [3,H,W], got " + shape_string(img.shape()));
  }
}

/// 4 levels per channel; 1.0 falls in the top level.
inline std::size_t colour_level(double v) {
  const double q = std::floor(v * 4.0);
  if (!(q > 0.0)) return 0;
  return std::min<std::size_t>(3, static_cast<std::size_t>(q));
}

inline std::size_t colour_bin(const Tensor& img, std::size_t y, std::size_t x) {
  const std::size_t h = img.dim(1), w = img.dim(2);
  const double* p = img.data();
  return colour_level(p[y * w + x]) * 16 + colour_level(p[(h + y) * w + x]) * 4 + colour_level(p[(2 * h + y) * w + x]);
}

inline void region_histogram(const Tensor& img, std::size_t y0, std::size_t y1, std::size_t x0, std::size_t x1,
                             double* out) {
  std::fill(out, out + gch_bins, 0.0);
  for (std::size_t y = y0; y < y1; ++y) {
    for (std::size_t x = x0; x < x1; ++x) out[colour_bin(img, y, x)] += 1.0;
  }
  const double n = static_cast<double>((y1 - y0) * (x1 - x0));
  for (std::size_t b = 0; b < gch_bins; ++b) out[b] /= n;
}

/// ceil(i * len / parts)
inline std::size_t block_edge(std::size_t i, std::size_t len, std::size_t parts) { return (i * len + parts - 1) / parts; }

}  // namespace detail

/// Joint 4x4x4 RGB histogram, bin = r*16 + g*4 + b, normalized to sum 1.
inline FeatureVector gch(const Tensor& img) {
  detail::require_rgb(img, "gch");
  FeatureVector f{std::vector<double>(gch_bins), "gch:bins=64"};
  detail::region_histogram(img, 0, img.dim(1), 0, img.dim(2), f.values.data());
  return f;
}

/// 4x4 grid of blocks with edges at ceil(i*H/4); per-block GCH concatenated
/// in row-major block order.
inline FeatureVector lch(const Tensor& img) {
  detail::require_rgb(img, "lch");
  const std::size_t h = img.dim(1), w = img.dim(2);
  if (h < lch_blocks || w < lch_blocks) fail(ErrorKind::format, "lch: image smaller than 4x4");
  FeatureVector f{std::vector<double>(lch_blocks * lch_blocks * gch_bins), "lch:blocks=4x4,bins=64"};
  for (std::size_t by = 0; by < lch_blocks; ++by) {
    for (std::size_t bx = 0; bx < lch_blocks; ++bx) {
      detail::region_histogram(img, detail::block_edge(by, h, lch_blocks), detail::block_edge(by + 1, h, lch_blocks),
                               detail::block_edge(bx, w, lch_blocks), detail::block_edge(bx + 1, w, lch_blocks),
                               f.values.data() + (by * lch_blocks + bx) * gch_bins);
    }
  }
  return f;
}

// ---------------------------------------------------------------------------
// Dense SIFT-like descriptors.

struct DescriptorParams {
  std::size_t grid_step = 8;
  std::size_t patch_size = 16;

  void validate() const {
    if (grid_step == 0) fail(ErrorKind::config, "descriptor grid step must be positive");
    if (patch_size < 4) fail(ErrorKind::config, "descriptor patch size must be at least 4");
  }
  std::string text() const {
    return "step=" + std::to_string(grid_step) + ",patch=" + std::to_string(patch_size);
  }
};

using Descriptor = std::vector<double>;

/// Patches per axis: floor((len - patch) / step) + 1.
inline std::size_t descriptor_grid_count(std::size_t len, const DescriptorParams& p) {
  return len < p.patch_size ? 0 : (len - p.patch_size) / p.grid_step + 1;
}

/// Luminance 0.299 R + 0.587 G + 0.114 B; single-channel images pass through.
inline Tensor to_gray(const Tensor& img) {
  if (img.rank() != 3 || (img.dim(0) != 1 && img.dim(0) != 3)) {
    fail(ErrorKind::format, "expected a [1,H,W] or [3,H,W] image, got " + shape_string(img.shape()));
  }
  const std::size_t h = img.dim(1), w = img.dim(2), plane = h * w;
  if (img.dim(0) == 1) return img.reshape({h, w});
  Tensor g({h, w});
  for (std::size_t i = 0; i < plane; ++i) {
    g[i] = 0.299 * img[i] + 0.587 * img[plane + i] + 0.114 * img[2 * plane + i];
  }
  return g;
}

/// Each patch: 4x4 cells x 8 orientation bins of gradient magnitude, L2
/// normalized, clipped at 0.2, renormalized. Flat patches stay all-zero.
/// Gradients are central differences with edge clamping; bin 0 covers
/// angles [0, pi/4) measured from +x.
inline std::vector<Descriptor> extract_descriptors(const Tensor& img, const DescriptorParams& p) {
  p.validate();
  const Tensor g = to_gray(img);
  const std::size_t h = g.dim(0), w = g.dim(1);
  if (p.patch_size > h || p.patch_size > w) {
    fail(ErrorKind::format, "patch size " + std::to_string(p.patch_size) + " exceeds image " + std::to_string(h) +
                                "x" + std::to_string(w));
  }
  std::vector<double> mag(h * w), bin_of(h * w);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      const double dx = g.at(y, std::min(x + 1, w - 1)) - g.at(y, x == 0 ? 0 : x - 1);
      const double dy = g.at(std::min(y + 1, h - 1), x) - g.at(y == 0 ? 0 : y - 1, x);
      double angle = std::atan2(dy, dx);
      if (angle < 0) angle += 2.0 * std::numbers::pi;
      mag[y * w + x] = std::hypot(dx, dy);
      bin_of[y * w + x] = std::min(7.0, std::floor(angle / (std::numbers::pi / 4.0)));
    }
  }
  const std::size_t ny = descriptor_grid_count(h, p), nx = descriptor_grid_count(w, p);
  std::vector<Descriptor> out;
  out.reserve(ny * nx);
  for (std::size_t py = 0; py < ny; ++py) {
    for (std::size_t px = 0; px < nx; ++px) {
      Descriptor d(descriptor_dim, 0.0);
      const std::size_t oy = py * p.grid_step, ox = px * p.grid_step;
      for (std::size_t cy = 0; cy < 4; ++cy) {
        for (std::size_t cx = 0; cx < 4; ++cx) {
          double* cell = d.data() + (cy * 4 + cx) * 8;
          for (std::size_t y = oy + cy * p.patch_size / 4; y < oy + (cy + 1) * p.patch_size / 4; ++y) {
            for (std::size_t x = ox + cx * p.patch_size / 4; x < ox + (cx + 1) * p.patch_size / 4; ++x) {
              cell[static_cast<std::size_t>(bin_of[y * w + x])] += mag[y * w + x];
            }
          }
        }
      }
      auto normalize = [&d] {
        double n = 0.0;
        for (double v : d) n += v * v;
        n = std::sqrt(n);
        if (n <= 1e-12) {
          std::fill(d.begin(), d.end(), 0.0);
          return;
        }
        for (double& v : d) v /= n;
      };
      normalize();
      for (double& v : d) v = std::min(v, 0.2);
      normalize();
      out.push_back(std::move(d));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Visual vocabulary.

struct Codebook {
  Tensor centroids;  // [k, dim]
  double inertia = 0.0;
  std::vector<double> inertia_history;  // after each assignment pass
  std::size_t iterations = 0;
  std::uint64_t seed = 0;
  DescriptorParams params;

  std::size_t size() const { return centroids.dim(0); }
  std::size_t dim() const { return centroids.dim(1); }
};

inline double squared_distance(const double* a, const double* b, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

/// Index of the closest centroid; ties go to the lowest index.
inline std::size_t nearest_centroid(const Tensor& centroids, const double* x, double* dist = nullptr) {
  const std::size_t k = centroids.dim(0), dim = centroids.dim(1);
  std::size_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < k; ++j) {
    const double d = squared_distance(centroids.data() + j * dim, x, dim);
    if (d < best_d) {
      best_d = d;
      best = j;
    }
  }
  if (dist) *dist = best_d;
  return best;
}

/// Lloyd's k-means. The first centre is a seeded random point; each next
/// centre is the point farthest from the chosen ones (lowest index on ties).
/// Stops when assignments stop changing or after max_iters passes. An empty
/// cluster keeps its previous centre.
inline Codebook build_vocabulary(const std::vector<std::vector<Descriptor>>& sets, std::size_t k, std::uint64_t seed,
                                 std::size_t max_iters = 50) {
  if (k == 0) fail(ErrorKind::config, "codebook size must be positive");
  std::vector<const Descriptor*> points;
  for (const auto& s : sets) {
    for (const auto& d : s) points.push_back(&d);
  }
  if (points.size() < k) {
    fail(ErrorKind::data, "k-means needs at least " + std::to_string(k) + " descriptors, got " +
                              std::to_string(points.size()));
  }
  const std::size_t n = points.size(), dim = points[0]->size();
  for (const auto* p : points) {
    if (p->size() != dim) fail(ErrorKind::format, "descriptors have inconsistent dimensions");
  }
  Codebook cb;
  cb.seed = seed;
  cb.centroids = Tensor({k, dim});
  Rng rng(seed);
  std::vector<double> min_d(n, std::numeric_limits<double>::infinity());
  std::size_t pick = static_cast<std::size_t>(rng.uniform_index(n));
  for (std::size_t j = 0; j < k; ++j) {
    std::copy(points[pick]->begin(), points[pick]->end(), cb.centroids.data() + j * dim);
    std::size_t far = 0;
    for (std::size_t i = 0; i < n; ++i) {
      min_d[i] = std::min(min_d[i], squared_distance(points[i]->data(), cb.centroids.data() + j * dim, dim));
      if (min_d[i] > min_d[far]) far = i;
    }
    pick = far;
  }

  std::vector<std::size_t> assign(n, k);
  for (std::size_t it = 0; it < std::max<std::size_t>(max_iters, 1); ++it) {
    bool changed = false;
    double inertia = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double d = 0.0;
      const std::size_t a = nearest_centroid(cb.centroids, points[i]->data(), &d);
      inertia += d;
      if (a != assign[i]) {
        assign[i] = a;
        changed = true;
      }
    }
    cb.inertia_history.push_back(inertia);
    cb.inertia = inertia;
    cb.iterations = it + 1;
    if (!changed) break;
    Tensor sums({k, dim});
    std::vector<std::size_t> counts(k, 0);
    for (std::size_t i = 0; i < n; ++i) {
      double* row = sums.data() + assign[i] * dim;
      for (std::size_t c = 0; c < dim; ++c) row[c] += (*points[i])[c];
      ++counts[assign[i]];
    }
    for (std::size_t j = 0; j < k; ++j) {
      if (counts[j] == 0) continue;
      for (std::size_t c = 0; c < dim; ++c) {
        cb.centroids[j * dim + c] = sums[j * dim + c] / static_cast<double>(counts[j]);
      }
    }
  }
  if (!cb.centroids.all_finite()) fail(ErrorKind::data, "k-means produced a non-finite centroid");
  return cb;
}

inline FeatureVector bow_from_descriptors(const std::vector<Descriptor>& descriptors, const Codebook& cb) {
  if (descriptors.empty()) fail(ErrorKind::data, "bow: image yielded no descriptors (empty descriptor set)");
  FeatureVector f{std::vector<double>(cb.size(), 0.0), "bow:k=" + std::to_string(cb.size()) + "," + cb.params.text()};
  for (const auto& d : descriptors) {
    if (d.size() != cb.dim()) {
      fail(ErrorKind::format, "bow: descriptor has " + std::to_string(d.size()) + " dims, codebook expects " +
                                  std::to_string(cb.dim()));
    }
    f.values[nearest_centroid(cb.centroids, d.data())] += 1.0;
  }
  for (double& v : f.values) v /= static_cast<double>(descriptors.size());
  return f;
}

inline FeatureVector bow(const Tensor& img, const Codebook& cb) {
  return bow_from_descriptors(extract_descriptors(img, cb.params), cb);
}

/// Concatenation; each part keeps its own normalization.
inline FeatureVector concat(const FeatureVector& a, const FeatureVector& b) {
  FeatureVector f{a.values, a.descriptor + "+" + b.descriptor};
  f.values.insert(f.values.end(), b.values.begin(), b.values.end());
  return f;
}

// ---------------------------------------------------------------------------
// Serialization.

inline void write_feature_jsonl(std::ostream& os, const std::string& id, const FeatureVector& f) {
  nlohmann::ordered_json j;
  j["id"] = id;
  j["descriptor"] = f.descriptor;
  j["values"] = f.values;
  os << j.dump() << '\n';
}

/// Centroids as a tensor file plus a JSON sidecar (<path>.json).
inline void save_codebook(const Codebook& cb, const std::filesystem::path& path) {
  {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) fail(ErrorKind::io, "cannot write codebook " + path.string());
    write_tensor(os, cb.centroids);
  }
  nlohmann::ordered_json j;
  j["k"] = cb.size();
  j["dim"] = cb.dim();
  j["grid_step"] = cb.params.grid_step;
  j["patch_size"] = cb.params.patch_size;
  j["seed"] = cb.seed;
  j["iterations"] = cb.iterations;
  j["inertia"] = cb.inertia;
  j["inertia_history"] = cb.inertia_history;
  std::ofstream js(path.string() + ".json", std::ios::trunc);
  if (!js) fail(ErrorKind::io, "cannot write codebook sidecar for " + path.string());
  js << j.dump(2) << '\n';
}

inline Codebook load_codebook(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) fail(ErrorKind::io, "cannot open codebook " + path.string());
  Codebook cb;
  cb.centroids = read_tensor(is);
  if (cb.centroids.rank() != 2) fail(ErrorKind::format, "codebook tensor must be [k,dim]");
  std::ifstream js(path.string() + ".json");
  if (!js) fail(ErrorKind::io, "cannot open codebook sidecar for " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(js);
    cb.params.grid_step = j.at("grid_step").get<std::size_t>();
    cb.params.patch_size = j.at("patch_size").get<std::size_t>();
    cb.seed = j.at("seed").get<std::uint64_t>();
    cb.iterations = j.at("iterations").get<std::size_t>();
    cb.inertia = j.at("inertia").get<double>();
    cb.inertia_history = j.at("inertia_history").get<std::vector<double>>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::parse, "codebook sidecar " + path.string() + ": " + e.what());
  }
  return cb;
}

}  // namespace pcnn
