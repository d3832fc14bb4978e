#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numbers>
#include <string>

#include "pcnn/dataset.hpp"
#include "pcnn/error.hpp"
#include "pcnn/image.hpp"
#include "pcnn/rng.hpp"

// Desk-scale stand-in for a weakly labelled image corpus.
//
// Every image carries two stripe textures, one in the upper band and one in
// the lower band, split at a jittered row. Class 1 has horizontal stripes on
// top and vertical stripes below; class 0 the reverse. Both classes therefore
// share the same colour and gradient statistics; only the spatial
// arrangement differs. The stripe contrast is signal * u with u ~ U(0,1), so
// a fraction of every class is close to unreadable. Labels are then flipped
// with probability noise_rate; the clean label is kept as true_label.
namespace pcnn {

enum class Domain { source, target };

inline Domain parse_domain(std::string_view s) {
  if (s == "source") return Domain::source;
  if (s == "target") return Domain::target;
  fail(ErrorKind::config, "unknown domain '" + std::string(s) + "' (expected source|target)");
}

struct SyntheticConfig {
  std::size_t count = 1000;
  std::size_t side = 32;
  double signal = 0.35;
  double noise_rate = 0.0;
  std::uint64_t seed = 1;
  Domain domain = Domain::source;
  bool worker_votes = false;
  std::string id_prefix = "img";
  double pixel_noise = 0.08;

  void validate() const {
    if (count == 0) fail(ErrorKind::config, "synthetic count must be positive");
    if (side < 8) fail(ErrorKind::config, "synthetic side must be at least 8");
    if (!(signal >= 0.0 && signal <= 1.0)) fail(ErrorKind::config, "signal strength must be in [0,1]");
    if (!(noise_rate >= 0.0 && noise_rate < 0.5)) fail(ErrorKind::config, "label noise must be in [0, 0.5)");
    if (!(pixel_noise >= 0.0)) fail(ErrorKind::config, "pixel noise must be non-negative");
  }
};

namespace detail {

struct DomainStyle {
  double base_lo[3];
  double base_hi[3];
  double stripe_gain[3];
  double period;
};

// The target domain is tinted warm, and its stripes modulate the channels
// unevenly instead of as a grey luminance pattern.
inline DomainStyle domain_style(Domain d) {
  if (d == Domain::source) return {{0.25, 0.25, 0.25}, {0.75, 0.75, 0.75}, {1.0, 1.0, 1.0}, 4.0};
  return {{0.55, 0.35, 0.10}, {0.85, 0.60, 0.35}, {1.5, 0.5, -0.5}, 4.0};
}

}  // namespace detail

inline Tensor synthetic_image(int label, double contrast, Rng& rng, std::size_t side, Domain domain,
                              double pixel_noise) {
  const auto style = detail::domain_style(domain);
  double base[3];
  for (int c = 0; c < 3; ++c) base[c] = rng.uniform(style.base_lo[c], style.base_hi[c]);
  const double jitter = static_cast<double>(side) / 8.0;
  const double split = static_cast<double>(side) / 2.0 + rng.uniform(-jitter, jitter);
  const double phase_top = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const double phase_bottom = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const double omega = 2.0 * std::numbers::pi / style.period;

  Tensor img({3, side, side});
  for (std::size_t y = 0; y < side; ++y) {
    const bool top = static_cast<double>(y) + 0.5 < split;
    // class 1: horizontal stripes (vary along y) on top, vertical below
    const bool horizontal = (label == 1) == top;
    const double phase = top ? phase_top : phase_bottom;
    for (std::size_t x = 0; x < side; ++x) {
      const double coord = horizontal ? static_cast<double>(y) : static_cast<double>(x);
      const double wave = contrast * std::sin(omega * coord + phase);
      for (std::size_t c = 0; c < 3; ++c) {
        img[(c * side + y) * side + x] = base[c] + style.stripe_gain[c] * wave + rng.normal(0.0, pixel_noise);
      }
    }
  }
  quantize_8bit(img);
  return img;
}

inline Dataset generate_synthetic(const SyntheticConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.seed);
  Dataset d;
  d.provenance = "synthetic:seed=" + std::to_string(cfg.seed) + ",count=" + std::to_string(cfg.count) +
                 ",noise=" + std::to_string(cfg.noise_rate) + ",signal=" + std::to_string(cfg.signal) +
                 ",domain=" + (cfg.domain == Domain::source ? "source" : "target");
  const int digits = static_cast<int>(std::to_string(cfg.count - 1).size());
  for (std::size_t i = 0; i < cfg.count; ++i) {
    Sample s;
    std::string num = std::to_string(i);
    s.id = cfg.id_prefix + std::string(static_cast<std::size_t>(digits) - num.size(), '0') + num;
    const int truth = rng.bernoulli(0.5) ? 1 : 0;
    const double clarity = rng.uniform();
    s.pixels = synthetic_image(truth, cfg.signal * clarity, rng, cfg.side, cfg.domain, cfg.pixel_noise);
    s.true_label = truth;
    s.label = rng.bernoulli(cfg.noise_rate) ? 1 - truth : truth;
    if (cfg.worker_votes) {
      // clearer images draw more reliable votes
      const double reliability = 0.6 + 0.4 * clarity;
      std::array<int, worker_count> votes{};
      for (auto& v : votes) v = rng.bernoulli(reliability) ? truth : 1 - truth;
      s.worker_labels = votes;
    }
    d.samples.push_back(std::move(s));
  }
  return d;
}

/// Writes each sample as images/<id>.ppm under `dir` and points the sample
/// paths at them.
inline void write_corpus(Dataset& d, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir / "images");
  for (auto& s : d.samples) {
    if (!s.pixels) fail(ErrorKind::data, "sample '" + s.id + "' has no pixels to write");
    s.path = "images/" + s.id + ".ppm";
    write_image(dir / s.path, *s.pixels);
  }
  d.root = dir;
}

}  // namespace pcnn
