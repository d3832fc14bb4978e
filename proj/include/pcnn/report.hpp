#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "pcnn/dataset.hpp"
#include "pcnn/error.hpp"
#include "pcnn/image.hpp"
#include "pcnn/metrics.hpp"
#include "pcnn/network.hpp"
#include "pcnn/training.hpp"

namespace pcnn {

// ---------------------------------------------------------------------------
// Metric tables.

enum class ReportFormat { csv, json };

inline ReportFormat parse_report_format(std::string_view s) {
  if (s == "csv") return ReportFormat::csv;
  if (s == "json") return ReportFormat::json;
  fail(ErrorKind::config, "unknown report format '" + std::string(s) + "' (expected csv|json)");
}

inline constexpr const char* report_header = "arm,subset,precision,recall,f1,accuracy";

inline std::string fixed3(const std::optional<double>& v) {
  if (!v) return "";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3f", *v);
  return buf;
}

namespace detail {

inline nlohmann::ordered_json nullable(const std::optional<double>& v) {
  return v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json(nullptr);
}

inline std::optional<double> from_nullable(const nlohmann::json& j) {
  if (j.is_null()) return std::nullopt;
  return j.get<double>();
}

}  // namespace detail

/// One row per report, columns precision, recall, f1, accuracy. CSV rounds
/// to 3 decimals and leaves undefined metrics empty; JSON keeps full
/// precision and writes null.
inline void write_report(std::ostream& os, std::span<const MetricsReport> reports, ReportFormat format) {
  if (reports.empty()) fail(ErrorKind::data, "report has no rows");
  if (format == ReportFormat::csv) {
    os << report_header << '\n';
    for (const auto& r : reports) {
      os << r.arm << ',' << r.subset << ',' << fixed3(r.precision) << ',' << fixed3(r.recall) << ','
         << fixed3(r.f1) << ',' << fixed3(r.accuracy) << '\n';
    }
    return;
  }
  nlohmann::ordered_json rows = nlohmann::ordered_json::array();
  for (const auto& r : reports) {
    nlohmann::ordered_json j;
    j["arm"] = r.arm;
    j["subset"] = r.subset;
    j["precision"] = detail::nullable(r.precision);
    j["recall"] = detail::nullable(r.recall);
    j["f1"] = detail::nullable(r.f1);
    j["accuracy"] = detail::nullable(r.accuracy);
    j["tp"] = r.counts.tp;
    j["fp"] = r.counts.fp;
    j["tn"] = r.counts.tn;
    j["fn"] = r.counts.fn;
    j["warnings"] = r.warnings;
    rows.push_back(std::move(j));
  }
  os << rows.dump(2) << '\n';
}

inline void emit_report(std::span<const MetricsReport> reports, ReportFormat format, const std::filesystem::path& path) {
  std::ostringstream buf;
  write_report(buf, reports, format);
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os || !(os << buf.str()) || !os.flush()) fail(ErrorKind::io, "cannot write report " + path.string());
}

/// Reads the CSV layout back. Confusion counts are not part of CSV and come
/// back as zero.
inline std::vector<MetricsReport> parse_report_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line) || line != report_header) fail(ErrorKind::parse, "report CSV: bad header");
  std::vector<MetricsReport> out;
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    if (cells.size() != 6) fail(ErrorKind::parse, "report CSV line " + std::to_string(lineno) + ": expected 6 cells");
    MetricsReport r;
    r.arm = cells[0];
    r.subset = cells[1];
    std::optional<double>* fields[] = {&r.precision, &r.recall, &r.f1, &r.accuracy};
    for (int i = 0; i < 4; ++i) {
      if (!cells[2 + i].empty()) *fields[i] = detail::parse_real(cells[2 + i], "report CSV line " + std::to_string(lineno));
    }
    out.push_back(std::move(r));
  }
  return out;
}

inline std::vector<MetricsReport> parse_report_json(std::istream& is) {
  std::vector<MetricsReport> out;
  try {
    const auto rows = nlohmann::json::parse(is);
    for (const auto& j : rows) {
      MetricsReport r;
      r.arm = j.at("arm").get<std::string>();
      r.subset = j.at("subset").get<std::string>();
      r.precision = detail::from_nullable(j.at("precision"));
      r.recall = detail::from_nullable(j.at("recall"));
      r.f1 = detail::from_nullable(j.at("f1"));
      r.accuracy = detail::from_nullable(j.at("accuracy"));
      r.counts.tp = j.value("tp", std::size_t{0});
      r.counts.fp = j.value("fp", std::size_t{0});
      r.counts.tn = j.value("tn", std::size_t{0});
      r.counts.fn = j.value("fn", std::size_t{0});
      if (j.contains("warnings")) r.warnings = j["warnings"].get<std::vector<std::string>>();
      out.push_back(std::move(r));
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::parse, std::string("report JSON: ") + e.what());
  }
  return out;
}

/// Wide table: one row per arm, then four metric columns per subset in
/// first-seen subset order. Missing cells are left empty.
inline void write_wide_table(std::ostream& os, std::span<const MetricsReport> reports) {
  if (reports.empty()) fail(ErrorKind::data, "report has no rows");
  std::vector<std::string> arms, subsets;
  auto remember = [](std::vector<std::string>& v, const std::string& s) {
    if (std::find(v.begin(), v.end(), s) == v.end()) v.push_back(s);
  };
  for (const auto& r : reports) {
    remember(arms, r.arm);
    remember(subsets, r.subset);
  }
  os << "arm";
  for (const auto& s : subsets) {
    for (const char* m : {"precision", "recall", "f1", "accuracy"}) os << ',' << s << ':' << m;
  }
  os << '\n';
  for (const auto& a : arms) {
    os << a;
    for (const auto& s : subsets) {
      const auto it = std::find_if(reports.begin(), reports.end(),
                                   [&](const MetricsReport& r) { return r.arm == a && r.subset == s; });
      if (it == reports.end()) {
        os << ",,,,";
        continue;
      }
      os << ',' << fixed3(it->precision) << ',' << fixed3(it->recall) << ',' << fixed3(it->f1) << ','
         << fixed3(it->accuracy);
    }
    os << '\n';
  }
}

// ---------------------------------------------------------------------------
// Ranked examples.

struct RankedItem {
  std::string id;
  double score = 0.0;  // positive-class probability
  int predicted = 0;
  std::optional<int> label;
  std::optional<bool> agrees;  // prediction matches the label
};

struct RankResult {
  std::vector<RankedItem> positive;  // highest positive score first
  std::vector<RankedItem> negative;  // lowest positive score first
};

inline RankResult rank_extremes(const ScoreMatrix& scores, const Dataset& data, std::size_t n) {
  if (scores.rank() != 2 || scores.dim(1) != 2 || scores.dim(0) != data.size()) {
    fail(ErrorKind::data, "scores " + shape_string(scores.shape()) + " do not match dataset of " +
                              std::to_string(data.size()));
  }
  if (n > data.size()) {
    fail(ErrorKind::data, "cannot rank " + std::to_string(n) + " of " + std::to_string(data.size()) + " samples");
  }
  const auto pred = predictions(scores);
  std::vector<RankedItem> items;
  for (std::size_t i = 0; i < data.size(); ++i) {
    RankedItem it{data.samples[i].id, scores.at(i, 1), pred[i], data.samples[i].label, std::nullopt};
    if (it.label) it.agrees = *it.label == it.predicted;
    items.push_back(std::move(it));
  }
  RankResult out;
  auto take = [&](auto cmp) {
    std::vector<RankedItem> v = items;
    std::sort(v.begin(), v.end(), cmp);
    v.resize(n);
    return v;
  };
  out.positive = take([](const RankedItem& a, const RankedItem& b) {
    return a.score != b.score ? a.score > b.score : a.id < b.id;
  });
  out.negative = take([](const RankedItem& a, const RankedItem& b) {
    return a.score != b.score ? a.score < b.score : a.id < b.id;
  });
  return out;
}

inline void write_rank_json(std::ostream& os, const RankResult& r) {
  auto list = [](const std::vector<RankedItem>& v) {
    nlohmann::ordered_json a = nlohmann::ordered_json::array();
    for (const auto& it : v) {
      nlohmann::ordered_json j;
      j["id"] = it.id;
      j["score"] = it.score;
      j["predicted"] = it.predicted;
      j["label"] = it.label ? nlohmann::ordered_json(*it.label) : nlohmann::ordered_json(nullptr);
      j["agrees"] = it.agrees ? nlohmann::ordered_json(*it.agrees) : nlohmann::ordered_json(nullptr);
      a.push_back(std::move(j));
    }
    return a;
  };
  nlohmann::ordered_json j;
  j["positive"] = list(r.positive);
  j["negative"] = list(r.negative);
  os << j.dump(2) << '\n';
}

// ---------------------------------------------------------------------------
// First-layer filter grid.

struct GridLayout {
  std::size_t columns = 0, rows = 0, tile = 0, width = 0, height = 0;
};

/// Columns: the smallest divisor of `count` that is at least ceil(sqrt(count)),
/// unless that would leave a strip more than twice as wide as a square;
/// then ceil(sqrt(count)) columns with a partial last row.
inline GridLayout grid_layout(std::size_t count, std::size_t tile) {
  const auto square = static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(count))));
  std::size_t cols = square;
  while (count % cols != 0) ++cols;
  if (cols > 2 * square) cols = square;
  GridLayout g;
  g.columns = cols;
  g.rows = (count + cols - 1) / cols;
  g.tile = tile;
  g.width = cols * (tile + 1) + 1;  // 1-pixel black separators and border
  g.height = g.rows * (tile + 1) + 1;
  return g;
}

/// RGB image [3,H,W] in [0,1] with every first-layer kernel min-max
/// normalized on its own. A constant kernel becomes a mid-gray tile.
/// Kernels with other than 3 input channels are shown as grey levels of
/// their channel mean.
inline Tensor filter_grid_image(const Checkpoint& c, GridLayout* layout_out = nullptr) {
  if (c.spec.layers.empty() || c.spec.layers.front().kind != LayerKind::conv) {
    fail(ErrorKind::config, "filter grid needs a convolutional first layer");
  }
  const Tensor& w = c.param(layer_names(c.spec).front() + ".weight");
  const std::size_t kernels = w.dim(0), channels = w.dim(1), k = w.dim(2);
  const GridLayout g = grid_layout(kernels, k);
  Tensor img({3, g.height, g.width}, 0.0);
  const std::size_t per_kernel = channels * k * k;
  for (std::size_t n = 0; n < kernels; ++n) {
    const double* kw = w.data() + n * per_kernel;
    const auto [lo, hi] = std::minmax_element(kw, kw + per_kernel);
    const double range = *hi - *lo;
    const std::size_t oy = (n / g.columns) * (k + 1) + 1, ox = (n % g.columns) * (k + 1) + 1;
    for (std::size_t ch = 0; ch < 3; ++ch) {
      for (std::size_t y = 0; y < k; ++y) {
        for (std::size_t x = 0; x < k; ++x) {
          double v;
          if (channels == 3) {
            v = kw[(ch * k + y) * k + x];
          } else {
            v = 0.0;
            for (std::size_t s = 0; s < channels; ++s) v += kw[(s * k + y) * k + x];
            v /= static_cast<double>(channels);
          }
          img[(ch * g.height + oy + y) * g.width + ox + x] = range > 0.0 ? (v - *lo) / range : 0.5;
        }
      }
    }
  }
  if (layout_out) *layout_out = g;
  return img;
}

inline GridLayout export_filter_grid(const Checkpoint& c, const std::filesystem::path& path) {
  GridLayout g;
  const Tensor img = filter_grid_image(c, &g);
  write_image(path, img);
  return g;
}

}  // namespace pcnn
