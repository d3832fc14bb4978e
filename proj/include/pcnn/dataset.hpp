#pragma once

#include <array>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "pcnn/error.hpp"
#include "pcnn/image.hpp"
#include "pcnn/tensor.hpp"

namespace pcnn {

inline constexpr std::size_t worker_count = 5;

struct Sample {
  std::string id;
  std::string path;                // relative paths resolve against Dataset::root
  std::optional<int> label;        // 0 negative, 1 positive
  std::optional<std::array<int, worker_count>> worker_labels;
  std::optional<int> true_label;   // clean label, synthetic corpora only
  std::optional<Tensor> pixels;    // [3,H,W] in [0,1] once materialized
};

struct Dataset {
  std::vector<Sample> samples;
  std::string provenance;
  std::filesystem::path root;

  std::size_t size() const { return samples.size(); }
  bool empty() const { return samples.empty(); }

  Dataset subset(const std::vector<std::size_t>& indices) const {
    Dataset d;
    d.provenance = provenance;
    d.root = root;
    d.samples.reserve(indices.size());
    for (std::size_t i : indices) d.samples.push_back(samples.at(i));
    return d;
  }

  /// Labels as 0/1 ints; throws a label error if any sample is unlabeled.
  std::vector<int> labels() const {
    std::vector<int> out;
    out.reserve(samples.size());
    for (const auto& s : samples) {
      if (!s.label) fail(ErrorKind::label, "sample '" + s.id + "' has no label");
      out.push_back(*s.label);
    }
    return out;
  }
};

/// Decodes and preprocesses every sample that has no pixels yet.
inline void materialize(Dataset& data, std::size_t side) {
  for (auto& s : data.samples) {
    if (s.pixels) {
      if (s.pixels->dim(1) != side || s.pixels->dim(2) != side) {
        s.pixels = resize_center_crop(*s.pixels, side);
      }
      continue;
    }
    if (s.path.empty()) fail(ErrorKind::data, "sample '" + s.id + "' has neither pixels nor a path");
    std::filesystem::path p(s.path);
    if (p.is_relative()) p = data.root / p;
    s.pixels = resize_center_crop(load_image(p), side);
  }
}

// ---------------------------------------------------------------------------
// JSON-lines manifest: {"id","path","label","worker_labels","true_label"}.
// A sample may omit "label" only when it carries "unlabeled": true.

inline Dataset parse_manifest(std::istream& is, const std::string& source) {
  Dataset d;
  d.provenance = source;
  std::set<std::string> seen;
  std::string line;
  std::size_t lineno = 0;
  auto parse_error = [&](const std::string& what) {
    fail(ErrorKind::parse, source + " line " + std::to_string(lineno) + ": " + what);
  };
  auto binary = [&](const nlohmann::json& v, const char* field) -> int {
    if (!v.is_number_integer() || (v.get<long long>() != 0 && v.get<long long>() != 1)) {
      parse_error(std::string(field) + " must be 0 or 1, got " + v.dump());
    }
    return v.get<int>();
  };
  while (std::getline(is, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      parse_error(std::string("malformed JSON: ") + e.what());
    }
    if (!j.is_object()) parse_error("expected a JSON object");
    Sample s;
    if (!j.contains("id") || !j["id"].is_string()) parse_error("missing string field 'id'");
    s.id = j["id"].get<std::string>();
    if (j.contains("path")) {
      if (!j["path"].is_string()) parse_error("'path' must be a string");
      s.path = j["path"].get<std::string>();
    }
    const bool unlabeled = j.value("unlabeled", false);
    if (j.contains("label") && !j["label"].is_null()) {
      s.label = binary(j["label"], "label");
    } else if (!unlabeled) {
      parse_error("sample '" + s.id + "' has no label and is not flagged unlabeled");
    }
    if (j.contains("worker_labels") && !j["worker_labels"].is_null()) {
      const auto& w = j["worker_labels"];
      if (!w.is_array() || w.size() != worker_count) parse_error("worker_labels must hold 5 votes");
      std::array<int, worker_count> votes{};
      for (std::size_t i = 0; i < worker_count; ++i) votes[i] = binary(w[i], "worker vote");
      s.worker_labels = votes;
    }
    if (j.contains("true_label") && !j["true_label"].is_null()) s.true_label = binary(j["true_label"], "true_label");
    if (!seen.insert(s.id).second) {
      fail(ErrorKind::data, source + " line " + std::to_string(lineno) + ": duplicate id '" + s.id + "'");
    }
    d.samples.push_back(std::move(s));
  }
  return d;
}

inline Dataset load_manifest(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) fail(ErrorKind::io, "cannot open manifest " + path.string());
  Dataset d = parse_manifest(is, path.string());
  d.root = path.parent_path();
  return d;
}

inline void write_manifest(std::ostream& os, const Dataset& d) {
  for (const auto& s : d.samples) {
    nlohmann::ordered_json j;
    j["id"] = s.id;
    if (!s.path.empty()) j["path"] = s.path;
    if (s.label) {
      j["label"] = *s.label;
    } else {
      j["unlabeled"] = true;
    }
    if (s.worker_labels) j["worker_labels"] = *s.worker_labels;
    if (s.true_label) j["true_label"] = *s.true_label;
    os << j.dump() << '\n';
  }
}

inline void save_manifest(const Dataset& d, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) fail(ErrorKind::io, "cannot write manifest " + path.string());
  write_manifest(os, d);
}

// ---------------------------------------------------------------------------
// Crowd-vote aggregation into agreement subsets.

struct AgreementSubsets {
  Dataset five_agree;
  Dataset at_least_four;
  Dataset at_least_three;
};

/// Majority vote over the five worker labels becomes each sample's label.
/// Subsets are nested: 5-0 votes are in all three, 4-1 in the outer two,
/// 3-2 only in at_least_three.
inline AgreementSubsets aggregate_worker_labels(const Dataset& data) {
  AgreementSubsets out;
  for (auto* d : {&out.five_agree, &out.at_least_four, &out.at_least_three}) {
    d->provenance = data.provenance;
    d->root = data.root;
  }
  for (const auto& s : data.samples) {
    if (!s.worker_labels) fail(ErrorKind::data, "sample '" + s.id + "' is missing worker votes");
    int positive = 0;
    for (int v : *s.worker_labels) positive += v;
    const int agree = std::max(positive, static_cast<int>(worker_count) - positive);
    Sample labeled = s;
    labeled.label = positive * 2 > static_cast<int>(worker_count) ? 1 : 0;
    if (agree == 5) out.five_agree.samples.push_back(labeled);
    if (agree >= 4) out.at_least_four.samples.push_back(labeled);
    out.at_least_three.samples.push_back(std::move(labeled));
  }
  return out;
}

}  // namespace pcnn
