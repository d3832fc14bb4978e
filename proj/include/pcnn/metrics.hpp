#pragma once

#include <cmath>
#include <cstdio>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pcnn/error.hpp"

namespace pcnn {

/// Counts with sentiment-positive (label 1) as the positive class.
struct ConfusionMatrix {
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;

  std::size_t total() const { return tp + fp + tn + fn; }

  ConfusionMatrix& operator+=(const ConfusionMatrix& o) {
    tp += o.tp;
    fp += o.fp;
    tn += o.tn;
    fn += o.fn;
    return *this;
  }
  friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;
};

inline ConfusionMatrix confusion(std::span<const int> predictions, std::span<const int> labels) {
  if (predictions.size() != labels.size()) {
    fail(ErrorKind::data, "confusion: " + std::to_string(predictions.size()) + " predictions vs " +
                              std::to_string(labels.size()) + " labels");
  }
  if (predictions.empty()) fail(ErrorKind::data, "confusion: nothing to evaluate");
  ConfusionMatrix cm;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int p = predictions[i], y = labels[i];
    if ((p != 0 && p != 1) || (y != 0 && y != 1)) fail(ErrorKind::label, "confusion: values must be 0 or 1");
    if (p == 1) {
      (y == 1 ? cm.tp : cm.fp)++;
    } else {
      (y == 0 ? cm.tn : cm.fn)++;
    }
  }
  return cm;
}

/// Harmonic mean 2PR/(P+R); null when either input is null or P+R == 0.
inline std::optional<double> f1_score(std::optional<double> precision, std::optional<double> recall) {
  if (!precision || !recall || *precision + *recall <= 0.0) return std::nullopt;
  return 2.0 * *precision * *recall / (*precision + *recall);
}

struct MetricsReport {
  std::string arm = "CNN";
  std::string subset = "all";
  std::optional<double> precision, recall, f1, accuracy;
  ConfusionMatrix counts;
  std::vector<std::string> warnings;
};

/// Precision, recall, F1 and accuracy. A zero denominator yields a null
/// metric and a warning instead of a number.
inline MetricsReport metrics(const ConfusionMatrix& cm, std::string arm = "CNN", std::string subset = "all") {
  if (cm.total() == 0) fail(ErrorKind::data, "metrics of an empty confusion matrix");
  MetricsReport r;
  r.arm = std::move(arm);
  r.subset = std::move(subset);
  r.counts = cm;
  const auto ratio = [](std::size_t num, std::size_t den) -> std::optional<double> {
    if (den == 0) return std::nullopt;
    return static_cast<double>(num) / static_cast<double>(den);
  };
  r.precision = ratio(cm.tp, cm.tp + cm.fp);
  if (!r.precision) r.warnings.push_back("precision undefined: no positive predictions");
  r.recall = ratio(cm.tp, cm.tp + cm.fn);
  if (!r.recall) r.warnings.push_back("recall undefined: no positive labels");
  r.f1 = f1_score(r.precision, r.recall);
  if (!r.f1 && r.precision && r.recall) r.warnings.push_back("f1 undefined: precision and recall are both 0");
  r.accuracy = ratio(cm.tp + cm.tn, cm.total());
  return r;
}

/// Macro average: per metric, the mean over reports where it is defined.
/// Counts are summed (the micro totals).
inline MetricsReport average_reports(std::span<const MetricsReport> reports, std::string arm, std::string subset) {
  if (reports.empty()) fail(ErrorKind::data, "nothing to average");
  MetricsReport out;
  out.arm = std::move(arm);
  out.subset = std::move(subset);
  auto mean = [&](auto member, const char* name) -> std::optional<double> {
    double acc = 0.0;
    std::size_t n = 0;
    for (const auto& r : reports) {
      if (const auto& v = r.*member) {
        acc += *v;
        ++n;
      }
    }
    if (n < reports.size()) {
      out.warnings.push_back(std::string(name) + " undefined in " + std::to_string(reports.size() - n) +
                             " fold(s); excluded from the average");
    }
    if (n == 0) return std::nullopt;
    return acc / static_cast<double>(n);
  };
  out.precision = mean(&MetricsReport::precision, "precision");
  out.recall = mean(&MetricsReport::recall, "recall");
  out.f1 = mean(&MetricsReport::f1, "f1");
  out.accuracy = mean(&MetricsReport::accuracy, "accuracy");
  for (const auto& r : reports) out.counts += r.counts;
  return out;
}

}  // namespace pcnn
