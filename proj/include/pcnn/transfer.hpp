#pragma once

#include <algorithm>
#include <cstdint>
#include <string>
#include <vector>

#include "pcnn/dataset.hpp"
#include "pcnn/error.hpp"
#include "pcnn/metrics.hpp"
#include "pcnn/network.hpp"
#include "pcnn/rng.hpp"
#include "pcnn/training.hpp"

// k-fold fine-tuning of a pre-trained checkpoint on a target domain.
namespace pcnn {

struct FoldPlan {
  std::size_t k = 0;
  std::vector<std::vector<std::size_t>> folds;  // each sorted ascending
  std::uint64_t seed = 0;

  std::size_t size() const {
    std::size_t n = 0;
    for (const auto& f : folds) n += f.size();
    return n;
  }

  /// Every index outside fold `held_out`, ascending.
  std::vector<std::size_t> training_indices(std::size_t held_out) const {
    std::vector<std::size_t> out;
    for (std::size_t f = 0; f < folds.size(); ++f) {
      if (f != held_out) out.insert(out.end(), folds[f].begin(), folds[f].end());
    }
    std::sort(out.begin(), out.end());
    return out;
  }
};

/// Shuffles 0..n-1 and cuts it into k contiguous runs; the first n % k
/// folds get one extra element.
inline FoldPlan partition_folds(std::size_t n, std::size_t k, std::uint64_t seed) {
  if (k < 2) fail(ErrorKind::config, "fold count must be at least 2");
  if (n < k) fail(ErrorKind::data, std::to_string(n) + " samples cannot fill " + std::to_string(k) + " folds");
  FoldPlan plan;
  plan.k = k;
  plan.seed = seed;
  Rng rng(seed);
  const auto order = rng.permutation(n);
  std::size_t pos = 0;
  for (std::size_t f = 0; f < k; ++f) {
    const std::size_t len = n / k + (f < n % k ? 1 : 0);
    std::vector<std::size_t> fold(order.begin() + static_cast<std::ptrdiff_t>(pos),
                                  order.begin() + static_cast<std::ptrdiff_t>(pos + len));
    std::sort(fold.begin(), fold.end());
    plan.folds.push_back(std::move(fold));
    pos += len;
  }
  return plan;
}

/// Continues training a copy of `m`. A zero budget returns `m` unchanged.
inline Checkpoint fine_tune(const Checkpoint& m, const Dataset& data, const TrainConfig& config) {
  if (data.empty()) fail(ErrorKind::data, "fine-tune set is empty");
  for (const auto& s : data.samples) {
    if (s.pixels && (s.pixels->dim(0) != m.spec.channels || s.pixels->dim(1) != m.spec.height ||
                     s.pixels->dim(2) != m.spec.width)) {
      fail(ErrorKind::shape, "sample '" + s.id + "' is " + shape_string(s.pixels->shape()) + " but the network expects " +
                                 shape_string({m.spec.channels, m.spec.height, m.spec.width}));
    }
  }
  return train(m, data, config).checkpoint;
}

struct TransferResult {
  FoldPlan plan;
  std::vector<MetricsReport> folds;
  MetricsReport averaged;  // macro mean over folds
  MetricsReport micro;     // metrics of the summed confusion counts
  ScoreMatrix scores;      // out-of-fold scores, rows in dataset order
  std::vector<std::size_t> fold_of;
  std::size_t fine_tune_runs = 0;
};

/// Fine-tunes `m` afresh for every fold on the other k-1 folds and scores
/// the held-out fold with the result.
inline TransferResult cross_domain_evaluate(const Checkpoint& m, const Dataset& target, std::size_t k,
                                            const TrainConfig& config, std::uint64_t fold_seed,
                                            const std::string& arm = "CNN", const std::string& subset = "all") {
  const auto labels = target.labels();
  TransferResult out;
  out.plan = partition_folds(target.size(), k, fold_seed);
  out.scores = ScoreMatrix({target.size(), 2});
  out.fold_of.assign(target.size(), 0);
  for (std::size_t f = 0; f < k; ++f) {
    const Checkpoint tuned = fine_tune(m, target.subset(out.plan.training_indices(f)), config);
    ++out.fine_tune_runs;
    const auto& held = out.plan.folds[f];
    const Dataset test = target.subset(held);
    const ScoreMatrix s = score_dataset(tuned, test);
    std::vector<int> fold_labels;
    for (std::size_t r = 0; r < held.size(); ++r) {
      out.scores.at(held[r], 0) = s.at(r, 0);
      out.scores.at(held[r], 1) = s.at(r, 1);
      out.fold_of[held[r]] = f;
      fold_labels.push_back(labels[held[r]]);
    }
    MetricsReport rep = metrics(confusion(predictions(s), fold_labels), arm, subset + "/fold" + std::to_string(f + 1));
    out.folds.push_back(std::move(rep));
  }
  out.averaged = average_reports(out.folds, arm, subset);
  out.micro = metrics(confusion(predictions(out.scores), labels), arm, subset + "/micro");
  return out;
}

}  // namespace pcnn
