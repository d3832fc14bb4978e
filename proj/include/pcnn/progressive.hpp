#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <ostream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "pcnn/dataset.hpp"
#include "pcnn/error.hpp"
#include "pcnn/network.hpp"
#include "pcnn/rng.hpp"
#include "pcnn/training.hpp"

// Progressive training: score the training set with the trained model,
// drop low-margin samples at random, and keep training the same weights on
// what survives.
namespace pcnn {

/// p = max(0, 2 - exp(|s1 - s2|)). Returns exactly 0 once the margin
/// reaches ln 2, where the closed form crosses zero.
inline double removal_probability(double s1, double s2) {
  if (std::isnan(s1) || std::isnan(s2)) fail(ErrorKind::score, "removal probability of a NaN score");
  const double margin = std::abs(s1 - s2);
  if (margin >= std::numbers::ln2) return 0.0;
  return std::max(0.0, 2.0 - std::exp(margin));
}

struct FilterOutcome {
  std::vector<std::size_t> kept;      // indices into the filtered dataset, ascending
  std::vector<std::size_t> removed;   // ascending; kept and removed partition all indices
  std::vector<double> probability;    // p_i per sample
  std::vector<double> s1, s2;         // scores that produced p_i
  std::uint64_t seed = 0;

  std::size_t size() const { return probability.size(); }

  double mean_margin() const {
    if (s1.empty()) return 0.0;
    double acc = 0.0;
    for (std::size_t i = 0; i < s1.size(); ++i) acc += std::abs(s1[i] - s2[i]);
    return acc / static_cast<double>(s1.size());
  }

  double expected_kept() const {
    double acc = 0.0;
    for (double p : probability) acc += 1.0 - p;
    return acc;
  }
};

/// Independent Bernoulli removal per sample. Sample i is removed when
/// counter_uniform(seed, i) < p_i, so the outcome does not depend on the
/// order in which samples are visited.
inline FilterOutcome filter_training_set(const Dataset& data, const ScoreMatrix& scores, std::uint64_t seed) {
  if (scores.rank() != 2 || scores.dim(1) != 2) fail(ErrorKind::shape, "scores must be [N,2]");
  if (scores.dim(0) != data.size()) {
    fail(ErrorKind::data, "score rows (" + std::to_string(scores.dim(0)) + ") != dataset size (" +
                              std::to_string(data.size()) + ")");
  }
  FilterOutcome out;
  out.seed = seed;
  const std::size_t n = data.size();
  out.probability.resize(n);
  out.s1.resize(n);
  out.s2.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    out.s1[i] = scores.at(i, 0);
    out.s2[i] = scores.at(i, 1);
    out.probability[i] = removal_probability(out.s1[i], out.s2[i]);
    if (counter_uniform(seed, i) < out.probability[i]) {
      out.removed.push_back(i);
    } else {
      out.kept.push_back(i);
    }
  }
  return out;
}

/// One JSON object per sample: index, id, s1, s2, p, kept.
inline void write_filter_jsonl(std::ostream& os, const Dataset& data, const FilterOutcome& f) {
  std::vector<bool> kept(f.size(), false);
  for (std::size_t i : f.kept) kept[i] = true;
  for (std::size_t i = 0; i < f.size(); ++i) {
    nlohmann::ordered_json j;
    j["index"] = i;
    j["id"] = data.samples.at(i).id;
    j["s1"] = f.s1[i];
    j["s2"] = f.s2[i];
    j["p"] = f.probability[i];
    j["kept"] = static_cast<bool>(kept[i]);
    os << j.dump() << '\n';
  }
}

struct ProgressiveResult {
  Checkpoint cnn;                      // after base training
  Checkpoint pcnn;                     // after the final fine-tuning round
  std::vector<FilterOutcome> outcomes; // one per round, indices relative to that round's input
  std::vector<std::vector<std::size_t>> kept_original;  // kept indices into the original dataset
  TrainHistory history;                // base training followed by every fine-tuning round
};

struct ProgressiveOptions {
  std::size_t rounds = 1;
  std::uint64_t filter_seed = 7;
  const Dataset* heldout = nullptr;
};

/// Trains on the full data, then per round: score the current training set
/// with the current model, filter it, and fine-tune the same checkpoint on
/// the survivors. Later rounds filter only the previous round's survivors.
inline ProgressiveResult train_progressive(Checkpoint initial, const Dataset& data, const TrainConfig& config,
                                           const TrainConfig& finetune_config, ProgressiveOptions options = {}) {
  if (data.empty()) fail(ErrorKind::data, "training set is empty");
  if (options.rounds == 0) fail(ErrorKind::config, "rounds must be positive");
  ProgressiveResult result;
  TrainResult base = train(std::move(initial), data, config, {options.heldout});
  result.history = std::move(base.history);
  result.cnn = base.checkpoint;

  Checkpoint model = std::move(base.checkpoint);
  std::vector<std::size_t> current(data.size());
  for (std::size_t i = 0; i < current.size(); ++i) current[i] = i;
  for (std::size_t round = 1; round <= options.rounds; ++round) {
    const Dataset subset = data.subset(current);
    const ScoreMatrix scores = score_dataset(model, subset);
    FilterOutcome outcome = filter_training_set(subset, scores, splitmix64(options.filter_seed + round));
    if (outcome.kept.empty()) {
      fail(ErrorKind::degenerate_filter, "filter removed every sample in round " + std::to_string(round));
    }
    std::vector<std::size_t> next;
    next.reserve(outcome.kept.size());
    for (std::size_t i : outcome.kept) next.push_back(current[i]);
    current = std::move(next);
    result.kept_original.push_back(current);
    result.outcomes.push_back(std::move(outcome));

    TrainResult tuned = train(std::move(model), data.subset(current), finetune_config, {options.heldout});
    result.history.insert(result.history.end(), tuned.history.begin(), tuned.history.end());
    model = std::move(tuned.checkpoint);
  }
  result.pcnn = std::move(model);
  return result;
}

}  // namespace pcnn
