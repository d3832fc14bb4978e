#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "pcnn/dataset.hpp"
#include "pcnn/error.hpp"
#include "pcnn/network.hpp"
#include "pcnn/rng.hpp"
#include "pcnn/tensor.hpp"

namespace pcnn {

struct TrainConfig {
  std::size_t batch_size = 32;
  std::size_t iterations = 600;
  double learning_rate = 0.01;
  double lr_decay = 0.1;
  std::size_t decay_interval = 0;  // 0: every 40% of the iteration budget
  double momentum = 0.9;
  double weight_decay = 5e-4;
  std::uint64_t seed = 1;
  std::size_t log_interval = 10;
  std::size_t frozen_layers = 0;  // parameterized layers, counted from the input

  /// Batch of 256 images as used for the full-size corpus.
  static TrainConfig paper() {
    TrainConfig c;
    c.batch_size = 256;
    c.iterations = 300000;
    return c;
  }

  /// Continuation schedule: one tenth of the base rate, same momentum.
  TrainConfig fine_tune_schedule(std::size_t budget) const {
    TrainConfig c = *this;
    c.learning_rate = learning_rate * 0.1;
    c.iterations = budget;
    return c;
  }

  std::size_t effective_decay_interval() const {
    if (decay_interval > 0) return decay_interval;
    return std::max<std::size_t>(1, (iterations * 2) / 5);
  }

  double rate_at(std::size_t local_iteration) const {
    const std::size_t steps = local_iteration / effective_decay_interval();
    return learning_rate * std::pow(lr_decay, static_cast<double>(steps));
  }

  void validate() const {
    if (batch_size == 0) fail(ErrorKind::config, "batch size must be at least 1");
    if (!(learning_rate > 0.0)) fail(ErrorKind::config, "learning rate must be positive");
    if (!(lr_decay > 0.0)) fail(ErrorKind::config, "learning-rate decay must be positive");
    if (!(momentum >= 0.0 && momentum < 1.0)) fail(ErrorKind::config, "momentum must be in [0,1)");
    if (!(weight_decay >= 0.0)) fail(ErrorKind::config, "weight decay must be non-negative");
    if (log_interval == 0) fail(ErrorKind::config, "log interval must be positive");
  }
};

struct HistoryRecord {
  std::uint64_t iteration;
  double loss;
  double learning_rate;
  std::optional<double> eval_accuracy;
};

using TrainHistory = std::vector<HistoryRecord>;

inline void write_history_csv(std::ostream& os, const TrainHistory& history) {
  os << "iteration,loss,learning_rate,eval_accuracy\n";
  char buf[128];
  for (const auto& r : history) {
    std::snprintf(buf, sizeof buf, "%llu,%.9g,%.9g,", static_cast<unsigned long long>(r.iteration), r.loss,
                  r.learning_rate);
    os << buf;
    if (r.eval_accuracy) {
      std::snprintf(buf, sizeof buf, "%.6f", *r.eval_accuracy);
      os << buf;
    }
    os << '\n';
  }
}

// ---------------------------------------------------------------------------
// Objective

namespace detail {

inline void check_labels(const ScoreMatrix& probs, std::span<const int> labels) {
  if (probs.rank() != 2 || probs.dim(1) != 2) fail(ErrorKind::shape, "scores must be [N,2]");
  if (probs.dim(0) != labels.size()) {
    fail(ErrorKind::data, "score rows (" + std::to_string(probs.dim(0)) + ") != labels (" +
                              std::to_string(labels.size()) + ")");
  }
  for (int y : labels) {
    if (y != 0 && y != 1) fail(ErrorKind::label, "label " + std::to_string(y) + " outside {0,1}");
  }
}

}  // namespace detail

inline constexpr double probability_floor = 1e-12;

/// Negated mean conditional log-likelihood of the labels.
inline double logistic_loss(const ScoreMatrix& probs, std::span<const int> labels) {
  detail::check_labels(probs, labels);
  double total = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const double p = std::clamp(probs.at(i, static_cast<std::size_t>(labels[i])), probability_floor,
                                1.0 - probability_floor);
    total -= std::log(p);
  }
  return total / static_cast<double>(labels.size());
}

/// d(loss)/d(logits) = (probs - one_hot(labels)) / N.
inline Tensor loss_gradient(const ScoreMatrix& probs, std::span<const int> labels) {
  detail::check_labels(probs, labels);
  Tensor g = probs;
  const double inv_n = 1.0 / static_cast<double>(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    g.at(i, static_cast<std::size_t>(labels[i])) -= 1.0;
    g.at(i, 0) *= inv_n;
    g.at(i, 1) *= inv_n;
  }
  return g;
}

// ---------------------------------------------------------------------------
// Optimizer

struct SgdSettings {
  double learning_rate = 0.01;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  std::size_t frozen_layers = 0;
};

/// velocity <- momentum*velocity - lr*(grad + weight_decay*param);
/// param <- param + velocity. Both are kept at float32 storage precision so
/// a checkpoint round trip is lossless. Increments the iteration counter.
inline void sgd_step_in_place(Checkpoint& c, const Gradients& grads, const SgdSettings& s) {
  const auto slots = parameter_slots(c.spec);
  std::vector<std::size_t> param_layers;
  for (const auto& slot : slots) {
    if (param_layers.empty() || param_layers.back() != slot.layer) param_layers.push_back(slot.layer);
  }
  for (const auto& slot : slots) {
    auto git = grads.find(slot.name);
    if (git == grads.end()) fail(ErrorKind::shape, "missing gradient for '" + slot.name + "'");
    Tensor& p = c.params.at(slot.name);
    Tensor& v = c.velocity.at(slot.name);
    const Tensor& g = git->second;
    p.require_same_shape(g, slot.name.c_str());
    const std::size_t rank =
        static_cast<std::size_t>(std::find(param_layers.begin(), param_layers.end(), slot.layer) -
                                 param_layers.begin());
    if (rank < s.frozen_layers) continue;
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double vel = s.momentum * v[i] - s.learning_rate * (g[i] + s.weight_decay * p[i]);
      v[i] = static_cast<float>(vel);
      p[i] = static_cast<float>(p[i] + v[i]);
    }
  }
  ++c.iteration;
}

inline Checkpoint sgd_step(Checkpoint c, const Gradients& grads, const SgdSettings& s) {
  sgd_step_in_place(c, grads, s);
  return c;
}

// ---------------------------------------------------------------------------
// Batches and sampling

/// Network input for the given samples: pixels shifted to zero mean
/// (x - 0.5), stacked as [N,C,H,W].
inline Tensor make_batch(const Dataset& data, std::span<const std::size_t> indices, const NetworkSpec& spec) {
  if (indices.empty()) fail(ErrorKind::data, "empty batch");
  const Shape in = spec.input_shape();
  const std::size_t per = element_count(in);
  Tensor batch({indices.size(), in[0], in[1], in[2]});
  for (std::size_t b = 0; b < indices.size(); ++b) {
    const Sample& s = data.samples.at(indices[b]);
    if (!s.pixels) fail(ErrorKind::data, "sample '" + s.id + "' has no pixels (materialize first)");
    if (s.pixels->shape() != in) {
      fail(ErrorKind::shape, "sample '" + s.id + "' has shape " + shape_string(s.pixels->shape()) +
                                 ", network expects " + shape_string(in));
    }
    const double* src = s.pixels->data();
    double* dst = batch.data() + b * per;
    for (std::size_t i = 0; i < per; ++i) dst[i] = src[i] - 0.5;
  }
  return batch;
}

/// Epoch-shuffled sampling without replacement. The final batch of an epoch
/// may be short so that every sample is visited exactly once per epoch.
class EpochSampler {
 public:
  EpochSampler(std::size_t n, std::size_t batch, Rng rng) : n_(n), batch_(batch), rng_(rng) {
    if (n == 0) fail(ErrorKind::data, "cannot sample from an empty dataset");
    order_ = rng_.permutation(n_);
  }

  std::vector<std::size_t> next() {
    if (pos_ == n_) {
      order_ = rng_.permutation(n_);
      pos_ = 0;
      ++epoch_;
    }
    const std::size_t end = std::min(n_, pos_ + batch_);
    std::vector<std::size_t> out(order_.begin() + static_cast<std::ptrdiff_t>(pos_),
                                 order_.begin() + static_cast<std::ptrdiff_t>(end));
    pos_ = end;
    return out;
  }

  std::size_t epoch() const { return epoch_; }
  const Rng& rng() const { return rng_; }

 private:
  std::size_t n_, batch_;
  Rng rng_;
  std::vector<std::size_t> order_;
  std::size_t pos_ = 0;
  std::size_t epoch_ = 0;
};

// ---------------------------------------------------------------------------
// Scoring and training

/// Class probabilities for every sample, in dataset order.
inline ScoreMatrix score_dataset(const Checkpoint& c, const Dataset& data, std::size_t batch_size = 64) {
  if (data.empty()) fail(ErrorKind::data, "cannot score an empty dataset");
  ScoreMatrix scores({data.size(), 2});
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < data.size(); start += batch_size) {
    const std::size_t end = std::min(data.size(), start + batch_size);
    idx.clear();
    for (std::size_t i = start; i < end; ++i) idx.push_back(i);
    const ScoreMatrix part = forward(c, make_batch(data, idx, c.spec));
    std::copy(part.data(), part.data() + part.size(), scores.data() + start * 2);
  }
  return scores;
}

/// Argmax prediction; an exact tie goes to class 0.
inline std::vector<int> predictions(const ScoreMatrix& scores) {
  std::vector<int> out(scores.dim(0));
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = scores.at(i, 1) > scores.at(i, 0) ? 1 : 0;
  return out;
}

inline double accuracy(const ScoreMatrix& scores, std::span<const int> labels) {
  const auto pred = predictions(scores);
  if (pred.size() != labels.size() || pred.empty()) fail(ErrorKind::data, "accuracy: size mismatch");
  std::size_t hit = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hit += pred[i] == labels[i];
  return static_cast<double>(hit) / static_cast<double>(pred.size());
}

/// One forward/backward pass over a batch; returns the batch loss.
inline double compute_gradients(const Checkpoint& c, const Tensor& batch, std::span<const int> labels,
                                Gradients& grads) {
  ForwardTrace trace;
  const Tensor logits = forward_logits(c, batch, &trace);
  const ScoreMatrix probs = class_probabilities(logits);
  const double loss = logistic_loss(probs, labels);
  grads = backward(c, trace, loss_gradient(probs, labels));
  return loss;
}

struct TrainResult {
  Checkpoint checkpoint;
  TrainHistory history;
};

struct TrainOptions {
  const Dataset* heldout = nullptr;  // evaluated at every log point when set
};

/// Runs `config.iterations` mini-batch SGD steps starting from `c`. The
/// shuffle stream is derived from (seed, starting iteration), so resuming a
/// checkpoint with the same seed does not replay the same batches.
inline TrainResult train(Checkpoint c, const Dataset& data, const TrainConfig& config, TrainOptions options = {}) {
  config.validate();
  if (data.empty()) fail(ErrorKind::data, "training set is empty");
  const std::vector<int> labels = data.labels();
  std::vector<int> heldout_labels;
  if (options.heldout) heldout_labels = options.heldout->labels();

  TrainResult result;
  EpochSampler sampler(data.size(), config.batch_size, Rng(splitmix64(config.seed) ^ c.iteration));
  Gradients grads;
  std::vector<int> batch_labels;
  for (std::size_t it = 0; it < config.iterations; ++it) {
    const auto idx = sampler.next();
    batch_labels.clear();
    for (std::size_t i : idx) batch_labels.push_back(labels[i]);
    const Tensor batch = make_batch(data, idx, c.spec);
    const double loss = compute_gradients(c, batch, batch_labels, grads);
    if (!std::isfinite(loss)) fail(ErrorKind::data, "non-finite training loss at iteration " + std::to_string(c.iteration));
    const double lr = config.rate_at(it);
    sgd_step_in_place(c, grads, {lr, config.momentum, config.weight_decay, config.frozen_layers});
    if ((it + 1) % config.log_interval == 0 || it + 1 == config.iterations) {
      HistoryRecord rec{c.iteration, loss, lr, std::nullopt};
      if (options.heldout) rec.eval_accuracy = accuracy(score_dataset(c, *options.heldout), heldout_labels);
      result.history.push_back(rec);
    }
  }
  if (config.iterations > 0) c.rng_state = sampler.rng().state();
  result.checkpoint = std::move(c);
  return result;
}

}  // namespace pcnn
