#pragma once

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "pcnn/error.hpp"
#include "pcnn/features.hpp"
#include "pcnn/tensor.hpp"

// L2-regularized logistic regression over standardized features.
namespace pcnn {

struct LinearConfig {
  double l2 = 1e-3;
  double learning_rate = 0.5;
  std::size_t max_iters = 2000;
  double tolerance = 1e-6;  // stop when the gradient norm drops below this

  void validate() const {
    if (!(l2 >= 0.0)) fail(ErrorKind::config, "l2 must be non-negative");
    if (!(learning_rate > 0.0)) fail(ErrorKind::config, "linear learning rate must be positive");
    if (!(tolerance >= 0.0)) fail(ErrorKind::config, "tolerance must be non-negative");
  }
};

struct LinearModel {
  std::vector<double> weights;  // over standardized features
  double bias = 0.0;
  std::vector<double> mean, scale;
  std::size_t iterations = 0;

  std::size_t dim() const { return weights.size(); }
};

/// Rows of equal length as an [N,D] matrix.
inline Tensor feature_matrix(std::span<const FeatureVector> features) {
  if (features.empty()) fail(ErrorKind::data, "no feature vectors");
  const std::size_t d = features[0].values.size();
  if (d == 0) fail(ErrorKind::data, "empty feature vector");
  Tensor x({features.size(), d});
  for (std::size_t i = 0; i < features.size(); ++i) {
    if (features[i].values.size() != d) {
      fail(ErrorKind::data, "feature " + std::to_string(i) + " has length " +
                                std::to_string(features[i].values.size()) + ", expected " + std::to_string(d));
    }
    std::copy(features[i].values.begin(), features[i].values.end(), x.data() + i * d);
  }
  return x;
}

inline double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

/// Mean negative log-likelihood plus l2/2 * |w|^2 on already standardized
/// rows. Fills `grad_w` and `grad_b` when non-null.
inline double linear_objective(const Tensor& z, std::span<const int> labels, std::span<const double> w, double b,
                               double l2, std::vector<double>* grad_w = nullptr, double* grad_b = nullptr) {
  const std::size_t n = z.dim(0), d = z.dim(1);
  double loss = 0.0;
  if (grad_w) grad_w->assign(d, 0.0);
  if (grad_b) *grad_b = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = z.data() + i * d;
    double s = b;
    for (std::size_t j = 0; j < d; ++j) s += w[j] * row[j];
    // log(1 + e^s) - y s, computed stably
    loss += (s > 0 ? s + std::log1p(std::exp(-s)) : std::log1p(std::exp(s))) - labels[i] * s;
    const double r = (sigmoid(s) - labels[i]) / static_cast<double>(n);
    if (grad_w) {
      for (std::size_t j = 0; j < d; ++j) (*grad_w)[j] += r * row[j];
    }
    if (grad_b) *grad_b += r;
  }
  loss /= static_cast<double>(n);
  double reg = 0.0;
  for (std::size_t j = 0; j < d; ++j) {
    reg += w[j] * w[j];
    if (grad_w) (*grad_w)[j] += l2 * w[j];
  }
  return loss + 0.5 * l2 * reg;
}

inline Tensor standardize(const Tensor& x, const LinearModel& m) {
  if (x.rank() != 2 || x.dim(1) != m.dim()) {
    fail(ErrorKind::data, "features " + shape_string(x.shape()) + " do not match model width " +
                              std::to_string(m.dim()));
  }
  Tensor z = x;
  const std::size_t n = x.dim(0), d = x.dim(1);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) z[i * d + j] = (x[i * d + j] - m.mean[j]) / m.scale[j];
  }
  return z;
}

/// Nesterov-accelerated gradient descent on the regularized objective.
inline LinearModel train_linear(const Tensor& x, std::span<const int> labels, const LinearConfig& cfg = {}) {
  cfg.validate();
  if (x.rank() != 2) fail(ErrorKind::data, "features must be an [N,D] matrix");
  const std::size_t n = x.dim(0), d = x.dim(1);
  if (labels.size() != n) fail(ErrorKind::data, "feature rows and labels differ in count");
  for (int y : labels) {
    if (y != 0 && y != 1) fail(ErrorKind::label, "labels must be 0 or 1");
  }
  LinearModel m;
  m.weights.assign(d, 0.0);
  m.mean.assign(d, 0.0);
  m.scale.assign(d, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) m.mean[j] += x[i * d + j];
  }
  for (double& v : m.mean) v /= static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) {
      const double c = x[i * d + j] - m.mean[j];
      m.scale[j] += c * c;
    }
  }
  for (double& v : m.scale) {
    v = std::sqrt(v / static_cast<double>(n));
    if (v < 1e-12) v = 1.0;  // constant column
  }
  const Tensor z = standardize(x, m);

  std::vector<double> w(d, 0.0), w_prev(d, 0.0), look(d), g;
  double b = 0.0, b_prev = 0.0, gb = 0.0;
  for (std::size_t it = 1; it <= cfg.max_iters; ++it) {
    const double mom = static_cast<double>(it - 1) / static_cast<double>(it + 2);
    for (std::size_t j = 0; j < d; ++j) look[j] = w[j] + mom * (w[j] - w_prev[j]);
    const double look_b = b + mom * (b - b_prev);
    linear_objective(z, labels, look, look_b, cfg.l2, &g, &gb);
    double norm = gb * gb;
    for (double v : g) norm += v * v;
    m.iterations = it;
    if (std::sqrt(norm) < cfg.tolerance) {
      w = look;
      b = look_b;
      break;
    }
    w_prev = w;
    b_prev = b;
    for (std::size_t j = 0; j < d; ++j) w[j] = look[j] - cfg.learning_rate * g[j];
    b = look_b - cfg.learning_rate * gb;
  }
  m.weights = std::move(w);
  m.bias = b;
  return m;
}

/// [N,2] rows of (P(negative), P(positive)).
inline Tensor predict_linear(const LinearModel& m, const Tensor& x) {
  const Tensor z = standardize(x, m);
  const std::size_t n = z.dim(0), d = z.dim(1);
  Tensor out({n, 2});
  for (std::size_t i = 0; i < n; ++i) {
    double s = m.bias;
    for (std::size_t j = 0; j < d; ++j) s += m.weights[j] * z[i * d + j];
    const double p = sigmoid(s);
    out.at(i, 0) = 1.0 - p;
    out.at(i, 1) = p;
  }
  return out;
}

}  // namespace pcnn
