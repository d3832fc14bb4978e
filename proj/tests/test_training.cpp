#include <gtest/gtest.h>

#include <set>
#include <sstream>

#include "gradcheck.hpp"
#include "support.hpp"

using namespace pcnn;
using namespace pcnn::testing;

namespace {

Gradients constant_grads(const Checkpoint& c, double v) {
  Gradients g;
  for (const auto& [name, t] : c.params) g.emplace(name, Tensor(t.shape(), v));
  return g;
}

// Two features in a [2,1,1] "image", separable by x0 + x1 > 1, fed through
// a two-layer fully connected network.
Dataset separable_toy(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  Dataset d;
  while (d.size() < n) {
    const double a = rng.uniform(), b = rng.uniform();
    if (std::abs(a + b - 1.0) < 0.1) continue;  // margin band
    Sample s;
    s.id = "p" + std::to_string(d.size());
    s.pixels = Tensor({2, 1, 1}, std::vector<double>{a, b});
    s.label = a + b > 1.0 ? 1 : 0;
    d.samples.push_back(std::move(s));
  }
  return d;
}

NetworkSpec toy_spec() {
  NetworkSpec s;
  s.channels = 2;
  s.height = s.width = 1;
  s.layers = {LayerSpec::fc(8), LayerSpec::relu(), LayerSpec::fc(2)};
  return s;
}

}  // namespace

TEST(Loss, UniformPredictorCostsLn2) {
  const ScoreMatrix p({2, 2}, 0.5);
  const std::vector<int> y = {0, 1};
  EXPECT_NEAR(logistic_loss(p, y), std::log(2.0), 1e-15);
}

TEST(Loss, CertainTruePredictionCostsNothing) {
  const ScoreMatrix p({1, 2}, std::vector<double>{0.0, 1.0});
  const std::vector<int> y = {1};
  EXPECT_LT(logistic_loss(p, y), 1e-11);
}

TEST(Loss, Substitution) {
  const ScoreMatrix p({1, 2}, std::vector<double>{0.25, 0.75});
  const std::vector<int> y = {1};
  EXPECT_NEAR(logistic_loss(p, y), -std::log(0.75), 1e-15);
}

TEST(Loss, FloorKeepsCertainMistakesFinite) {
  const ScoreMatrix p({1, 2}, std::vector<double>{1.0, 0.0});
  const std::vector<int> y = {1};
  EXPECT_NEAR(logistic_loss(p, y), -std::log(probability_floor), 1e-9);
}

TEST(Loss, LabelOutsideBinaryIsLabelError) {
  const ScoreMatrix p({1, 2}, 0.5);
  const std::vector<int> y = {2};
  EXPECT_EQ(error_kind_of([&] { logistic_loss(p, y); }), ErrorKind::label);
}

TEST(LossGradient, PerfectPredictionIsZero) {
  const ScoreMatrix p({2, 2}, std::vector<double>{1, 0, 0, 1});
  const std::vector<int> y = {0, 1};
  const Tensor g = loss_gradient(p, y);
  for (double v : g.values()) EXPECT_EQ(v, 0.0);
}

TEST(LossGradient, Substitution) {
  const ScoreMatrix p({1, 2}, 0.5);
  const std::vector<int> y = {1};
  EXPECT_EQ(loss_gradient(p, y), Tensor({1, 2}, std::vector<double>{0.5, -0.5}));
}

TEST(Sgd, PlainStep) {
  Rng rng(1);
  const Checkpoint c = build_architecture("2CONV-3FC", Profile::desk, rng);
  const Checkpoint next = sgd_step(c, constant_grads(c, 0.5), {0.1, 0.0, 0.0, 0});
  for (const auto& [name, t] : c.params) {
    const Tensor& u = next.params.at(name);
    for (std::size_t i = 0; i < t.size(); ++i) {
      EXPECT_EQ(u[i], static_cast<double>(static_cast<float>(t[i] + static_cast<float>(-0.05))));
    }
  }
  EXPECT_EQ(next.iteration, c.iteration + 1);
}

TEST(Sgd, ZeroGradZeroVelocityLeavesParams) {
  Rng rng(2);
  const Checkpoint c = build_architecture("2CONV-3FC", Profile::desk, rng);
  const Checkpoint next = sgd_step(c, constant_grads(c, 0.0), {0.1, 0.9, 0.0, 0});
  EXPECT_EQ(next.params, c.params);
}

TEST(Sgd, MomentumRecurrenceOverTwoSteps) {
  Rng rng(3);
  Checkpoint c = build_architecture("2CONV-3FC", Profile::desk, rng);
  const double lr = 0.01, g = 0.25;
  const SgdSettings s{lr, 0.9, 0.0, 0};
  const Gradients grads = constant_grads(c, g);
  const Checkpoint one = sgd_step(c, grads, s);
  const Checkpoint two = sgd_step(one, grads, s);
  for (const auto& [name, t] : one.params) {
    const Tensor& u = two.params.at(name);
    for (std::size_t i = 0; i < t.size(); ++i) {
      // float32 storage: allow one ulp-scale slack on the parameter value
      EXPECT_NEAR(u[i] - t[i], -lr * g * 1.9, 1e-6) << name;
    }
  }
}

TEST(Sgd, WeightDecayPullsTowardZero) {
  Rng rng(4);
  const Checkpoint c = build_architecture("2CONV-3FC", Profile::desk, rng);
  const Checkpoint next = sgd_step(c, constant_grads(c, 0.0), {0.1, 0.0, 0.5, 0});
  const Tensor& a = c.param("fc1.weight");
  const Tensor& b = next.param("fc1.weight");
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(b[i], a[i] * 0.95, 1e-6);
}

TEST(Sgd, FrozenLayersStayFixed) {
  Rng rng(5);
  const Checkpoint c = build_architecture("2CONV-4FC", Profile::desk, rng);
  const Checkpoint next = sgd_step(c, constant_grads(c, 1.0), {0.1, 0.0, 0.0, 2});
  EXPECT_EQ(next.param("conv1.weight"), c.param("conv1.weight"));
  EXPECT_EQ(next.param("conv2.bias"), c.param("conv2.bias"));
  EXPECT_NE(next.param("fc1.weight"), c.param("fc1.weight"));
}

TEST(Sgd, MissingGradientIsShapeError) {
  Rng rng(6);
  const Checkpoint c = build_architecture("2CONV-3FC", Profile::desk, rng);
  Gradients g = constant_grads(c, 0.0);
  g.erase("fc1.bias");
  EXPECT_EQ(error_kind_of([&] { sgd_step(c, g, {}); }), ErrorKind::shape);
  g = constant_grads(c, 0.0);
  g["fc1.bias"] = Tensor({3});
  EXPECT_EQ(error_kind_of([&] { sgd_step(c, g, {}); }), ErrorKind::shape);
}

TEST(Schedule, StepDecayEveryFortyPercent) {
  TrainConfig cfg;
  cfg.iterations = 100;
  cfg.learning_rate = 0.01;
  EXPECT_EQ(cfg.effective_decay_interval(), 40u);
  EXPECT_DOUBLE_EQ(cfg.rate_at(0), 0.01);
  EXPECT_DOUBLE_EQ(cfg.rate_at(39), 0.01);
  EXPECT_DOUBLE_EQ(cfg.rate_at(40), 0.001);
  EXPECT_NEAR(cfg.rate_at(80), 1e-4, 1e-18);
  EXPECT_DOUBLE_EQ(cfg.fine_tune_schedule(30).learning_rate, 0.001);
  EXPECT_EQ(cfg.fine_tune_schedule(30).iterations, 30u);
}

TEST(Schedule, InvalidSettingsAreConfigErrors) {
  TrainConfig cfg;
  cfg.momentum = 1.0;
  EXPECT_EQ(error_kind_of([&] { cfg.validate(); }), ErrorKind::config);
  cfg = {};
  cfg.batch_size = 0;
  EXPECT_EQ(error_kind_of([&] { cfg.validate(); }), ErrorKind::config);
  cfg = {};
  cfg.learning_rate = 0.0;
  EXPECT_EQ(error_kind_of([&] { cfg.validate(); }), ErrorKind::config);
}

TEST(Sampler, EveryEpochVisitsEachSampleOnce) {
  EpochSampler s(23, 5, Rng(7));
  for (int epoch = 0; epoch < 3; ++epoch) {
    std::multiset<std::size_t> seen;
    while (seen.size() < 23) {
      for (std::size_t i : s.next()) seen.insert(i);
    }
    ASSERT_EQ(seen.size(), 23u);
    for (std::size_t i = 0; i < 23; ++i) EXPECT_EQ(seen.count(i), 1u);
    EXPECT_EQ(s.epoch(), static_cast<std::size_t>(epoch));
  }
}

TEST(Sampler, EmptyDatasetIsDataError) {
  EXPECT_EQ(error_kind_of([] { EpochSampler(0, 4, Rng(1)); }), ErrorKind::data);
}

TEST(Batch, CentresPixels) {
  Dataset d = small_synthetic(3, 1);
  const std::vector<std::size_t> idx = {2, 0};
  const NetworkSpec spec = family_spec("2CONV-3FC", Profile::desk);
  const Tensor b = make_batch(d, idx, spec);
  EXPECT_EQ(b.shape(), (Shape{2, 3, 32, 32}));
  EXPECT_EQ(b[0], (*d.samples[2].pixels)[0] - 0.5);
  EXPECT_EQ(b[3 * 32 * 32], (*d.samples[0].pixels)[0] - 0.5);
}

TEST(Train, ZeroBudgetLeavesCheckpoint) {
  Rng rng(8);
  const Checkpoint c = build_architecture("2CONV-3FC", Profile::desk, rng);
  TrainConfig cfg;
  cfg.iterations = 0;
  const TrainResult r = train(c, small_synthetic(10, 2), cfg);
  EXPECT_EQ(r.checkpoint, c);
  EXPECT_TRUE(r.history.empty());
}

TEST(Train, EmptyDatasetIsDataError) {
  Rng rng(9);
  const Checkpoint c = build_architecture("2CONV-3FC", Profile::desk, rng);
  EXPECT_EQ(error_kind_of([&] { train(c, Dataset{}, TrainConfig{}); }), ErrorKind::data);
}

TEST(Train, SameSeedBitIdentical) {
  Rng rng(10);
  const Checkpoint c = build_architecture("2CONV-4FC", Profile::desk, rng);
  const Dataset d = small_synthetic(40, 3);
  TrainConfig cfg;
  cfg.iterations = 12;
  cfg.batch_size = 8;
  cfg.log_interval = 5;
  const TrainResult a = train(c, d, cfg), b = train(c, d, cfg);
  EXPECT_EQ(a.checkpoint, b.checkpoint);
  EXPECT_EQ(a.checkpoint.iteration, 12u);
  cfg.seed = 2;
  EXPECT_NE(train(c, d, cfg).checkpoint, a.checkpoint);
}

TEST(Train, HistoryIterationsStrictlyIncrease) {
  Rng rng(11);
  const Checkpoint c = build_architecture("2CONV-3FC", Profile::desk, rng);
  const Dataset d = small_synthetic(30, 4);
  TrainConfig cfg;
  cfg.iterations = 13;
  cfg.batch_size = 8;
  cfg.log_interval = 5;
  const TrainResult r = train(c, d, cfg, {&d});
  ASSERT_EQ(r.history.size(), 3u);
  EXPECT_EQ(r.history[0].iteration, 5u);
  EXPECT_EQ(r.history[1].iteration, 10u);
  EXPECT_EQ(r.history[2].iteration, 13u);
  for (const auto& h : r.history) EXPECT_TRUE(h.eval_accuracy.has_value());

  std::ostringstream os;
  write_history_csv(os, r.history);
  std::istringstream is(os.str());
  std::string line;
  std::getline(is, line);
  EXPECT_EQ(line, "iteration,loss,learning_rate,eval_accuracy");
  std::size_t rows = 0;
  while (std::getline(is, line)) ++rows;
  EXPECT_EQ(rows, 3u);
}

TEST(Train, SeparableToyReachesFullAccuracy) {
  Rng rng(12);
  const Checkpoint c = build_network(toy_spec(), rng);
  const Dataset d = separable_toy(200, 13);
  TrainConfig cfg;
  cfg.iterations = 500;
  cfg.batch_size = 16;
  cfg.learning_rate = 0.1;
  cfg.weight_decay = 0.0;
  cfg.decay_interval = 1000;
  const TrainResult r = train(c, d, cfg);
  const double acc = accuracy(score_dataset(r.checkpoint, d), d.labels());
  EXPECT_GE(acc, 0.99);

  // the closed-form separator classifies the same data perfectly
  std::size_t agree = 0;
  for (const auto& s : d.samples) agree += ((*s.pixels)[0] + (*s.pixels)[1] > 1.0 ? 1 : 0) == *s.label;
  EXPECT_EQ(agree, d.size());
}

TEST(Score, PartitionedEqualsOneShot) {
  Rng rng(14);
  const Checkpoint c = build_architecture("2CONV-4FC", Profile::desk, rng);
  const Dataset d = small_synthetic(21, 5);
  EXPECT_EQ(score_dataset(c, d, 4), score_dataset(c, d, 64));
}

TEST(Score, DuplicatedImageGivesIdenticalRows) {
  Rng rng(15);
  const Checkpoint c = build_architecture("2CONV-3FC", Profile::desk, rng);
  Dataset d = small_synthetic(1, 6);
  d.samples.push_back(d.samples[0]);
  const ScoreMatrix s = score_dataset(c, d);
  EXPECT_EQ(s.at(0, 0), s.at(1, 0));
  EXPECT_EQ(s.at(0, 1), s.at(1, 1));
  EXPECT_NEAR(s.at(0, 0) + s.at(0, 1), 1.0, 1e-12);
}

TEST(Score, GeometryMismatchIsShapeError) {
  Rng rng(16);
  const Checkpoint c = build_architecture("2CONV-3FC", Profile::desk, rng);
  SyntheticConfig sc;
  sc.count = 2;
  sc.side = 16;
  const Dataset d = generate_synthetic(sc);
  EXPECT_EQ(error_kind_of([&] { score_dataset(c, d); }), ErrorKind::shape);
}

TEST(Predictions, TiesGoToClassZero) {
  const ScoreMatrix s({3, 2}, std::vector<double>{0.5, 0.5, 0.4, 0.6, 0.7, 0.3});
  EXPECT_EQ(predictions(s), (std::vector<int>{0, 1, 0}));
  const std::vector<int> y = {0, 1, 1};
  EXPECT_NEAR(accuracy(s, y), 2.0 / 3.0, 1e-15);
}
