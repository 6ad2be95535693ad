#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <random>

#include "layerfuse/error.hpp"
#include "layerfuse/probe.hpp"
#include "oracles.hpp"

using namespace layerfuse;

namespace {

ProbeConfig quick_config() {
  ProbeConfig c;
  c.learning_rates = {1e-3, 1e-2};
  c.max_epochs = 60;
  c.patience = 10;
  return c;
}

Dataset random_dataset(std::size_t n, std::size_t dims, std::size_t classes, std::mt19937_64& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  Dataset d;
  d.dims = dims;
  for (std::size_t i = 0; i < n * dims; ++i) d.features.push_back(g(rng));
  for (std::size_t i = 0; i < n; ++i) d.labels.push_back(rng() % classes);
  return d;
}

}  // namespace

TEST(CrossEntropy, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(21);
  std::normal_distribution<double> g(0.0, 0.5);
  constexpr double h = 1e-5;
  for (int instance = 0; instance < 100; ++instance) {
    const std::size_t dims = 1 + rng() % 6, classes = 2 + rng() % 4, n = 1 + rng() % 8;
    const Dataset data = random_dataset(n, dims, classes, rng);
    LinearModel m(dims, classes);
    for (auto& w : m.weights) w = g(rng);
    for (auto& b : m.bias) b = g(rng);
    std::vector<std::size_t> rows(n);
    std::iota(rows.begin(), rows.end(), std::size_t{0});
    const auto grad = cross_entropy_gradient(m, data, rows);
    EXPECT_NEAR(grad.loss, testkit::cross_entropy_oracle(m.weights, m.bias, dims, data), 1e-12);

    auto check = [&](std::vector<double>& params, const std::vector<double>& analytic) {
      for (std::size_t i = 0; i < params.size(); ++i) {
        const double saved = params[i];
        params[i] = saved + h;
        const double up = testkit::cross_entropy_oracle(m.weights, m.bias, dims, data);
        params[i] = saved - h;
        const double down = testkit::cross_entropy_oracle(m.weights, m.bias, dims, data);
        params[i] = saved;
        const double fd = (up - down) / (2 * h);
        const double rel = std::abs(fd - analytic[i]) / std::max({std::abs(fd), std::abs(analytic[i]), 1e-3});
        ASSERT_LT(rel, 1e-4) << "instance " << instance << " param " << i;
      }
    };
    check(m.weights, grad.weights);
    check(m.bias, grad.bias);
  }
}

TEST(Probe, SeparableTwoClassReachesPerfectTrainAccuracy) {
  // Two well-separated blobs: a max-margin direction exists, so the probe
  // must fit the training split exactly.
  const auto set = testkit::make_blobs(2, 4, 100, 8.0, 5);
  const auto data = prepare_splits(set, true);
  ProbeConfig c = quick_config();
  const auto r = train_linear(data, c, 1e-2, 0);
  EXPECT_EQ(accuracy(r.model, data.train), 1.0);
  EXPECT_FALSE(r.diverged);
}

TEST(Probe, IdenticalFeaturesGiveChance) {
  EmbeddingSet set;
  set.task = "const";
  set.dims = 3;
  for (std::size_t i = 0; i < 400; ++i) {
    set.values.insert(set.values.end(), {1.0f, 2.0f, 3.0f});
    set.ids.push_back(std::to_string(i));
    set.labels.push_back(i % 2 ? "a" : "b");
    set.splits.push_back(i < 200 ? Split::train : i < 300 ? Split::valid : Split::test);
  }
  const auto out = evaluate(set, quick_config());
  EXPECT_NEAR(out.test_accuracy, 0.5, 0.1);
}

TEST(Probe, BlobsAreLearned) {
  const auto set = testkit::make_blobs(3, 16, 300, 5.0, 9);
  const auto out = evaluate(set, quick_config());
  EXPECT_GE(out.test_accuracy, 0.99);
  EXPECT_EQ(out.per_seed_accuracies.size(), 3u);
  EXPECT_EQ(out.lr_sweep.size(), 2u);
}

TEST(Probe, PermutedLabelsFallToChance) {
  auto set = testkit::make_blobs(4, 8, 200, 5.0, 13);
  std::mt19937_64 rng(3);
  std::shuffle(set.labels.begin(), set.labels.end(), rng);
  const auto out = evaluate(set, quick_config());
  // 160 test rows: chance 0.25, sigma ~ 0.034.
  EXPECT_NEAR(out.test_accuracy, 0.25, 0.11);
}

TEST(Probe, DuplicatedDimensionsTrainIdenticalCopies) {
  // Both copies of a column see the same gradient, so their weights stay
  // equal. Adam's per-coordinate step makes the pair move like one weight
  // with twice the learning rate while the bias does not, so predictions
  // agree closely but not necessarily exactly.
  const auto set = testkit::make_blobs(3, 4, 100, 3.0, 17);
  EmbeddingSet doubled = set;
  doubled.dims = 8;
  doubled.values.clear();
  for (std::size_t i = 0; i < set.rows(); ++i) {
    const auto r = set.row(i);
    doubled.values.insert(doubled.values.end(), r.begin(), r.end());
    doubled.values.insert(doubled.values.end(), r.begin(), r.end());
  }
  const auto c = quick_config();
  const auto r = train_linear(prepare_splits(doubled, true), c, 1e-3, 0);
  for (std::size_t k = 0; k < r.model.classes; ++k)
    for (std::size_t d = 0; d < 4; ++d) EXPECT_EQ(r.model.weights[k * 8 + d], r.model.weights[k * 8 + d + 4]);

  const auto a = predict_test(set, c, 1e-3, 0);
  const auto b = predict_test(doubled, c, 1e-3, 0);
  std::size_t agree = 0;
  for (std::size_t i = 0; i < a.size(); ++i) agree += a[i] == b[i];
  EXPECT_GE(static_cast<double>(agree) / static_cast<double>(a.size()), 0.95);
}

TEST(Probe, FeaturePermutationKeepsPredictions) {
  const auto set = testkit::make_blobs(3, 6, 100, 2.0, 37);
  std::vector<std::size_t> perm{3, 0, 5, 1, 4, 2};
  EmbeddingSet shuffled = set;
  for (std::size_t i = 0; i < set.rows(); ++i)
    for (std::size_t d = 0; d < 6; ++d) shuffled.values[i * 6 + d] = set.values[i * 6 + perm[d]];
  const auto c = quick_config();
  const auto a = predict_test(set, c, 1e-3, 0);
  const auto b = predict_test(shuffled, c, 1e-3, 0);
  std::size_t agree = 0;
  for (std::size_t i = 0; i < a.size(); ++i) agree += a[i] == b[i];
  // Only the summation order of dot products changes.
  EXPECT_GE(static_cast<double>(agree) / static_cast<double>(a.size()), 0.99);
}

TEST(Probe, DeterministicForFixedSeeds) {
  const auto set = testkit::make_blobs(3, 6, 80, 2.0, 19);
  auto c = quick_config();
  const auto a = evaluate(set, c).to_json().dump();
  c.workers = 3;
  const auto b = evaluate(set, c).to_json().dump();
  EXPECT_EQ(a, b);
}

TEST(Probe, StandardizationRemovesPowerOfTwoScaling) {
  const auto set = testkit::make_blobs(3, 5, 80, 2.0, 23);
  EmbeddingSet scaled = set;
  for (std::size_t i = 0; i < scaled.values.size(); ++i) {
    scaled.values[i] = std::ldexp(scaled.values[i], static_cast<int>(i % 5) * 3 - 6);
  }
  const auto c = quick_config();
  EXPECT_EQ(evaluate(set, c).to_json().dump(), evaluate(scaled, c).to_json().dump());
}

TEST(Probe, TrainingRowPermutationBarelyMatters) {
  const auto set = testkit::make_blobs(3, 6, 150, 4.0, 29);
  EmbeddingSet permuted = set;
  std::vector<std::size_t> order(set.rows());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(1);
  std::shuffle(order.begin(), order.end(), rng);
  permuted.values.clear();
  permuted.ids.clear();
  permuted.labels.clear();
  permuted.splits.clear();
  for (auto i : order) {
    const auto r = set.row(i);
    permuted.values.insert(permuted.values.end(), r.begin(), r.end());
    permuted.ids.push_back(set.ids[i]);
    permuted.labels.push_back(set.labels[i]);
    permuted.splits.push_back(set.splits[i]);
  }
  const auto c = quick_config();
  EXPECT_NEAR(evaluate(set, c).test_accuracy, evaluate(permuted, c).test_accuracy, 0.02);
}

TEST(Probe, EarlyStoppingBound) {
  const auto set = testkit::make_blobs(4, 8, 100, 1.0, 31);
  const auto data = prepare_splits(set, true);
  auto c = quick_config();
  c.max_epochs = 200;
  c.patience = 5;
  for (double lr : {1e-3, 1e-2}) {
    const auto r = train_linear(data, c, lr, 0);
    EXPECT_LE(r.epochs_run, r.best_epoch + c.patience);
    EXPECT_GE(r.best_epoch, 1u);
    EXPECT_EQ(r.valid_curve.size(), r.epochs_run);
    EXPECT_EQ(r.best_valid_accuracy, *std::max_element(r.valid_curve.begin(), r.valid_curve.end()));
  }
}

TEST(Probe, SplitValidation) {
  auto set = testkit::make_blobs(2, 2, 10, 1.0, 1);
  for (auto& s : set.splits)
    if (s == Split::test) s = Split::train;
  EXPECT_THROW(evaluate(set, quick_config()), DataError);

  auto one_class = testkit::make_blobs(2, 2, 10, 1.0, 1);
  for (auto& l : one_class.labels) l = "same";
  EXPECT_THROW(evaluate(one_class, quick_config()), DataError);
}

TEST(ProbeConfig, ValidationAndHash) {
  ProbeConfig c;
  EXPECT_NO_THROW(c.validate());
  EXPECT_EQ(c.hash().size(), 16u);

  ProbeConfig w = c;
  w.workers = 8;
  EXPECT_EQ(w.hash(), c.hash());
  ProbeConfig p = c;
  p.patience = 5;
  EXPECT_NE(p.hash(), c.hash());

  EXPECT_THROW(ProbeConfig::from_json({{"learning_rates", {0.5}}}), ConfigError);
  EXPECT_THROW(ProbeConfig::from_json({{"patience", 0}}), ConfigError);
  EXPECT_THROW(ProbeConfig::from_json({{"max_epochs", "many"}}), ConfigError);
  EXPECT_EQ(ProbeConfig::from_json(c.to_json()).hash(), c.hash());
}

TEST(ProbeOutcome, JsonRoundTrip) {
  ProbeOutcome o;
  o.test_accuracy = 0.75;
  o.per_seed_accuracies = {0.7, 0.8, 0.75};
  o.chosen_lr = 1e-3;
  o.epochs_run = {30, 40, 35};
  o.valid_curve = {0.5, 0.6};
  o.lr_sweep = {{1e-3, 0.6}};
  o.diverged_lrs = {1e-2};
  EXPECT_EQ(ProbeOutcome::from_json(o.to_json()).to_json(), o.to_json());
}
