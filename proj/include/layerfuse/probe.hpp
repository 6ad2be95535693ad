#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "layerfuse/composer.hpp"

namespace layerfuse {

/// Linear-evaluation settings. Defaults follow the evaluation protocol:
/// Adam, patience 20, at most 200 epochs, three seeds, LR swept over
/// [1e-5, 1e-2].
struct ProbeConfig {
  std::vector<double> learning_rates{1e-5, 3e-5, 1e-4, 3e-4, 1e-3, 3e-3, 1e-2};
  std::size_t max_epochs = 200;
  std::size_t patience = 20;
  std::size_t batch_size = 256;
  std::vector<std::uint64_t> seeds{0, 1, 2};
  bool standardize = true;
  // Parallel (LR, seed) runs inside one evaluate() call.
  std::size_t workers = 1;

  /// Throws ConfigError on a violated invariant.
  void validate() const;
  /// Canonical form; `workers` is excluded since it cannot change results.
  nlohmann::json to_json() const;
  static ProbeConfig from_json(const nlohmann::json& j);
  /// Stable 16-hex-digit digest of to_json().
  std::string hash() const;
};

/// Dense softmax-regression parameters; weights are row-major classes x dims.
struct LinearModel {
  std::size_t dims = 0;
  std::size_t classes = 0;
  std::vector<double> weights;
  std::vector<double> bias;

  LinearModel() = default;
  LinearModel(std::size_t dims, std::size_t classes)
      : dims(dims), classes(classes), weights(dims * classes, 0.0), bias(classes, 0.0) {}

  std::size_t predict(std::span<const double> x) const;
};

/// Row-major feature matrix with integer class labels, in 64-bit floats.
struct Dataset {
  std::size_t dims = 0;
  std::vector<double> features;
  std::vector<std::size_t> labels;

  std::size_t size() const noexcept { return labels.size(); }
  std::span<const double> row(std::size_t i) const { return std::span(features).subspan(i * dims, dims); }
};

/// Mean cross-entropy over the given rows and its gradient with respect to
/// the model parameters (same layout as LinearModel).
struct LossGradient {
  double loss = 0.0;
  std::vector<double> weights;
  std::vector<double> bias;
};
LossGradient cross_entropy_gradient(const LinearModel& model, const Dataset& data, std::span<const std::size_t> rows);
double cross_entropy(const LinearModel& model, const Dataset& data);
double accuracy(const LinearModel& model, const Dataset& data);

/// EmbeddingSet split into train/valid/test with a shared class index and
/// (optionally) z-scored with training statistics.
struct PreparedSplits {
  std::vector<std::string> classes;  // sorted label names
  Dataset train;
  Dataset valid;
  Dataset test;
};
PreparedSplits prepare_splits(const EmbeddingSet& features, bool standardize);

struct TrainResult {
  LinearModel model;  // parameters from the best validation epoch
  std::vector<double> valid_curve;
  std::size_t best_epoch = 0;  // 1-based
  std::size_t epochs_run = 0;
  double best_valid_accuracy = 0.0;
  double best_valid_loss = 0.0;
  bool diverged = false;  // training hit a non-finite loss
};

/// Mini-batch Adam on softmax cross-entropy, zero init, early stopping on
/// validation accuracy (ties go to lower validation loss).
TrainResult train_linear(const PreparedSplits& data, const ProbeConfig& config, double learning_rate,
                         std::uint64_t seed);

struct ProbeOutcome {
  double test_accuracy = 0.0;
  std::vector<double> per_seed_accuracies;
  double chosen_lr = 0.0;
  std::vector<std::size_t> epochs_run;
  std::vector<double> valid_curve;  // seed[0] run at chosen_lr
  std::vector<std::pair<double, double>> lr_sweep;  // (lr, best validation accuracy)
  std::vector<double> diverged_lrs;

  nlohmann::json to_json() const;
  static ProbeOutcome from_json(const nlohmann::json& j);
};

/// LR sweep with seeds[0], best validation accuracy wins (tie -> smaller LR),
/// then one run per seed at that LR; test accuracy is the seed mean.
ProbeOutcome evaluate(const EmbeddingSet& features, const ProbeConfig& config);

/// Per-sample test-split predictions of the model trained at `lr` with `seed`.
std::vector<std::size_t> predict_test(const EmbeddingSet& features, const ProbeConfig& config, double lr,
                                      std::uint64_t seed);

}  // namespace layerfuse
