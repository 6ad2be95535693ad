#include "layerfuse/probe.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <random>

#include <fmt/format.h>

#include "layerfuse/error.hpp"
#include "layerfuse/parallel.hpp"

namespace layerfuse {

using nlohmann::json;

void ProbeConfig::validate() const {
  if (learning_rates.empty()) throw ConfigError("probe: learning_rates must not be empty");
  for (double lr : learning_rates) {
    if (!(lr >= 1e-5 && lr <= 1e-2)) {
      throw ConfigError(fmt::format("probe: learning rate {} outside [1e-5, 1e-2]", lr));
    }
  }
  if (max_epochs == 0) throw ConfigError("probe: max_epochs must be positive");
  if (patience == 0 || patience > max_epochs) throw ConfigError("probe: need 0 < patience <= max_epochs");
  if (batch_size == 0) throw ConfigError("probe: batch_size must be positive");
  if (seeds.empty()) throw ConfigError("probe: seeds must not be empty");
  if (workers == 0) throw ConfigError("probe: workers must be >= 1");
}

json ProbeConfig::to_json() const {
  return json{{"learning_rates", learning_rates}, {"max_epochs", max_epochs}, {"patience", patience},
              {"batch_size", batch_size},         {"seeds", seeds},           {"standardize", standardize}};
}

ProbeConfig ProbeConfig::from_json(const json& j) {
  ProbeConfig c;
  try {
    c.learning_rates = j.value("learning_rates", c.learning_rates);
    c.max_epochs = j.value("max_epochs", c.max_epochs);
    c.patience = j.value("patience", c.patience);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.seeds = j.value("seeds", c.seeds);
    c.standardize = j.value("standardize", c.standardize);
    c.workers = j.value("workers", c.workers);
  } catch (const json::exception& e) {
    throw ConfigError(fmt::format("probe config: {}", e.what()));
  }
  c.validate();
  return c;
}

std::string ProbeConfig::hash() const {
  // FNV-1a over the canonical dump (nlohmann sorts object keys).
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : to_json().dump()) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return fmt::format("{:016x}", h);
}

std::size_t LinearModel::predict(std::span<const double> x) const {
  std::size_t best = 0;
  double best_score = -std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < classes; ++k) {
    const double* w = weights.data() + k * dims;
    double s = bias[k];
    for (std::size_t d = 0; d < dims; ++d) s += w[d] * x[d];
    if (s > best_score) {
      best_score = s;
      best = k;
    }
  }
  return best;
}

namespace {

// Returns -log softmax(logits)[label] and overwrites logits with softmax.
double softmax_nll(std::vector<double>& logits, std::size_t label) {
  const double peak = *std::max_element(logits.begin(), logits.end());
  double norm = 0.0;
  for (double& v : logits) {
    v = std::exp(v - peak);
    norm += v;
  }
  for (double& v : logits) v /= norm;
  return -std::log(logits[label]);
}

void scores(const LinearModel& m, std::span<const double> x, std::vector<double>& out) {
  out.resize(m.classes);
  for (std::size_t k = 0; k < m.classes; ++k) {
    const double* w = m.weights.data() + k * m.dims;
    double s = m.bias[k];
    for (std::size_t d = 0; d < m.dims; ++d) s += w[d] * x[d];
    out[k] = s;
  }
}

}  // namespace

LossGradient cross_entropy_gradient(const LinearModel& model, const Dataset& data, std::span<const std::size_t> rows) {
  LossGradient g;
  g.weights.assign(model.weights.size(), 0.0);
  g.bias.assign(model.classes, 0.0);
  if (rows.empty()) return g;
  std::vector<double> p;
  for (std::size_t i : rows) {
    const auto x = data.row(i);
    scores(model, x, p);
    g.loss += softmax_nll(p, data.labels[i]);
    p[data.labels[i]] -= 1.0;
    for (std::size_t k = 0; k < model.classes; ++k) {
      double* gw = g.weights.data() + k * model.dims;
      for (std::size_t d = 0; d < model.dims; ++d) gw[d] += p[k] * x[d];
      g.bias[k] += p[k];
    }
  }
  const double inv = 1.0 / static_cast<double>(rows.size());
  g.loss *= inv;
  for (double& v : g.weights) v *= inv;
  for (double& v : g.bias) v *= inv;
  return g;
}

double cross_entropy(const LinearModel& model, const Dataset& data) {
  if (data.size() == 0) return 0.0;
  std::vector<double> p;
  double loss = 0.0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    scores(model, data.row(i), p);
    loss += softmax_nll(p, data.labels[i]);
  }
  return loss / static_cast<double>(data.size());
}

double accuracy(const LinearModel& model, const Dataset& data) {
  if (data.size() == 0) return 0.0;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < data.size(); ++i) hits += model.predict(data.row(i)) == data.labels[i];
  return static_cast<double>(hits) / static_cast<double>(data.size());
}

PreparedSplits prepare_splits(const EmbeddingSet& features, bool standardize) {
  PreparedSplits out;
  out.classes = features.labels;
  std::sort(out.classes.begin(), out.classes.end());
  out.classes.erase(std::unique(out.classes.begin(), out.classes.end()), out.classes.end());
  std::map<std::string, std::size_t> index;
  for (std::size_t k = 0; k < out.classes.size(); ++k) index[out.classes[k]] = k;

  const std::size_t dims = features.dims;
  for (Dataset* d : {&out.train, &out.valid, &out.test}) d->dims = dims;
  for (std::size_t i = 0; i < features.rows(); ++i) {
    Dataset& dst = features.splits[i] == Split::train ? out.train
                   : features.splits[i] == Split::valid ? out.valid
                                                        : out.test;
    const auto row = features.row(i);
    dst.features.insert(dst.features.end(), row.begin(), row.end());
    dst.labels.push_back(index.at(features.labels[i]));
  }
  for (auto [name, d] : {std::pair{"train", &out.train}, std::pair{"valid", &out.valid}, std::pair{"test", &out.test}}) {
    if (d->size() == 0) throw DataError(fmt::format("task '{}': empty {} split", features.task, name));
  }
  std::vector<bool> seen(out.classes.size(), false);
  for (auto y : out.train.labels) seen[y] = true;
  if (std::count(seen.begin(), seen.end(), true) < 2) {
    throw DataError(fmt::format("task '{}': train split needs at least 2 classes", features.task));
  }

  if (standardize) {
    const std::size_t n = out.train.size();
    std::vector<double> mean(dims, 0.0), var(dims, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      const auto x = out.train.row(i);
      for (std::size_t d = 0; d < dims; ++d) mean[d] += x[d];
    }
    for (double& m : mean) m /= static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
      const auto x = out.train.row(i);
      for (std::size_t d = 0; d < dims; ++d) var[d] += (x[d] - mean[d]) * (x[d] - mean[d]);
    }
    std::vector<double> scale(dims);
    for (std::size_t d = 0; d < dims; ++d) scale[d] = std::max(std::sqrt(var[d] / static_cast<double>(n)), 1e-8);
    for (Dataset* ds : {&out.train, &out.valid, &out.test}) {
      for (std::size_t i = 0; i < ds->size(); ++i) {
        for (std::size_t d = 0; d < dims; ++d) {
          double& v = ds->features[i * dims + d];
          v = (v - mean[d]) / scale[d];
        }
      }
    }
  }
  return out;
}

TrainResult train_linear(const PreparedSplits& data, const ProbeConfig& config, double learning_rate,
                         std::uint64_t seed) {
  constexpr double kBeta1 = 0.9;
  constexpr double kBeta2 = 0.999;
  constexpr double kEpsilon = 1e-8;

  const std::size_t dims = data.train.dims;
  const std::size_t classes = data.classes.size();
  LinearModel model(dims, classes);
  std::vector<double> m_w(model.weights.size(), 0.0), v_w(model.weights.size(), 0.0);
  std::vector<double> m_b(classes, 0.0), v_b(classes, 0.0);

  TrainResult result;
  result.model = model;
  result.best_valid_accuracy = accuracy(model, data.valid);
  result.best_valid_loss = cross_entropy(model, data.valid);
  bool have_best = false;

  std::mt19937_64 rng(seed);
  std::vector<std::size_t> order(data.train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::size_t step = 0;

  auto adam = [&](std::vector<double>& param, const std::vector<double>& grad, std::vector<double>& m,
                  std::vector<double>& v, double c1, double c2) {
    for (std::size_t i = 0; i < param.size(); ++i) {
      m[i] = kBeta1 * m[i] + (1.0 - kBeta1) * grad[i];
      v[i] = kBeta2 * v[i] + (1.0 - kBeta2) * grad[i] * grad[i];
      param[i] -= learning_rate * (m[i] / c1) / (std::sqrt(v[i] / c2) + kEpsilon);
    }
  };

  for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
    // Fisher-Yates with raw engine output keeps the order identical across
    // standard library implementations.
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng() % i]);

    for (std::size_t begin = 0; begin < order.size() && !result.diverged; begin += config.batch_size) {
      const std::size_t end = std::min(order.size(), begin + config.batch_size);
      const auto g = cross_entropy_gradient(model, data.train, std::span(order).subspan(begin, end - begin));
      if (!std::isfinite(g.loss)) {
        result.diverged = true;
        break;
      }
      ++step;
      const double c1 = 1.0 - std::pow(kBeta1, static_cast<double>(step));
      const double c2 = 1.0 - std::pow(kBeta2, static_cast<double>(step));
      adam(model.weights, g.weights, m_w, v_w, c1, c2);
      adam(model.bias, g.bias, m_b, v_b, c1, c2);
    }
    if (result.diverged) break;

    result.epochs_run = epoch;
    const double acc = accuracy(model, data.valid);
    const double loss = cross_entropy(model, data.valid);
    if (!std::isfinite(loss)) {
      result.diverged = true;
      break;
    }
    result.valid_curve.push_back(acc);
    if (!have_best || acc > result.best_valid_accuracy ||
        (acc == result.best_valid_accuracy && loss < result.best_valid_loss)) {
      have_best = true;
      result.model = model;
      result.best_epoch = epoch;
      result.best_valid_accuracy = acc;
      result.best_valid_loss = loss;
    } else if (epoch - result.best_epoch >= config.patience) {
      break;
    }
  }
  return result;
}

json ProbeOutcome::to_json() const {
  json sweep = json::array();
  for (const auto& [lr, acc] : lr_sweep) sweep.push_back({{"lr", lr}, {"valid_accuracy", acc}});
  return json{{"accuracy", test_accuracy}, {"per_seed", per_seed_accuracies}, {"lr", chosen_lr},
              {"epochs", epochs_run},      {"valid_curve", valid_curve},      {"lr_sweep", sweep},
              {"diverged_lrs", diverged_lrs}};
}

ProbeOutcome ProbeOutcome::from_json(const json& j) {
  ProbeOutcome o;
  o.test_accuracy = j.at("accuracy").get<double>();
  o.per_seed_accuracies = j.at("per_seed").get<std::vector<double>>();
  o.chosen_lr = j.at("lr").get<double>();
  o.epochs_run = j.at("epochs").get<std::vector<std::size_t>>();
  o.valid_curve = j.value("valid_curve", std::vector<double>{});
  for (const auto& s : j.value("lr_sweep", json::array())) {
    o.lr_sweep.emplace_back(s.at("lr").get<double>(), s.at("valid_accuracy").get<double>());
  }
  o.diverged_lrs = j.value("diverged_lrs", std::vector<double>{});
  return o;
}

ProbeOutcome evaluate(const EmbeddingSet& features, const ProbeConfig& config) {
  config.validate();
  const PreparedSplits data = prepare_splits(features, config.standardize);

  std::vector<double> lrs = config.learning_rates;
  std::sort(lrs.begin(), lrs.end());
  lrs.erase(std::unique(lrs.begin(), lrs.end()), lrs.end());

  std::vector<TrainResult> sweep(lrs.size());
  parallel_for(lrs.size(), config.workers,
               [&](std::size_t i) { sweep[i] = train_linear(data, config, lrs[i], config.seeds.front()); });

  ProbeOutcome outcome;
  std::optional<std::size_t> chosen;
  for (std::size_t i = 0; i < lrs.size(); ++i) {
    if (sweep[i].diverged) {
      outcome.diverged_lrs.push_back(lrs[i]);
      continue;
    }
    outcome.lr_sweep.emplace_back(lrs[i], sweep[i].best_valid_accuracy);
    // Strict comparison keeps the smaller LR on ties.
    if (!chosen || sweep[i].best_valid_accuracy > sweep[*chosen].best_valid_accuracy) chosen = i;
  }
  if (!chosen) throw DataError(fmt::format("task '{}': every learning rate diverged", features.task));
  outcome.chosen_lr = lrs[*chosen];

  std::vector<TrainResult> runs(config.seeds.size());
  runs[0] = std::move(sweep[*chosen]);
  parallel_for(config.seeds.size() - 1, config.workers,
               [&](std::size_t i) { runs[i + 1] = train_linear(data, config, outcome.chosen_lr, config.seeds[i + 1]); });

  for (const auto& r : runs) {
    outcome.per_seed_accuracies.push_back(accuracy(r.model, data.test));
    outcome.epochs_run.push_back(r.epochs_run);
  }
  outcome.valid_curve = runs.front().valid_curve;
  outcome.test_accuracy =
      std::accumulate(outcome.per_seed_accuracies.begin(), outcome.per_seed_accuracies.end(), 0.0) /
      static_cast<double>(outcome.per_seed_accuracies.size());
  return outcome;
}

std::vector<std::size_t> predict_test(const EmbeddingSet& features, const ProbeConfig& config, double lr,
                                      std::uint64_t seed) {
  const PreparedSplits data = prepare_splits(features, config.standardize);
  const auto result = train_linear(data, config, lr, seed);
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < data.test.size(); ++i) out.push_back(result.model.predict(data.test.row(i)));
  return out;
}

}  // namespace layerfuse
