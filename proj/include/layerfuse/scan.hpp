#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "layerfuse/layout.hpp"
#include "layerfuse/probe.hpp"

namespace layerfuse {

/// Layer x task grid of probe test accuracies (fractions in [0, 1]).
class AccuracyMatrix {
 public:
  AccuracyMatrix() = default;
  AccuracyMatrix(std::string model, std::vector<LayerId> layers, std::vector<std::string> tasks);

  const std::string& model() const noexcept { return model_; }
  const std::vector<LayerId>& layers() const noexcept { return layers_; }
  const std::vector<std::string>& tasks() const noexcept { return tasks_; }

  std::optional<double> cell(std::size_t layer, std::size_t task) const { return cells_.at(layer * tasks_.size() + task); }
  std::optional<double> cell(const LayerId& layer, const std::string& task) const;
  void set(std::size_t layer, std::size_t task, double accuracy);
  void set(const LayerId& layer, const std::string& task, double accuracy);

  bool complete() const;
  /// "layer/task" for every empty cell, row-major.
  std::vector<std::string> missing_cells() const;
  /// Throws IncompleteError listing the missing cells.
  void require_complete() const;

  /// "layer,<task>..." header then one row per layer, 6 decimals, empty for
  /// missing cells.
  std::string to_csv() const;
  static AccuracyMatrix from_csv(const std::string& text, const std::string& model = "");
  /// Percentages with one decimal.
  std::string to_markdown() const;

  std::size_t layer_index(const LayerId& layer) const;
  std::size_t task_index(const std::string& task) const;

 private:
  std::string model_;
  std::vector<LayerId> layers_;
  std::vector<std::string> tasks_;
  std::vector<std::optional<double>> cells_;
};

/// Tasks favouring late layers (`late`) and the rest (`mid`).
struct TaskGroups {
  std::set<std::string> mid;
  std::set<std::string> late;

  /// `late` = tasks among {ESC-50, US8K, GTZAN}, `mid` = every other task.
  static TaskGroups with_default_late(const std::vector<std::string>& tasks);
  /// Throws ConfigError unless the groups are non-empty, disjoint and cover
  /// exactly `tasks`.
  void validate(const std::vector<std::string>& tasks) const;
};

struct LayerSelection {
  LayerId mid;
  LayerId late;
  std::vector<LayerId> layers;
  std::vector<double> mid_means;
  std::vector<double> late_means;

  nlohmann::json to_json() const;
};

/// Per-layer unweighted mean over each group, argmax per group, ties to the
/// earlier layer. M and L may coincide.
LayerSelection select_layers(const AccuracyMatrix& matrix, const TaskGroups& groups);

struct ScanOptions {
  std::filesystem::path results_dir = "results";
  std::size_t workers = 1;
};

struct ScanResult {
  AccuracyMatrix matrix;
  std::size_t probes_run = 0;  // cells computed in this call (not cached)
};

/// results/<model>/<task>/<name>.json
std::filesystem::path cell_path(const ScanOptions& options, const std::string& model, const std::string& task,
                                const std::string& name);

/// Probe every (layer, task) on single-layer embeddings. Cells whose record
/// exists with a matching config hash are reused; new records are written
/// atomically as they finish. Missing layer data aborts before any probe
/// with a DataError listing the absent cells.
ScanResult run_scan(const std::vector<TaskManifest>& tasks, const ProbeConfig& config, const ScanOptions& options);

/// Matrix assembled from cached records only; cells without a record stay
/// empty.
AccuracyMatrix load_scan(const ModelLayout& layout, const std::vector<std::string>& tasks,
                         const ProbeConfig& config, const ScanOptions& options);

struct ComparisonRow {
  std::string task;
  double baseline = 0.0;
  double fused = 0.0;
  double difference = 0.0;
};

struct FusionComparison {
  std::string model;
  LayerId mid;
  LayerId late;
  LayerId baseline_layer;
  std::vector<ComparisonRow> rows;  // one per task, then the average row
};

/// Baseline (single layer) vs fused (mid, late) accuracy per task plus an
/// unweighted average row. Results are cached next to the scan records.
FusionComparison compare_fusion(const std::vector<TaskManifest>& tasks, const LayerId& mid, const LayerId& late,
                                const LayerId& baseline_layer, const ProbeConfig& config,
                                const ScanOptions& options);

}  // namespace layerfuse
