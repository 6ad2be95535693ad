#include "layerfuse/scan.hpp"

#include <algorithm>
#include <atomic>
#include <mutex>
#include <numeric>
#include <sstream>

#include <fmt/format.h>
#include <fmt/ranges.h>
#include <spdlog/spdlog.h>

#include "fs_util.hpp"
#include "layerfuse/error.hpp"
#include "layerfuse/parallel.hpp"

namespace layerfuse {

using nlohmann::json;

AccuracyMatrix::AccuracyMatrix(std::string model, std::vector<LayerId> layers, std::vector<std::string> tasks)
    : model_(std::move(model)), layers_(std::move(layers)), tasks_(std::move(tasks)),
      cells_(layers_.size() * tasks_.size()) {}

std::size_t AccuracyMatrix::layer_index(const LayerId& layer) const {
  auto it = std::find(layers_.begin(), layers_.end(), layer);
  if (it == layers_.end()) throw ConfigError(fmt::format("matrix has no layer '{}'", layer));
  return static_cast<std::size_t>(it - layers_.begin());
}

std::size_t AccuracyMatrix::task_index(const std::string& task) const {
  auto it = std::find(tasks_.begin(), tasks_.end(), task);
  if (it == tasks_.end()) throw ConfigError(fmt::format("matrix has no task '{}'", task));
  return static_cast<std::size_t>(it - tasks_.begin());
}

std::optional<double> AccuracyMatrix::cell(const LayerId& layer, const std::string& task) const {
  return cell(layer_index(layer), task_index(task));
}

void AccuracyMatrix::set(std::size_t layer, std::size_t task, double accuracy) {
  if (!(accuracy >= 0.0 && accuracy <= 1.0)) {
    throw DataError(fmt::format("accuracy {} for {}/{} outside [0, 1]", accuracy, layers_.at(layer), tasks_.at(task)));
  }
  cells_.at(layer * tasks_.size() + task) = accuracy;
}

void AccuracyMatrix::set(const LayerId& layer, const std::string& task, double accuracy) {
  set(layer_index(layer), task_index(task), accuracy);
}

bool AccuracyMatrix::complete() const {
  return std::all_of(cells_.begin(), cells_.end(), [](const auto& c) { return c.has_value(); });
}

std::vector<std::string> AccuracyMatrix::missing_cells() const {
  std::vector<std::string> out;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    for (std::size_t t = 0; t < tasks_.size(); ++t) {
      if (!cell(l, t)) out.push_back(fmt::format("{}/{}", layers_[l], tasks_[t]));
    }
  }
  return out;
}

void AccuracyMatrix::require_complete() const {
  if (const auto missing = missing_cells(); !missing.empty()) {
    throw IncompleteError(fmt::format("accuracy matrix is missing {} cell(s): {}", missing.size(), fmt::join(missing, ", ")));
  }
}

std::string AccuracyMatrix::to_csv() const {
  std::string out = fmt::format("layer,{}\n", fmt::join(tasks_, ","));
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    out += layers_[l];
    for (std::size_t t = 0; t < tasks_.size(); ++t) {
      const auto c = cell(l, t);
      out += c ? fmt::format(",{:.6f}", *c) : ",";
    }
    out += '\n';
  }
  return out;
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream ss(line);
  while (std::getline(ss, field, ',')) out.push_back(field);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

}  // namespace

AccuracyMatrix AccuracyMatrix::from_csv(const std::string& text, const std::string& model) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw DataError("accuracy matrix CSV is empty");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  auto header = split_csv_line(line);
  if (header.size() < 2 || header.front() != "layer") throw DataError("accuracy matrix CSV must start with 'layer,'");
  std::vector<std::string> tasks(header.begin() + 1, header.end());

  std::vector<LayerId> layers;
  std::vector<std::vector<std::string>> rows;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto fields = split_csv_line(line);
    if (fields.size() != header.size()) {
      throw DataError(fmt::format("accuracy matrix row '{}' has {} fields, expected {}", fields.front(), fields.size(),
                                  header.size()));
    }
    layers.push_back(fields.front());
    rows.push_back(std::move(fields));
  }
  AccuracyMatrix m(model, layers, tasks);
  for (std::size_t l = 0; l < rows.size(); ++l) {
    for (std::size_t t = 0; t < tasks.size(); ++t) {
      const auto& f = rows[l][t + 1];
      if (f.empty()) continue;
      try {
        m.set(l, t, std::stod(f));
      } catch (const std::logic_error&) {
        throw DataError(fmt::format("accuracy matrix cell {}/{} is not a number: '{}'", layers[l], tasks[t], f));
      }
    }
  }
  return m;
}

std::string AccuracyMatrix::to_markdown() const {
  std::string out = fmt::format("| Layer | {} |\n|---|", fmt::join(tasks_, " | "));
  for (std::size_t t = 0; t < tasks_.size(); ++t) out += "---:|";
  out += '\n';
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    out += fmt::format("| {} |", layers_[l]);
    for (std::size_t t = 0; t < tasks_.size(); ++t) {
      const auto c = cell(l, t);
      out += c ? fmt::format(" {:.1f} |", *c * 100.0) : " |";
    }
    out += '\n';
  }
  return out;
}

TaskGroups TaskGroups::with_default_late(const std::vector<std::string>& tasks) {
  static const std::set<std::string> kLate{"ESC-50", "US8K", "GTZAN"};
  TaskGroups g;
  for (const auto& t : tasks) (kLate.contains(t) ? g.late : g.mid).insert(t);
  return g;
}

void TaskGroups::validate(const std::vector<std::string>& tasks) const {
  if (mid.empty()) throw ConfigError("task group M (mid-layer tasks) is empty");
  if (late.empty()) throw ConfigError("task group L (late-layer tasks) is empty");
  for (const auto& t : mid) {
    if (late.contains(t)) throw ConfigError(fmt::format("task '{}' is in both groups", t));
  }
  const std::set<std::string> all(tasks.begin(), tasks.end());
  for (const auto& t : tasks) {
    if (!mid.contains(t) && !late.contains(t)) throw ConfigError(fmt::format("task '{}' is in neither group", t));
  }
  for (const auto* g : {&mid, &late}) {
    for (const auto& t : *g) {
      if (!all.contains(t)) throw ConfigError(fmt::format("grouped task '{}' is not in the matrix", t));
    }
  }
}

json LayerSelection::to_json() const {
  return json{{"M", mid}, {"L", late}, {"layers", layers}, {"group_M_means", mid_means}, {"group_L_means", late_means}};
}

LayerSelection select_layers(const AccuracyMatrix& matrix, const TaskGroups& groups) {
  matrix.require_complete();
  groups.validate(matrix.tasks());
  if (matrix.layers().empty()) throw ConfigError("accuracy matrix has no layers");

  auto group_means = [&](const std::set<std::string>& group) {
    std::vector<double> means;
    for (std::size_t l = 0; l < matrix.layers().size(); ++l) {
      double sum = 0.0;
      for (const auto& task : group) sum += *matrix.cell(l, matrix.task_index(task));
      means.push_back(sum / static_cast<double>(group.size()));
    }
    return means;
  };
  auto argmax = [](const std::vector<double>& v) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < v.size(); ++i) {
      if (v[i] > v[best]) best = i;
    }
    return best;
  };

  LayerSelection s;
  s.layers = matrix.layers();
  s.mid_means = group_means(groups.mid);
  s.late_means = group_means(groups.late);
  s.mid = s.layers[argmax(s.mid_means)];
  s.late = s.layers[argmax(s.late_means)];
  return s;
}

std::filesystem::path cell_path(const ScanOptions& options, const std::string& model, const std::string& task,
                                const std::string& name) {
  for (const auto* part : {&model, &task, &name}) {
    if (part->empty() || part->find('/') != std::string::npos || *part == "." || *part == "..") {
      throw ConfigError(fmt::format("'{}' cannot be used as a results path component", *part));
    }
  }
  return options.results_dir / model / task / (name + ".json");
}

namespace {

std::optional<ProbeOutcome> read_record(const std::filesystem::path& path, const std::string& config_hash) {
  if (!std::filesystem::exists(path)) return std::nullopt;
  try {
    const json j = json::parse(detail::read_text(path));
    if (j.value("config_hash", "") != config_hash) return std::nullopt;
    return ProbeOutcome::from_json(j);
  } catch (const std::exception& e) {
    spdlog::warn("ignoring unreadable result record {}: {}", path.string(), e.what());
    return std::nullopt;
  }
}

ProbeOutcome probe_and_record(const TaskManifest& task, std::span<const LayerId> layers, const ProbeConfig& config,
                              const std::filesystem::path& path) {
  ProbeConfig single = config;
  single.workers = 1;
  const auto outcome = evaluate(compose_embeddings(task, layers, 1), single);
  json j = outcome.to_json();
  j["model"] = task.model.name;
  j["task"] = task.task;
  j["layers"] = std::vector<LayerId>(layers.begin(), layers.end());
  j["config_hash"] = config.hash();
  j["config"] = config.to_json();
  detail::atomic_write(path, j.dump(2) + "\n");
  return outcome;
}

const ModelLayout& common_layout(const std::vector<TaskManifest>& tasks) {
  if (tasks.empty()) throw ConfigError("no tasks given");
  const auto& first = tasks.front().model;
  std::set<std::string> names;
  for (const auto& t : tasks) {
    if (!names.insert(t.task).second) throw ConfigError(fmt::format("duplicate task name '{}'", t.task));
    bool same = t.model.name == first.name && t.model.layers.size() == first.layers.size();
    for (std::size_t i = 0; same && i < first.layers.size(); ++i) same = t.model.layers[i].id == first.layers[i].id;
    if (!same) {
      throw ConfigError(fmt::format("task '{}' uses a different model layout than task '{}'", t.task,
                                    tasks.front().task));
    }
  }
  return first;
}

}  // namespace

AccuracyMatrix load_scan(const ModelLayout& layout, const std::vector<std::string>& tasks, const ProbeConfig& config,
                         const ScanOptions& options) {
  std::vector<LayerId> layers;
  for (const auto& r : layout.layers) layers.push_back(r.id);
  AccuracyMatrix matrix(layout.name, layers, tasks);
  const auto hash = config.hash();
  for (std::size_t l = 0; l < layers.size(); ++l) {
    for (std::size_t t = 0; t < tasks.size(); ++t) {
      if (auto rec = read_record(cell_path(options, layout.name, tasks[t], layers[l]), hash)) {
        matrix.set(l, t, rec->test_accuracy);
      }
    }
  }
  return matrix;
}

ScanResult run_scan(const std::vector<TaskManifest>& tasks, const ProbeConfig& config, const ScanOptions& options) {
  config.validate();
  const auto& layout = common_layout(tasks);

  std::vector<std::string> absent;
  for (const auto& task : tasks) {
    for (const auto& record : layout.layers) {
      try {
        check_manifest_files(task, {record.id});
      } catch (const DataError&) {
        absent.push_back(fmt::format("{}/{}", record.id, task.task));
      }
    }
  }
  if (!absent.empty()) throw DataError(fmt::format("scan data missing for cells: {}", fmt::join(absent, ", ")));

  std::vector<std::string> task_names;
  for (const auto& t : tasks) task_names.push_back(t.task);
  ScanResult result{load_scan(layout, task_names, config, options), 0};

  struct Job {
    std::size_t layer;
    std::size_t task;
  };
  std::vector<Job> jobs;
  for (std::size_t l = 0; l < layout.layers.size(); ++l) {
    for (std::size_t t = 0; t < tasks.size(); ++t) {
      if (!result.matrix.cell(l, t)) jobs.push_back({l, t});
    }
  }

  std::mutex matrix_mutex;
  std::atomic<std::size_t> done{0};
  parallel_for(jobs.size(), options.workers, [&](std::size_t i) {
    const auto [l, t] = jobs[i];
    const auto& layer = layout.layers[l].id;
    const std::vector<LayerId> single{layer};
    const auto outcome =
        probe_and_record(tasks[t], single, config, cell_path(options, layout.name, tasks[t].task, layer));
    std::lock_guard lock(matrix_mutex);
    result.matrix.set(l, t, outcome.test_accuracy);
    spdlog::info("[{}/{}] layer {} task {}: {:.4f} (lr {})", ++done, jobs.size(), layer, tasks[t].task,
                 outcome.test_accuracy, outcome.chosen_lr);
  });
  result.probes_run = jobs.size();
  return result;
}

FusionComparison compare_fusion(const std::vector<TaskManifest>& tasks, const LayerId& mid, const LayerId& late,
                                const LayerId& baseline_layer, const ProbeConfig& config,
                                const ScanOptions& options) {
  config.validate();
  const auto& layout = common_layout(tasks);
  for (const auto* l : {&mid, &late, &baseline_layer}) layout.position(*l);

  FusionComparison cmp{layout.name, mid, late, baseline_layer, {}};
  cmp.rows.resize(tasks.size());
  const auto hash = config.hash();
  const std::string fused_name = fmt::format("fusion-{}+{}", mid, late);

  // Two probes per task: baseline then fused.
  parallel_for(tasks.size() * 2, options.workers, [&](std::size_t i) {
    const auto& task = tasks[i / 2];
    const bool fused = i % 2 == 1;
    const auto path = cell_path(options, layout.name, task.task, fused ? fused_name : baseline_layer);
    auto outcome = read_record(path, hash);
    if (!outcome) {
      const std::vector<LayerId> layers = fused ? std::vector<LayerId>{mid, late} : std::vector<LayerId>{baseline_layer};
      outcome = probe_and_record(task, layers, config, path);
    }
    auto& row = cmp.rows[i / 2];
    row.task = task.task;
    (fused ? row.fused : row.baseline) = outcome->test_accuracy;
  });

  ComparisonRow avg{"Avg.", 0.0, 0.0, 0.0};
  for (auto& row : cmp.rows) {
    row.difference = row.fused - row.baseline;
    avg.baseline += row.baseline;
    avg.fused += row.fused;
  }
  avg.baseline /= static_cast<double>(tasks.size());
  avg.fused /= static_cast<double>(tasks.size());
  avg.difference = avg.fused - avg.baseline;
  cmp.rows.push_back(avg);
  return cmp;
}

}  // namespace layerfuse
