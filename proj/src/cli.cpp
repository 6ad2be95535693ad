#include "layerfuse/cli.hpp"

#include <algorithm>
#include <filesystem>
#include <optional>
#include <ostream>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <fmt/ranges.h>
#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "fs_util.hpp"
#include "layerfuse/composer.hpp"
#include "layerfuse/error.hpp"
#include "layerfuse/probe.hpp"
#include "layerfuse/report.hpp"
#include "layerfuse/scan.hpp"

namespace layerfuse {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Flag values as given on the command line; empty means "not given".
struct Flags {
  std::string config;
  std::string out;
  std::size_t workers = 0;
  std::optional<std::uint64_t> seed;
  std::string model;
  std::vector<std::string> tasks;
  std::string mid;
  std::string late;
  std::string baseline;
  std::string embeddings;
  std::string matrix;
  std::vector<std::string> late_tasks;
  std::string format = "md";
};

// Config file merged with flag overrides.
struct RunConfig {
  std::optional<fs::path> model;
  std::vector<fs::path> tasks;
  ProbeConfig probe;
  std::optional<TaskGroups> groups;
  fs::path out = "results";
  std::size_t workers = 1;
  std::optional<LayerId> mid;
  std::optional<LayerId> late;
  std::optional<LayerId> baseline;
  TaskCategories categories = default_task_categories();
};

fs::path require_file(const fs::path& p) {
  if (!fs::exists(p)) throw ConfigError(fmt::format("file not found: {}", p.string()));
  return p;
}

std::optional<LayerId> json_layer(const json& j, const char* key) {
  if (!j.contains(key) || j[key].is_null()) return std::nullopt;
  return j[key].is_string() ? j[key].get<std::string>() : j[key].dump();
}

RunConfig resolve(const Flags& flags) {
  RunConfig rc;
  if (!flags.config.empty()) {
    const fs::path path = require_file(flags.config);
    const fs::path base = path.parent_path();
    json j;
    try {
      j = json::parse(detail::read_text(path));
      if (j.contains("model")) rc.model = base / j["model"].get<std::string>();
      for (const auto& t : j.value("tasks", std::vector<std::string>{})) rc.tasks.push_back(base / t);
      if (j.contains("probe")) rc.probe = ProbeConfig::from_json(j["probe"]);
      if (j.contains("groups")) {
        TaskGroups g;
        for (const auto& t : j["groups"].value("mid", std::vector<std::string>{})) g.mid.insert(t);
        for (const auto& t : j["groups"].value("late", std::vector<std::string>{})) g.late.insert(t);
        rc.groups = g;
      }
      if (j.contains("out")) rc.out = base / j["out"].get<std::string>();
      rc.workers = j.value("workers", rc.workers);
      if (j.contains("seed")) {
        const auto s = j["seed"].get<std::uint64_t>();
        for (std::size_t i = 0; i < rc.probe.seeds.size(); ++i) rc.probe.seeds[i] = s + i;
      }
      rc.mid = json_layer(j, "M");
      rc.late = json_layer(j, "L");
      rc.baseline = json_layer(j, "baseline_layer");
      for (const auto& [task, cat] : j.value("categories", json::object()).items()) rc.categories[task] = cat.get<std::string>();
    } catch (const json::exception& e) {
      throw ConfigError(fmt::format("{}: {}", path.string(), e.what()));
    }
  }
  if (!flags.model.empty()) rc.model = flags.model;
  if (!flags.tasks.empty()) rc.tasks.assign(flags.tasks.begin(), flags.tasks.end());
  if (!flags.out.empty()) rc.out = flags.out;
  if (flags.workers > 0) rc.workers = flags.workers;
  if (flags.seed) {
    for (std::size_t i = 0; i < rc.probe.seeds.size(); ++i) rc.probe.seeds[i] = *flags.seed + i;
  }
  if (!flags.mid.empty()) rc.mid = flags.mid;
  if (!flags.late.empty()) rc.late = flags.late;
  if (!flags.baseline.empty()) rc.baseline = flags.baseline;
  if (!flags.late_tasks.empty()) {
    TaskGroups g;
    g.late.insert(flags.late_tasks.begin(), flags.late_tasks.end());
    rc.groups = g;  // mid group is completed from the task list later
  }
  rc.probe.workers = rc.workers;
  rc.probe.validate();
  if (rc.model) require_file(*rc.model);
  for (const auto& t : rc.tasks) require_file(t);
  return rc;
}

std::vector<TaskManifest> load_tasks(const RunConfig& rc) {
  if (rc.tasks.empty()) throw ConfigError("no task manifests given (--task or \"tasks\" in --config)");
  std::optional<ModelLayout> layout;
  if (rc.model) layout = load_layout(*rc.model);
  std::vector<TaskManifest> tasks;
  for (const auto& t : rc.tasks) tasks.push_back(load_manifest(t, layout));
  return tasks;
}

TaskGroups resolve_groups(const RunConfig& rc, const std::vector<std::string>& task_names) {
  if (!rc.groups) return TaskGroups::with_default_late(task_names);
  TaskGroups g = *rc.groups;
  if (g.mid.empty()) {
    for (const auto& t : task_names) {
      if (!g.late.contains(t)) g.mid.insert(t);
    }
  }
  return g;
}

std::string sanitize(std::string s) {
  std::replace_if(s.begin(), s.end(), [](char c) { return c == '/' || c == ' '; }, '_');
  return s;
}

int cmd_compose(const RunConfig& rc, std::ostream& out) {
  if (rc.tasks.size() != 1) throw ConfigError("compose takes exactly one --task");
  if (!rc.mid) throw ConfigError("compose needs -M");
  const auto tasks = load_tasks(rc);
  const auto& task = tasks.front();
  std::vector<LayerId> layers{*rc.mid};
  if (rc.late && *rc.late != *rc.mid) {
    layers.push_back(*rc.late);
  } else if (rc.late) {
    spdlog::warn("M == L ({}): composing single-layer embeddings without fusion", *rc.mid);
  }
  for (const auto& l : layers) task.model.position(l);
  const auto set = compose_embeddings(task, layers, rc.workers);
  const auto stem = rc.out / "embeddings" / sanitize(fmt::format("{}_{}_{}", task.task, task.model.name, fmt::join(layers, "_")));
  set.save(stem);
  spdlog::info("D={} N={}", set.dims, set.rows());
  out << fmt::format("D={} N={}\n{}.npy\n", set.dims, set.rows(), stem.string());
  return kExitOk;
}

int cmd_probe(const RunConfig& rc, const Flags& flags, std::ostream& out) {
  EmbeddingSet set;
  if (!flags.embeddings.empty()) {
    fs::path stem = flags.embeddings;
    if (stem.extension() == ".npy" || stem.extension() == ".json") stem.replace_extension();
    auto npy = stem;
    npy += ".npy";
    require_file(npy);
    set = EmbeddingSet::load(stem);
  } else {
    if (rc.tasks.size() != 1 || !rc.mid) throw ConfigError("probe needs --embeddings, or one --task with -M [-L]");
    const auto tasks = load_tasks(rc);
    std::vector<LayerId> layers{*rc.mid};
    if (rc.late && *rc.late != *rc.mid) layers.push_back(*rc.late);
    set = compose_embeddings(tasks.front(), layers, rc.workers);
  }
  const auto outcome = evaluate(set, rc.probe);
  json j = outcome.to_json();
  j["task"] = set.task;
  j["model"] = set.model;
  j["layers"] = set.provenance;
  const auto path = rc.out / "probe" / sanitize(fmt::format("{}_{}_{}.json", set.task, set.model, fmt::join(set.provenance, "_")));
  detail::atomic_write(path, j.dump(2) + "\n");
  out << fmt::format("task={} layers={} accuracy={:.4f} lr={}\n", set.task, fmt::join(set.provenance, "+"),
                     outcome.test_accuracy, outcome.chosen_lr);
  return kExitOk;
}

int cmd_scan(const RunConfig& rc, std::ostream& out) {
  const auto tasks = load_tasks(rc);
  const auto result = run_scan(tasks, rc.probe, {rc.out, rc.workers});
  const auto dir = rc.out / tasks.front().model.name;
  const auto csv = result.matrix.to_csv();
  detail::atomic_write(dir / "matrix.csv", csv);
  detail::atomic_write(dir / "matrix.md", result.matrix.to_markdown());
  spdlog::info("scan: {} probe(s) run, {} cached", result.probes_run,
               result.matrix.layers().size() * result.matrix.tasks().size() - result.probes_run);
  out << csv;
  return kExitOk;
}

AccuracyMatrix matrix_from_results(const RunConfig& rc, std::vector<TaskManifest>& tasks) {
  tasks = load_tasks(rc);
  std::vector<std::string> names;
  for (const auto& t : tasks) names.push_back(t.task);
  return load_scan(tasks.front().model, names, rc.probe, {rc.out, rc.workers});
}

int cmd_select(const RunConfig& rc, const Flags& flags, std::ostream& out) {
  AccuracyMatrix matrix;
  fs::path dest;
  if (!flags.matrix.empty()) {
    matrix = AccuracyMatrix::from_csv(detail::read_text(require_file(flags.matrix)));
    if (!flags.out.empty()) dest = rc.out / "selection.json";
  } else {
    std::vector<TaskManifest> tasks;
    matrix = matrix_from_results(rc, tasks);
    dest = rc.out / matrix.model() / "selection.json";
  }
  matrix.require_complete();
  const auto selection = select_layers(matrix, resolve_groups(rc, matrix.tasks()));
  if (selection.mid == selection.late) spdlog::warn("selected M and L coincide (layer {})", selection.mid);
  if (!dest.empty()) detail::atomic_write(dest, selection.to_json().dump(2) + "\n");
  out << fmt::format("M={} L={}\n", selection.mid, selection.late);
  return kExitOk;
}

int cmd_report(const RunConfig& rc, const Flags& flags, std::ostream& out) {
  ReportFormat format;
  if (flags.format == "md") {
    format = ReportFormat::markdown;
  } else if (flags.format == "csv") {
    format = ReportFormat::csv;
  } else {
    throw ConfigError(fmt::format("unknown report format '{}' (md|csv)", flags.format));
  }
  std::vector<TaskManifest> tasks;
  const auto matrix = matrix_from_results(rc, tasks);
  matrix.require_complete();
  const auto& layout = tasks.front().model;

  auto mid = rc.mid;
  auto late = rc.late;
  if (!mid || !late) {
    const auto selection_path = rc.out / layout.name / "selection.json";
    if (!fs::exists(selection_path)) {
      throw IncompleteError(fmt::format("no -M/-L given and no selection at {}; run `select` first", selection_path.string()));
    }
    const auto j = json::parse(detail::read_text(selection_path));
    if (!mid) mid = j.at("M").get<std::string>();
    if (!late) late = j.at("L").get<std::string>();
  }
  const LayerId baseline = rc.baseline.value_or(layout.layers.back().id);
  const auto cmp = compare_fusion(tasks, *mid, *late, baseline, rc.probe, {rc.out, rc.workers});
  const auto text = render_comparison(cmp, rc.categories, format);
  detail::atomic_write(rc.out / layout.name / (format == ReportFormat::csv ? "report.csv" : "report.md"), text);
  out << text;
  return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Compose multi-layer audio embeddings and run linear-probe layer scans", "layerfuse"};
  app.require_subcommand(1);
  app.fallthrough();
  Flags flags;
  app.add_option("--config", flags.config, "JSON run configuration");
  app.add_option("--out", flags.out, "Output / results directory (default: results)");
  app.add_option("--workers", flags.workers, "Worker threads")->check(CLI::PositiveNumber);
  app.add_option("--seed", flags.seed, "Base seed; runs use seed, seed+1, ...");

  auto* compose = app.add_subcommand("compose", "Write fused (or single-layer) embeddings for one task");
  auto* probe = app.add_subcommand("probe", "Linear-probe an embedding set");
  auto* scan = app.add_subcommand("scan", "Probe every layer on every task");
  auto* select = app.add_subcommand("select", "Choose the mid (M) and late (L) layers");
  auto* report = app.add_subcommand("report", "Baseline vs fused accuracy table");
  for (auto* sub : {compose, probe, scan, select, report}) {
    sub->add_option("--model", flags.model, "Model layout JSON");
    sub->add_option("--task", flags.tasks, "Task manifest JSON (repeatable)");
  }
  for (auto* sub : {compose, probe, report}) {
    sub->add_option("-M,--mid", flags.mid, "Middle layer id");
    sub->add_option("-L,--late", flags.late, "Late layer id");
  }
  probe->add_option("--embeddings", flags.embeddings, "Embedding set written by compose (.npy or stem)");
  select->add_option("--matrix", flags.matrix, "Accuracy matrix CSV instead of the results directory");
  select->add_option("--late-tasks", flags.late_tasks, "Tasks of the late-layer group (repeatable)");
  report->add_option("--late-tasks", flags.late_tasks, "Tasks of the late-layer group (repeatable)");
  report->add_option("--baseline", flags.baseline, "Baseline layer (default: last layer)");
  report->add_option("--format", flags.format, "md or csv")->check(CLI::IsMember({"md", "csv"}));

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    const RunConfig rc = resolve(flags);
    if (*compose) return cmd_compose(rc, out);
    if (*probe) return cmd_probe(rc, flags, out);
    if (*scan) return cmd_scan(rc, out);
    if (*select) return cmd_select(rc, flags, out);
    return cmd_report(rc, flags, out);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const IncompleteError& e) {
    err << "incomplete: " << e.what() << '\n';
    return kExitIncomplete;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << '\n';
    return kExitData;
  } catch (const std::exception& e) {
    err << "data error: " << e.what() << '\n';
    return kExitData;
  }
}

}  // namespace layerfuse
