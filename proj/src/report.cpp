#include "layerfuse/report.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include <fmt/format.h>
#include <fmt/ranges.h>

namespace layerfuse {

TaskCategories default_task_categories() {
  return {{"ESC-50", "SER"}, {"US8K", "SER"},  {"SPCV2", "NOSS"},  {"VC1", "NOSS"},  {"VF", "NOSS"},
          {"CRM-D", "NOSS"}, {"GTZAN", "Music"}, {"NSynth", "Music"}, {"Surge", "Music"}};
}

namespace {

// Tenths of a percent, so that differences of printed values are exact.
long tenths(double fraction) { return std::lround(fraction * 1000.0); }

std::string percent(long t) { return fmt::format("{}{}.{}", t < 0 ? "-" : "", std::labs(t) / 10, std::labs(t) % 10); }

std::string signed_percent(long t) { return (t >= 0 ? "+" : "") + percent(t); }

}  // namespace

std::string render_comparison(const FusionComparison& cmp, const TaskCategories& categories, ReportFormat format) {
  static const std::vector<std::string> kOrder{"SER", "NOSS", "Music"};

  // Task rows exclude the trailing average row.
  std::vector<const ComparisonRow*> task_rows;
  for (std::size_t i = 0; i + 1 < cmp.rows.size(); ++i) task_rows.push_back(&cmp.rows[i]);
  const ComparisonRow& avg = cmp.rows.back();

  auto category_of = [&](const std::string& task) {
    auto it = categories.find(task);
    return it == categories.end() ? std::string("Other") : it->second;
  };
  std::vector<std::string> order = kOrder;
  for (const auto* r : task_rows) {
    const auto c = category_of(r->task);
    if (std::find(order.begin(), order.end(), c) == order.end()) order.push_back(c);
  }
  std::vector<const ComparisonRow*> columns;
  std::vector<std::string> headings;
  for (const auto& c : order) {
    bool first = true;
    for (const auto* r : task_rows) {
      if (category_of(r->task) != c) continue;
      columns.push_back(r);
      headings.push_back(first ? c + " tasks" : "");
      first = false;
    }
  }

  std::vector<std::string> names{"Representation"}, base{cmp.model},
      fused{fmt::format("{}-Fusion#{}#{}", cmp.model, cmp.mid, cmp.late)}, diff{"difference"};
  for (const auto* r : columns) {
    names.push_back(r->task);
    base.push_back(percent(tenths(r->baseline)));
    fused.push_back(percent(tenths(r->fused)));
    diff.push_back(signed_percent(tenths(r->fused) - tenths(r->baseline)));
  }
  names.push_back("Avg.");
  base.push_back(percent(tenths(avg.baseline)));
  fused.push_back(percent(tenths(avg.fused)));
  diff.push_back(signed_percent(tenths(avg.fused) - tenths(avg.baseline)));
  headings.insert(headings.begin(), "");
  headings.push_back("");

  std::string out;
  if (format == ReportFormat::csv) {
    for (const auto* row : {&headings, &names, &base, &fused, &diff}) out += fmt::format("{}\n", fmt::join(*row, ","));
    return out;
  }
  auto line = [](const std::vector<std::string>& cells) { return fmt::format("| {} |\n", fmt::join(cells, " | ")); };
  out += line(headings);
  out += "|---|";
  for (std::size_t i = 1; i < names.size(); ++i) out += "---:|";
  out += '\n';
  out += line(names);
  out += line(base);
  out += line(fused);
  out += line(diff);
  out += fmt::format("\nBaseline: layer {} of {}. Fused: layers {} (mid) and {} (late).\n", cmp.baseline_layer,
                     cmp.model, cmp.mid, cmp.late);
  return out;
}

}  // namespace layerfuse
