#pragma once

#include <map>
#include <string>

#include "layerfuse/scan.hpp"

namespace layerfuse {

/// Task -> heading ("SER", "NOSS", "Music"). Unknown tasks fall under "Other".
using TaskCategories = std::map<std::string, std::string>;

/// ESC-50/US8K -> SER; SPCV2/VC1/VF/CRM-D -> NOSS; GTZAN/NSynth/Surge -> Music.
TaskCategories default_task_categories();

enum class ReportFormat { markdown, csv };

/// Before/after table: task columns grouped under their category headings
/// plus "Avg.", rows for the baseline, the fused representation and their
/// difference, all in percent with one decimal. The difference row is
/// computed from the printed values so it is exact as displayed.
std::string render_comparison(const FusionComparison& comparison, const TaskCategories& categories,
                              ReportFormat format);

}  // namespace layerfuse
