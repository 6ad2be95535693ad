#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace layerfuse {

/// Process exit codes of the command-line tool.
enum ExitCode : int {
  kExitOk = 0,
  kExitConfig = 2,
  kExitData = 3,
  kExitIncomplete = 4,
};

/// Entry point of the `layerfuse` tool: `args` excludes the program name.
/// Results go to `out`, diagnostics to `err`.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace layerfuse
