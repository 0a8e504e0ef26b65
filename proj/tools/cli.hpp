#pragma once

#include <iosfwd>

namespace nirev {

enum ExitCode : int {
  kExitOk = 0,
  kExitUsage = 1,
  kExitData = 2,
  kExitCheckFailed = 3,
};

/// Entry point of the `nirev` tool. Diagnostics go to `err`, reports to `out`.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace nirev
