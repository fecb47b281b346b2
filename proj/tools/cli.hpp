#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace tabcpt::cli {

// Process exit codes.
enum ExitCode : int {
  kExitOk = 0,
  kExitCurationExclusions = 1,
  kExitInput = 2,
  kExitInternal = 3,
  kExitNumerical = 4,
  kExitCurationGuard = 5,
  kExitConfig = 6,
};

/// Runs one `tabcpt` invocation. `args` excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace tabcpt::cli
