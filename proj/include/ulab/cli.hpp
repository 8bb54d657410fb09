// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace ulab {

/// Exit statuses of the command-line front end.
enum ExitCode : int {
  kExitOk = 0,
  kExitFailure = 1,
  kExitMissing = 2,
  kExitConfig = 3,
  kExitDiverged = 4,
};

/// Runs one command. `args` excludes the program name. Errors are reported
/// on `err` as a single JSON line {"error", "exit", "message"}.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace ulab
