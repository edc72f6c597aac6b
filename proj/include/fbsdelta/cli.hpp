#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace fbsdelta::cli {

enum ExitCode : int {
  kSuccess = 0,
  kNotSolvable = 2,
  kValidationFailure = 3,
  kInputError = 4,
};

/// Runs `fbsdelta <command> <scenario.json> [--out DIR] [--tol X] [--seed N]
/// [--delta-init X]`. `args` excludes the program name. The summary goes to
/// `out`, diagnostics to `err`; tables are written only when --out is given.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace fbsdelta::cli
