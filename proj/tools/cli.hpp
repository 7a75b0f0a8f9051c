// SPDX-License-Identifier: Apache-2.0
//
// The `kpg` command line: build-data, train, predict, evaluate, inspect.
#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace kpg::cli {

enum ExitCode : int {
  kOk = 0,
  kUsage = 1,
  kInputError = 2,
  kDivergence = 3,
  kCheckpointError = 4,
  kIdMismatch = 5,
};

/// Runs one invocation. `args[0]` is the program name. Reports go to `out`,
/// logs to stderr.
int run(const std::vector<std::string>& args, std::ostream& out);

}  // namespace kpg::cli
