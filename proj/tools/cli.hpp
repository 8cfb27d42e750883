#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace tokmarg::cli {

enum ExitCode : int {
  kOk = 0,
  kInternal = 1,
  kValidation = 2,
  kLimit = 3,
  kScorer = 4,
};

// Runs one command line (args excludes the program name). Results go to
// `out`, diagnostics to `err`; returns the process exit code.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace tokmarg::cli
