#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace tslice::cli {

enum ExitCode : int {
  kOk = 0,
  kFailure = 1,
  kUsage = 2,
  kConfig = 3,
  kData = 4,
  kDivergence = 5,
};

// Runs one command line (args excludes the program name).
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace tslice::cli
