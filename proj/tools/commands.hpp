#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace probekit::cli {

enum ExitCode : int {
  kOk = 0,
  kInternal = 1,  // internal failure or I/O
  kUsage = 2,
  kIncompatible = 3,  // bank and model/config do not fit together
};

// Runs one invocation. `args` excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace probekit::cli
