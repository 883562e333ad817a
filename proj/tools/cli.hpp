#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace kdseg::cli {

/// Runs one command line (args excludes the program name) and returns the
/// process exit code: 0 ok, 1 usage, 2 data/config, 3 numeric.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace kdseg::cli
