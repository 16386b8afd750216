#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace nbv::cli {

/// Runs the command line `args` (without the program name) and returns the
/// process exit code: 0 success, 2 config or input error, 3 domain error.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace nbv::cli
