#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace rpr {

enum ExitCode : int { kExitOk = 0, kExitFailure = 1, kExitConfig = 2, kExitNotConverged = 3, kExitIo = 4 };

/// Entry point of the `rpr` tool. args[0] is the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace rpr
