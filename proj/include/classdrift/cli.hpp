#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace classdrift::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitError = 1;
inline constexpr int kExitInfeasible = 2;

// Runs the command line `args` (without the program name).  Never throws;
// errors are reported on `err` and through the exit code.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace classdrift::cli
