#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace nimble_mini::cli {

/// Exit codes of every command.
inline constexpr int kExitOk = 0;
inline constexpr int kExitError = 1;
inline constexpr int kExitCheckFailed = 2;
inline constexpr int kExitDiverged = 3;

/// Runs one command line (without the program name). Tables and matrices
/// without an --out path go to `out`; diagnostics go to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace nimble_mini::cli
