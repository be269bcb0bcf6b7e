#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace ducseg::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitInvalid = 2;

/// Runs one command line (without the program name). Exit codes: 0 success
/// or valid schedule, 2 schedule predicted to grid, 1 usage or input error.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// Output directory used when --out is not given: $DUCSEG_OUT_DIR, else ".".
std::string default_out_dir();

}  // namespace ducseg::cli
