#pragma once

#include <iosfwd>

namespace sliceforge {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitIo = 2;
inline constexpr int kExitLeakage = 3;
inline constexpr int kExitNumeric = 4;

/// Entry point of the `sliceforge` tool. Errors are reported on `err` and
/// mapped to the exit codes above.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace sliceforge
