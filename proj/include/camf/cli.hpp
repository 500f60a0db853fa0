#pragma once

#include <iosfwd>

namespace camf {

// Exit codes: 0 success, 2 usage or configuration error, 3 data or runtime
// error.
inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitData = 3;

// Entry point of the `camf` tool; results go to `out`, diagnostics and
// progress to `err`.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace camf
