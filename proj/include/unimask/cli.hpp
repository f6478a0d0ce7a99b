#pragma once

// Command-line front end: synth, train, generate, eval, inspect-pack.
// Exit codes: 0 success, 2 usage error, 3 data error, 4 numeric failure,
// 1 anything else.

#include <iosfwd>

namespace unimask {

inline constexpr int kExitOk = 0;
inline constexpr int kExitInternal = 1;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitData = 3;
inline constexpr int kExitNumeric = 4;

int run_cli(int argc, const char* const* argv, std::ostream& out,
            std::ostream& err);

}  // namespace unimask
