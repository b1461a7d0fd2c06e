#pragma once

#include <iosfwd>

namespace pamunet {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitData = 2;
inline constexpr int kExitNumeric = 3;

/// Runs the `pamunet` command line: synth, train, eval, predict, flops, cka, ablate.
/// Returns 0 on success, 1 on usage errors, 2 on data errors, 3 on non-finite training loss.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace pamunet
