#pragma once

#include <iostream>

namespace mpruner {

/// Exit codes: 0 success, 2 configuration or usage error, 3 runtime failure
/// (IO, degenerate activations, training divergence).
inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitRuntime = 3;

int run_cli(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr);

}  // namespace mpruner
