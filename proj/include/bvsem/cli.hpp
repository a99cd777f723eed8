#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace bvsem {

/// Exit codes returned by cli_dispatch.
inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitRuntime = 2;

/// Runs one subcommand. `args` excludes the program name. Human-readable
/// output goes to `out`, diagnostics to `err`; artifacts land in --out.
int cli_dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace bvsem
