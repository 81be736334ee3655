#ifndef FLIP_CLI_HPP_
#define FLIP_CLI_HPP_

#include <iosfwd>
#include <string>
#include <vector>

namespace flip {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitData = 2;

/// Runs the command line `args` (args[0] is the program name). Results go to
/// `out`, diagnostics and usage text to `err`.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace flip

#endif  // FLIP_CLI_HPP_
