#pragma once

#include <iosfwd>

namespace sembg {

// Exit codes of the command-line front end.
enum ExitCode : int {
  kExitOk = 0,
  kExitFailure = 1,
  kExitConfig = 2,
  kExitData = 3,
  kExitNumeric = 4,
};

// sembg transform|train|eval|diversity --config <path> [--out <dir>]
//       [--checkpoint <path>] [--deterministic]
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace sembg
