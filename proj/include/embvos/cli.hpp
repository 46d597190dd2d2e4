#pragma once

#include <iosfwd>

namespace embvos {

/// Exit statuses of the command-line tool.
enum ExitCode : int { kExitOk = 0, kExitValidation = 1, kExitRuntime = 2 };

/// Entry point of the `embvos` executable. Subcommands: synth, train, infer,
/// eval, gradcheck, bench-matching. Normal output goes to `out`, errors and
/// usage text to `err`.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace embvos
