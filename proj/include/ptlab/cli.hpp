#pragma once

#include <iosfwd>

namespace ptlab {

/// Exit codes of the command-line tool.
enum ExitCode : int {
    kExitOk = 0,
    kExitInvalidArguments = 1,
    kExitPrecondition = 2,
    kExitAcceptance = 3,
};

/// Runs one subcommand. Diagnostics go to err, summaries to out.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace ptlab
