#pragma once

namespace kronfit {

enum ExitCode : int {
    kExitOk = 0,
    kExitInputError = 1,
    kExitNotConverged = 2,
    kExitNumericFailure = 3,
};

/// Entry point of the kronfit command-line tool; returns the process exit code.
int run_cli(int argc, char** argv);

}  // namespace kronfit
