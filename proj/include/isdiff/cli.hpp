#pragma once

#include <iosfwd>

namespace isdiff {

// Exit codes of the command-line front end.
enum ExitCode : int {
    exit_ok = 0,
    exit_failure = 1,
    exit_io = 2,
    exit_config = 3,
    exit_degenerate_mask = 4,
};

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace isdiff
