#pragma once

#include <ostream>

namespace sta::cli {

// Entry point of the command-line tool; parses argv, dispatches to the
// subcommand, prints results to `out` and failures to `err`. Returns the
// process exit code (0 on success, 1 on a reported error).
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace sta::cli
