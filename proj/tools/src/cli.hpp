#pragma once

#include <ostream>

#include "tempofuse/error.hpp"

namespace tempofuse::cli {

/// Process exit status for a failure category. Usage errors exit with 2.
int exit_code(ErrorCode code);

/// Parses argv and runs one subcommand. Failures are reported on `err` as a
/// single line `error[<code>]: <message>`.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace tempofuse::cli
