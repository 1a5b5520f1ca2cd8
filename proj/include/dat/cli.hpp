// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace dat {

/// Exit codes: 0 success, 2 for library errors (JSON object with "error" and
/// "message" on `err`), 1 for anything unexpected. `args` excludes argv[0].
/// Log verbosity comes from the DAT_LOG_LEVEL environment variable.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace dat
