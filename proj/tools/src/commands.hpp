#pragma once

#include <string>
#include <vector>

namespace deepkexp {

// Parses and runs one CLI invocation (args exclude the program name).
// Returns the process exit code: 0 success, 1 usage error, 2 data error,
// 3 numerical failure.
int cli_run(const std::vector<std::string>& args);

}  // namespace deepkexp
