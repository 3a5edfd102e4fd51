#pragma once

#include <string>
#include <vector>

namespace cxrcf {

struct ProcessResult {
    int exit_code = -1;
    std::string output;  ///< captured stdout
};

/// Quotes an argument for /bin/sh.
std::string shell_quote(const std::string& arg);

/// Runs `command` (a shell command line) with the quoted `args` appended and
/// captures stdout. stderr passes through.
ProcessResult run_command(const std::string& command, const std::vector<std::string>& args);

} // namespace cxrcf
