#include "cxrcf/core/subprocess.hpp"

#include <array>
#include <cstdio>
#include <sys/wait.h>

#include "cxrcf/core/errors.hpp"

namespace cxrcf {

std::string shell_quote(const std::string& arg) {
    std::string out = "'";
    for (char c : arg) {
        if (c == '\'')
            out += "'\\''";
        else
            out.push_back(c);
    }
    out.push_back('\'');
    return out;
}

ProcessResult run_command(const std::string& command, const std::vector<std::string>& args) {
    std::string line = command;
    for (const auto& a : args) line += " " + shell_quote(a);
    FILE* pipe = ::popen(line.c_str(), "r");
    if (!pipe) throw Error("cannot start command: " + command);
    ProcessResult result;
    std::array<char, 4096> buf{};
    std::size_t n = 0;
    while ((n = std::fread(buf.data(), 1, buf.size(), pipe)) > 0) result.output.append(buf.data(), n);
    const int status = ::pclose(pipe);
    result.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return result;
}

} // namespace cxrcf
