#include "cxrcf/core/jsonl.hpp"

#include <fstream>

#include "cxrcf/core/errors.hpp"

namespace cxrcf::jsonl {

void for_each(const std::filesystem::path& path,
              const std::function<void(const nlohmann::json&, std::size_t)>& fn) {
    std::ifstream in(path);
    if (!in) throw NotFoundError("cannot open " + path.string());
    std::string line;
    std::size_t number = 0;
    while (std::getline(in, line)) {
        ++number;
        if (line.empty()) continue;
        nlohmann::json value;
        try {
            value = nlohmann::json::parse(line);
        } catch (const nlohmann::json::parse_error& e) {
            throw ValidationError(path.string() + ":" + std::to_string(number) + ": corrupt JSONL line (" +
                                  e.what() + ")");
        }
        fn(value, number);
    }
}

std::string dump_line(const nlohmann::json& value) { return value.dump(); }

} // namespace cxrcf::jsonl
