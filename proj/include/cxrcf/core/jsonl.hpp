#pragma once

#include <filesystem>
#include <functional>
#include <string>

#include <json.hpp>

namespace cxrcf::jsonl {

/// Calls fn(object, line_number) for each non-empty line. A line that is not
/// valid JSON raises ValidationError carrying the file name and line number.
void for_each(const std::filesystem::path& path,
              const std::function<void(const nlohmann::json&, std::size_t)>& fn);

/// Compact single-line dump with sorted keys (nlohmann objects are ordered maps).
std::string dump_line(const nlohmann::json& value);

} // namespace cxrcf::jsonl
