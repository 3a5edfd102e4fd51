#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>

namespace cxrcf {

/// Flat key = value configuration file ('#' and ';' start comments).
class KvConfig {
public:
    KvConfig() = default;
    explicit KvConfig(std::map<std::string, std::string> values) : values_(std::move(values)) {}

    static KvConfig read_file(const std::filesystem::path& path);
    static KvConfig parse(const std::string& text);

    std::optional<std::string> get(const std::string& key) const;
    std::string get_or(const std::string& key, const std::string& fallback) const;
    /// Throws ConfigError when absent.
    std::string require(const std::string& key) const;
    double get_double(const std::string& key, double fallback) const;
    long long get_int(const std::string& key, long long fallback) const;

    const std::map<std::string, std::string>& values() const { return values_; }

private:
    std::map<std::string, std::string> values_;
};

} // namespace cxrcf
