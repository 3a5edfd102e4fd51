#include "cxrcf/core/kvconfig.hpp"

#include <fstream>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "cxrcf/core/errors.hpp"

namespace cxrcf {
namespace {

KvConfig from_stream(std::istream& in, const std::string& origin) {
    boost::property_tree::ptree tree;
    try {
        boost::property_tree::ini_parser::read_ini(in, tree);
    } catch (const boost::property_tree::ini_parser_error& e) {
        throw ConfigError(origin + ": " + e.message() + " (line " + std::to_string(e.line()) + ")");
    }
    std::map<std::string, std::string> values;
    for (const auto& [key, node] : tree) {
        if (node.empty()) {
            values[key] = node.data();
            continue;
        }
        for (const auto& [sub, leaf] : node) values[key + "." + sub] = leaf.data();
    }
    return KvConfig(std::move(values));
}

} // namespace

KvConfig KvConfig::read_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw NotFoundError("cannot open config file " + path.string());
    return from_stream(in, path.string());
}

KvConfig KvConfig::parse(const std::string& text) {
    std::istringstream in(text);
    return from_stream(in, "<config>");
}

std::optional<std::string> KvConfig::get(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) return std::nullopt;
    return it->second;
}

std::string KvConfig::get_or(const std::string& key, const std::string& fallback) const {
    return get(key).value_or(fallback);
}

std::string KvConfig::require(const std::string& key) const {
    auto v = get(key);
    if (!v) throw ConfigError("missing config key '" + key + "'");
    return *v;
}

double KvConfig::get_double(const std::string& key, double fallback) const {
    auto v = get(key);
    if (!v) return fallback;
    try {
        std::size_t used = 0;
        double d = std::stod(*v, &used);
        if (used != v->size()) throw std::invalid_argument(*v);
        return d;
    } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "' is not a number: " + *v);
    }
}

long long KvConfig::get_int(const std::string& key, long long fallback) const {
    auto v = get(key);
    if (!v) return fallback;
    try {
        std::size_t used = 0;
        long long i = std::stoll(*v, &used);
        if (used != v->size()) throw std::invalid_argument(*v);
        return i;
    } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "' is not an integer: " + *v);
    }
}

} // namespace cxrcf
