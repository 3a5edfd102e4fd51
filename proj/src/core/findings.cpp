#include "cxrcf/core/findings.hpp"

#include <cctype>

namespace cxrcf::findings {

std::string display_name(std::string_view key) {
    std::string out;
    bool upper = true;
    for (char c : key) {
        if (c == '_') {
            out.push_back(' ');
            upper = true;
            continue;
        }
        out.push_back(upper ? static_cast<char>(std::toupper(static_cast<unsigned char>(c))) : c);
        upper = false;
    }
    return out;
}

std::string key_from_display(std::string_view name) {
    std::string key;
    for (char c : name) {
        if (c == ' ' || c == '-' || c == '_') {
            if (!key.empty() && key.back() != '_') key.push_back('_');
        } else {
            key.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
        }
    }
    while (!key.empty() && key.back() == '_') key.pop_back();
    return key;
}

} // namespace cxrcf::findings
