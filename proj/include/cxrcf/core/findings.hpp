#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace cxrcf::findings {

inline constexpr std::string_view kNoFinding = "no_finding";

inline constexpr std::string_view kCardiomegaly = "cardiomegaly";
inline constexpr std::string_view kEdema = "edema";
inline constexpr std::string_view kPleuralEffusion = "pleural_effusion";
inline constexpr std::string_view kPneumonia = "pneumonia";
inline constexpr std::string_view kHernia = "hernia";
inline constexpr std::string_view kMass = "mass";
inline constexpr std::string_view kEmphysema = "emphysema";
inline constexpr std::string_view kNodule = "nodule";

/// The six findings carried through stress testing and training.
inline const std::vector<std::string>& study() {
    static const std::vector<std::string> keys{
        std::string(kCardiomegaly), std::string(kEdema), std::string(kPleuralEffusion),
        std::string(kPneumonia),    std::string(kHernia), std::string(kMass)};
    return keys;
}

/// The eight findings readers label (six study findings plus the two dropped
/// after evaluation).
inline const std::vector<std::string>& reader() {
    static const std::vector<std::string> keys = [] {
        auto k = study();
        k.emplace_back(kEmphysema);
        k.emplace_back(kNodule);
        return k;
    }();
    return keys;
}

/// Human-facing column title ("pleural_effusion" -> "Pleural Effusion").
std::string display_name(std::string_view key);

/// Normalizes a column title ("Pleural Effusion", "Pleural_Effusion") to its key.
std::string key_from_display(std::string_view name);

} // namespace cxrcf::findings
