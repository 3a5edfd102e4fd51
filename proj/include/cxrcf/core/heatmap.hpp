#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace cxrcf {

struct HeatmapSpec {
    std::string title;
    std::vector<std::string> row_labels;
    std::vector<std::string> col_labels;
    std::vector<std::vector<double>> values;  ///< NaN renders as an empty cell
    double limit = 100.0;                      ///< |value| at full colour
    double blank_below = 0.0;                  ///< cells with |value| < this stay blank
    bool signed_scale = true;                  ///< blue positive / red negative, else white-blue
    int decimals = 0;
};

/// Writes a labelled PNG heatmap with the value printed in each cell.
void write_heatmap_png(const HeatmapSpec& spec, const std::filesystem::path& path);
/// Side-by-side panels in one image.
void write_heatmap_panels(const std::vector<HeatmapSpec>& panels, const std::filesystem::path& path);

} // namespace cxrcf
