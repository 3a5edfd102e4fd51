#include "cxrcf/core/heatmap.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "cxrcf/core/errors.hpp"

namespace cxrcf {

namespace {

cv::Scalar colour_for(double v, const HeatmapSpec& spec) {
    const double t = std::clamp(std::abs(v) / spec.limit, 0.0, 1.0);
    const double fade = 255.0 * (1.0 - t);
    // BGR
    if (v >= 0 || !spec.signed_scale) return {255.0, fade, fade};
    return {fade, fade, 255.0};
}

cv::Mat render(const HeatmapSpec& spec) {
    const int rows = static_cast<int>(spec.row_labels.size());
    const int cols = static_cast<int>(spec.col_labels.size());
    if (static_cast<int>(spec.values.size()) != rows) throw ArgumentError("heatmap: row count mismatch");
    for (const auto& r : spec.values)
        if (static_cast<int>(r.size()) != cols) throw ArgumentError("heatmap: column count mismatch");

    const int cell = 72, left = 190, top = 150;
    cv::Mat img(top + rows * cell + 20, left + cols * cell + 20, CV_8UC3, cv::Scalar(255, 255, 255));
    const auto font = cv::FONT_HERSHEY_SIMPLEX;
    cv::putText(img, spec.title, {10, 28}, font, 0.7, {0, 0, 0}, 1, cv::LINE_AA);

    for (int c = 0; c < cols; ++c) {
        // Column labels are drawn rotated: render horizontally, then rotate the strip.
        cv::Mat strip(cell, top - 40, CV_8UC3, cv::Scalar(255, 255, 255));
        cv::putText(strip, spec.col_labels[c], {4, cell / 2 + 6}, font, 0.5, {0, 0, 0}, 1, cv::LINE_AA);
        cv::Mat rotated;
        cv::rotate(strip, rotated, cv::ROTATE_90_COUNTERCLOCKWISE);
        rotated.copyTo(img(cv::Rect(left + c * cell, 40, rotated.cols, rotated.rows)));
    }
    for (int r = 0; r < rows; ++r) {
        cv::putText(img, spec.row_labels[r], {8, top + r * cell + cell / 2 + 6}, font, 0.5, {0, 0, 0}, 1,
                    cv::LINE_AA);
        for (int c = 0; c < cols; ++c) {
            const cv::Rect box(left + c * cell, top + r * cell, cell, cell);
            const double v = spec.values[r][c];
            const bool blank = std::isnan(v) || std::abs(v) < spec.blank_below;
            if (!blank) {
                cv::rectangle(img, box, colour_for(v, spec), cv::FILLED);
                char text[32];
                std::snprintf(text, sizeof text, "%.*f", spec.decimals, v);
                int base = 0;
                const auto size = cv::getTextSize(text, font, 0.5, 1, &base);
                cv::putText(img, text, {box.x + (cell - size.width) / 2, box.y + (cell + size.height) / 2}, font,
                            0.5, {0, 0, 0}, 1, cv::LINE_AA);
            }
            cv::rectangle(img, box, {200, 200, 200}, 1);
        }
    }
    return img;
}

void save(const cv::Mat& img, const std::filesystem::path& path) {
    if (!cv::imwrite(path.string(), img)) throw Error("could not write " + path.string());
}

} // namespace

void write_heatmap_png(const HeatmapSpec& spec, const std::filesystem::path& path) { save(render(spec), path); }

void write_heatmap_panels(const std::vector<HeatmapSpec>& panels, const std::filesystem::path& path) {
    if (panels.empty()) throw ArgumentError("heatmap: no panels");
    std::vector<cv::Mat> mats;
    int height = 0;
    for (const auto& p : panels) {
        mats.push_back(render(p));
        height = std::max(height, mats.back().rows);
    }
    for (auto& m : mats)
        if (m.rows < height)
            cv::copyMakeBorder(m, m, 0, height - m.rows, 0, 0, cv::BORDER_CONSTANT, cv::Scalar(255, 255, 255));
    cv::Mat out;
    cv::hconcat(mats, out);
    save(out, path);
}

} // namespace cxrcf
