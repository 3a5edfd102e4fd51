#include "cxrcf/toy_shapes.hpp"

#include <algorithm>
#include <array>
#include <cmath>

#include "cxrcf/core/errors.hpp"
#include "cxrcf/core/rng.hpp"

namespace cxrcf::toy {

namespace {
constexpr std::array<const char*, kShapeCount> kNames{"square", "circle", "cross", "triangle",
                                                      "ring",   "hbar",   "vbar",  "diamond"};
}

std::string to_string(Shape s) { return kNames[static_cast<std::size_t>(s)]; }

Shape parse_shape(const std::string& name) {
    for (std::size_t i = 0; i < kNames.size(); ++i)
        if (name == kNames[i]) return static_cast<Shape>(i);
    throw ArgumentError("unknown toy shape '" + name + "'");
}

bool shape_contains(Shape s, double dx, double dy, double half) {
    const double ax = std::abs(dx), ay = std::abs(dy);
    switch (s) {
    case Shape::Square: return ax <= half && ay <= half;
    case Shape::Circle: return dx * dx + dy * dy <= half * half;
    case Shape::Cross: return (ax <= half / 3 && ay <= half) || (ay <= half / 3 && ax <= half);
    case Shape::Triangle: return dy >= -half && dy <= half && ax <= (dy + half) / 2;
    case Shape::Ring: {
        const double r2 = dx * dx + dy * dy;
        return r2 <= half * half && r2 >= 0.36 * half * half;
    }
    case Shape::HBar: return ax <= half && ay <= half / 3;
    case Shape::VBar: return ay <= half && ax <= half / 3;
    case Shape::Diamond: return ax + ay <= half;
    }
    return false;
}

void stamp(Image& image, Shape s, double cx, double cy, double half, float intensity) {
    const int x0 = std::max(0, static_cast<int>(std::floor(cx - half - 1)));
    const int x1 = std::min(image.width - 1, static_cast<int>(std::ceil(cx + half + 1)));
    const int y0 = std::max(0, static_cast<int>(std::floor(cy - half - 1)));
    const int y1 = std::min(image.height - 1, static_cast<int>(std::ceil(cy + half + 1)));
    for (int y = y0; y <= y1; ++y)
        for (int x = x0; x <= x1; ++x)
            if (shape_contains(s, x + 0.5 - cx, y + 0.5 - cy, half))
                image.at(x, y) = std::clamp(image.at(x, y) + intensity, 0.0f, 1.0f);
}

void stamp_random(Image& image, const StampStyle& style, std::uint64_t seed, float intensity_scale) {
    Rng rng(seed);
    const double half = rng.uniform(style.min_half, style.max_half) * image.width;
    const double margin = half + 1.0;
    const double cx = rng.uniform(margin, std::max(margin, image.width - margin));
    const double cy = rng.uniform(margin, std::max(margin, image.height - margin));
    stamp(image, style.shape, cx, cy, half, style.intensity * intensity_scale);
}

Image background(int size, float level, float noise_sigma, std::uint64_t seed) {
    Rng rng(seed);
    Image img(size, size);
    for (auto& p : img.pixels) p = std::clamp(level + noise_sigma * static_cast<float>(rng.normal()), 0.0f, 1.0f);
    return img;
}

std::optional<Detection> detect_stamp(const Image& before, const Image& after, float threshold, double min_iou) {
    if (before.width != after.width || before.height != after.height)
        throw ArgumentError("detect_stamp: image sizes differ");
    std::vector<char> mask(after.pixels.size(), 0);
    int minx = after.width, maxx = -1, miny = after.height, maxy = -1;
    for (int y = 0; y < after.height; ++y)
        for (int x = 0; x < after.width; ++x) {
            if (after.at(x, y) - before.at(x, y) > threshold) {
                mask[static_cast<std::size_t>(y) * after.width + x] = 1;
                minx = std::min(minx, x);
                maxx = std::max(maxx, x);
                miny = std::min(miny, y);
                maxy = std::max(maxy, y);
            }
        }
    if (maxx < 0) return std::nullopt;
    const double cx = (minx + maxx + 1) / 2.0;
    const double cy = (miny + maxy + 1) / 2.0;
    const double half = std::max(maxx - minx + 1, maxy - miny + 1) / 2.0;

    std::optional<Detection> best;
    for (int k = 0; k < kShapeCount; ++k) {
        const auto s = static_cast<Shape>(k);
        for (double scale : {1.0, 1.05, 0.95}) {
            std::size_t inter = 0, uni = 0;
            for (int y = 0; y < after.height; ++y)
                for (int x = 0; x < after.width; ++x) {
                    const bool m = mask[static_cast<std::size_t>(y) * after.width + x];
                    const bool r = shape_contains(s, x + 0.5 - cx, y + 0.5 - cy, half * scale);
                    inter += m && r;
                    uni += m || r;
                }
            const double iou = uni ? static_cast<double>(inter) / static_cast<double>(uni) : 0.0;
            if (!best || iou > best->iou) best = Detection{s, iou};
        }
    }
    if (!best || best->iou < min_iou) return std::nullopt;
    return best;
}

} // namespace cxrcf::toy
