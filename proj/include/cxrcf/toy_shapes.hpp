#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "cxrcf/core/image.hpp"

namespace cxrcf::toy {

enum class Shape { Square, Circle, Cross, Triangle, Ring, HBar, VBar, Diamond };

inline constexpr int kShapeCount = 8;

std::string to_string(Shape s);
Shape parse_shape(const std::string& name);  ///< throws ArgumentError

/// True when the pixel offset (dx, dy) from the centre lies inside the shape
/// of half-extent `half`.
bool shape_contains(Shape s, double dx, double dy, double half);

/// Adds `intensity` to every pixel inside the shape (pixel centres), clamped to [0, 1].
void stamp(Image& image, Shape s, double cx, double cy, double half, float intensity);

/// Half-extents are fractions of the image width, so one style works at any size.
struct StampStyle {
    Shape shape = Shape::Square;
    double min_half = 0.09;
    double max_half = 0.16;
    float intensity = 0.5f;
};

/// Draws one stamp of the given style at a position and size drawn from `seed`.
void stamp_random(Image& image, const StampStyle& style, std::uint64_t seed, float intensity_scale = 1.0f);

/// Noise-textured background the toy world uses for every scan.
Image background(int size, float level, float noise_sigma, std::uint64_t seed);

struct Detection {
    Shape shape;
    double iou = 0.0;
};

/// Oracle: compares an edited image with its unedited source and reports
/// which shape was added (best mask IoU >= min_iou), if any.
std::optional<Detection> detect_stamp(const Image& before, const Image& after, float threshold = 0.1f,
                                      double min_iou = 0.5);

} // namespace cxrcf::toy
