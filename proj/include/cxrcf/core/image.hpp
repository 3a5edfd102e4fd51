#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace cxrcf {

/// Single-channel image with intensities in [0, 1], row-major.
struct Image {
    int width = 0;
    int height = 0;
    std::vector<float> pixels;

    Image() = default;
    Image(int w, int h, float fill = 0.0f)
        : width(w), height(h), pixels(static_cast<std::size_t>(w) * h, fill) {}

    float& at(int x, int y) { return pixels[static_cast<std::size_t>(y) * width + x]; }
    float at(int x, int y) const { return pixels[static_cast<std::size_t>(y) * width + x]; }
    bool empty() const { return pixels.empty(); }

    friend bool operator==(const Image&, const Image&) = default;
};

/// Decodes 8- or 16-bit grayscale (or color, converted) PNG/JPEG.
Image load_image(const std::filesystem::path& path);
Image decode_image(std::span<const unsigned char> bytes);

/// Encodes as 8-bit grayscale PNG; identical images give identical bytes.
std::vector<unsigned char> encode_png(const Image& image);
void save_png(const Image& image, const std::filesystem::path& path);

/// Area-averaging resize (bilinear when upscaling).
Image resize(const Image& image, int width, int height);

/// Rounds every pixel to the 8-bit grid, as a PNG round trip would.
Image quantize8(Image image);

/// Block-mean downsample to width x height.
Image downsample(const Image& image, int width, int height);

} // namespace cxrcf
