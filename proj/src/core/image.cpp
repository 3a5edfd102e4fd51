#include "cxrcf/core/image.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "cxrcf/core/errors.hpp"

namespace cxrcf {
namespace {

Image from_mat(const cv::Mat& decoded) {
    cv::Mat gray;
    if (decoded.channels() == 3)
        cv::cvtColor(decoded, gray, cv::COLOR_BGR2GRAY);
    else if (decoded.channels() == 4)
        cv::cvtColor(decoded, gray, cv::COLOR_BGRA2GRAY);
    else
        gray = decoded;

    float full = 1.0f;
    switch (gray.depth()) {
    case CV_8U: full = 255.0f; break;
    case CV_16U: full = 65535.0f; break;
    default: throw ValidationError("unsupported image bit depth (expected 8 or 16 bit)");
    }
    cv::Mat f;
    gray.convertTo(f, CV_32F);
    Image img(f.cols, f.rows);
    // divide (not multiply by 1/full) so 8-bit values match quantize8 exactly
    for (int y = 0; y < f.rows; ++y) {
        const float* row = f.ptr<float>(y);
        for (int x = 0; x < f.cols; ++x) img.pixels[static_cast<std::size_t>(y) * f.cols + x] = row[x] / full;
    }
    return img;
}

cv::Mat to_mat(const Image& image) {
    cv::Mat m(image.height, image.width, CV_32F);
    for (int y = 0; y < image.height; ++y)
        std::copy_n(image.pixels.begin() + static_cast<std::ptrdiff_t>(y) * image.width, image.width,
                    m.ptr<float>(y));
    return m;
}

} // namespace

Image decode_image(std::span<const unsigned char> bytes) {
    cv::Mat buf(1, static_cast<int>(bytes.size()), CV_8U, const_cast<unsigned char*>(bytes.data()));
    cv::Mat decoded = cv::imdecode(buf, cv::IMREAD_ANYDEPTH | cv::IMREAD_ANYCOLOR);
    if (decoded.empty()) throw ValidationError("could not decode image bytes");
    return from_mat(decoded);
}

Image load_image(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw NotFoundError("cannot open image " + path.string());
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    try {
        return decode_image(bytes);
    } catch (const ValidationError& e) {
        throw ValidationError(path.string() + ": " + e.what());
    }
}

std::vector<unsigned char> encode_png(const Image& image) {
    cv::Mat m8(image.height, image.width, CV_8U);
    for (int y = 0; y < image.height; ++y) {
        auto* row = m8.ptr<unsigned char>(y);
        for (int x = 0; x < image.width; ++x) {
            const float v = std::clamp(image.at(x, y), 0.0f, 1.0f);
            row[x] = static_cast<unsigned char>(std::lround(v * 255.0f));
        }
    }
    std::vector<unsigned char> out;
    if (!cv::imencode(".png", m8, out, {cv::IMWRITE_PNG_COMPRESSION, 6}))
        throw Error("PNG encoding failed");
    return out;
}

void save_png(const Image& image, const std::filesystem::path& path) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    const auto bytes = encode_png(image);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

Image resize(const Image& image, int width, int height) {
    if (image.width == width && image.height == height) return image;
    cv::Mat out;
    const bool shrinking = width < image.width && height < image.height;
    cv::resize(to_mat(image), out, cv::Size(width, height), 0, 0, shrinking ? cv::INTER_AREA : cv::INTER_LINEAR);
    Image img(width, height);
    for (int y = 0; y < height; ++y)
        std::copy_n(out.ptr<float>(y), width, img.pixels.begin() + static_cast<std::ptrdiff_t>(y) * width);
    return img;
}

Image quantize8(Image image) {
    for (auto& p : image.pixels) p = static_cast<float>(std::lround(std::clamp(p, 0.0f, 1.0f) * 255.0f)) / 255.0f;
    return image;
}

Image downsample(const Image& image, int width, int height) {
    Image out(width, height);
    for (int oy = 0; oy < height; ++oy) {
        const int y0 = oy * image.height / height;
        const int y1 = std::max(y0 + 1, (oy + 1) * image.height / height);
        for (int ox = 0; ox < width; ++ox) {
            const int x0 = ox * image.width / width;
            const int x1 = std::max(x0 + 1, (ox + 1) * image.width / width);
            double sum = 0.0;
            for (int y = y0; y < y1; ++y)
                for (int x = x0; x < x1; ++x) sum += image.at(x, y);
            out.at(ox, oy) = static_cast<float>(sum / ((y1 - y0) * (x1 - x0)));
        }
    }
    return out;
}

} // namespace cxrcf
