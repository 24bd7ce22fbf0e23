#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "herdnet/error.hpp"

namespace herdnet {

// Row-major single-channel raster.
template <typename T>
struct Raster {
    int height = 0;
    int width = 0;
    std::vector<T> pixels;

    Raster() = default;
    Raster(int h, int w, T fill = T{}) : height(h), width(w), pixels(static_cast<std::size_t>(h) * w, fill) {
        require(h >= 0 && w >= 0, "image", "negative raster dimensions");
    }

    T& at(int y, int x) { return pixels[static_cast<std::size_t>(y) * width + x]; }
    const T& at(int y, int x) const { return pixels[static_cast<std::size_t>(y) * width + x]; }

    std::size_t size() const { return pixels.size(); }
    bool same_shape(const auto& other) const { return height == other.height && width == other.width; }

    bool operator==(const Raster&) const = default;
};

using GrayImage = Raster<std::uint8_t>;
using FloatImage = Raster<double>;

struct RgbImage {
    int height = 0;
    int width = 0;
    std::vector<std::uint8_t> pixels;  // interleaved RGB

    RgbImage() = default;
    RgbImage(int h, int w) : height(h), width(w), pixels(static_cast<std::size_t>(h) * w * 3, 0) {}

    std::uint8_t* at(int y, int x) { return &pixels[(static_cast<std::size_t>(y) * width + x) * 3]; }
};

inline std::uint8_t saturate_u8(double v) {
    if (!(v > 0.0)) return 0;
    if (v >= 255.0) return 255;
    return static_cast<std::uint8_t>(v + 0.5);
}

// Bilinear sample with edge clamping; (y, x) in pixel-center coordinates.
double sample_bilinear(const FloatImage& img, double y, double x);

// Resizes with half-pixel-center bilinear interpolation.
FloatImage resize_bilinear(const FloatImage& img, int height, int width);
GrayImage resize_bilinear(const GrayImage& img, int height, int width);

FloatImage to_float(const GrayImage& img);
GrayImage to_gray(const FloatImage& img);

GrayImage read_png_gray(const std::filesystem::path& path);
void write_png(const std::filesystem::path& path, const GrayImage& img);
void write_png(const std::filesystem::path& path, const RgbImage& img);

}  // namespace herdnet
