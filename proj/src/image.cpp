#include "herdnet/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstring>

namespace herdnet {

double sample_bilinear(const FloatImage& img, double y, double x) {
    y = std::clamp(y, 0.0, static_cast<double>(img.height - 1));
    x = std::clamp(x, 0.0, static_cast<double>(img.width - 1));
    const int y0 = static_cast<int>(std::floor(y));
    const int x0 = static_cast<int>(std::floor(x));
    const int y1 = std::min(y0 + 1, img.height - 1);
    const int x1 = std::min(x0 + 1, img.width - 1);
    const double fy = y - y0;
    const double fx = x - x0;
    const double top = img.at(y0, x0) * (1.0 - fx) + img.at(y0, x1) * fx;
    const double bot = img.at(y1, x0) * (1.0 - fx) + img.at(y1, x1) * fx;
    return top * (1.0 - fy) + bot * fy;
}

FloatImage resize_bilinear(const FloatImage& img, int height, int width) {
    require(height > 0 && width > 0, "image", "resize target must be positive");
    require(img.height > 0 && img.width > 0, "image", "cannot resize an empty image");
    if (img.height == height && img.width == width) return img;
    FloatImage out(height, width);
    const double sy = static_cast<double>(img.height) / height;
    const double sx = static_cast<double>(img.width) / width;
    for (int y = 0; y < height; ++y) {
        const double src_y = (y + 0.5) * sy - 0.5;
        for (int x = 0; x < width; ++x) {
            out.at(y, x) = sample_bilinear(img, src_y, (x + 0.5) * sx - 0.5);
        }
    }
    return out;
}

GrayImage resize_bilinear(const GrayImage& img, int height, int width) {
    if (img.height == height && img.width == width) return img;
    return to_gray(resize_bilinear(to_float(img), height, width));
}

FloatImage to_float(const GrayImage& img) {
    FloatImage out(img.height, img.width);
    std::transform(img.pixels.begin(), img.pixels.end(), out.pixels.begin(),
                   [](std::uint8_t v) { return static_cast<double>(v); });
    return out;
}

GrayImage to_gray(const FloatImage& img) {
    GrayImage out(img.height, img.width);
    std::transform(img.pixels.begin(), img.pixels.end(), out.pixels.begin(), saturate_u8);
    return out;
}

namespace {

void write_png_raw(const std::filesystem::path& path, int h, int w, png_uint_32 format,
                   const std::uint8_t* data) {
    png_image image;
    std::memset(&image, 0, sizeof(image));
    image.version = PNG_IMAGE_VERSION;
    image.width = static_cast<png_uint_32>(w);
    image.height = static_cast<png_uint_32>(h);
    image.format = format;
    if (!png_image_write_to_file(&image, path.c_str(), 0, data, 0, nullptr)) {
        throw Error("image", "failed to write " + path.string() + ": " + image.message);
    }
}

}  // namespace

GrayImage read_png_gray(const std::filesystem::path& path) {
    png_image image;
    std::memset(&image, 0, sizeof(image));
    image.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&image, path.c_str())) {
        throw Error("image", "cannot read " + path.string() + ": " + image.message);
    }
    image.format = PNG_FORMAT_GRAY;
    GrayImage out(static_cast<int>(image.height), static_cast<int>(image.width));
    if (!png_image_finish_read(&image, nullptr, out.pixels.data(), 0, nullptr)) {
        png_image_free(&image);
        throw Error("image", "cannot decode " + path.string() + ": " + image.message);
    }
    return out;
}

void write_png(const std::filesystem::path& path, const GrayImage& img) {
    write_png_raw(path, img.height, img.width, PNG_FORMAT_GRAY, img.pixels.data());
}

void write_png(const std::filesystem::path& path, const RgbImage& img) {
    write_png_raw(path, img.height, img.width, PNG_FORMAT_RGB, img.pixels.data());
}

}  // namespace herdnet
