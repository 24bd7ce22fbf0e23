#pragma once

#include <filesystem>
#include <vector>

#include "herdnet/clip.hpp"

namespace herdnet::flow {

// Per-pixel displacement (dx, dy) in pixels/frame, stored interleaved.
struct FlowField {
    int height = 0;
    int width = 0;
    std::vector<double> data;

    FlowField() = default;
    FlowField(int h, int w) : height(h), width(w), data(static_cast<std::size_t>(h) * w * 2, 0.0) {}

    double& dx(int y, int x) { return data[(static_cast<std::size_t>(y) * width + x) * 2]; }
    double& dy(int y, int x) { return data[(static_cast<std::size_t>(y) * width + x) * 2 + 1]; }
    double dx(int y, int x) const { return data[(static_cast<std::size_t>(y) * width + x) * 2]; }
    double dy(int y, int x) const { return data[(static_cast<std::size_t>(y) * width + x) * 2 + 1]; }
};

struct FlowParams {
    int levels = 3;          // pyramid levels including the full-resolution one
    double pyr_scale = 0.5;
    int window = 15;         // averaging window of the displacement solve
    int iterations = 3;      // refinements per level
    int poly_n = 5;          // polynomial neighbourhood half-size
    double poly_sigma = 1.1;
};

// Dense displacement from frame a to frame b via coarse-to-fine quadratic
// polynomial expansion.
FlowField dense_flow(const GrayImage& a, const GrayImage& b, const FlowParams& params = {});

inline constexpr double kMagnitudeClipPx = 8.0;

FloatImage flow_magnitude_raw(const FlowField& f);
// Magnitude linearly mapped to 8 bit with saturation at kMagnitudeClipPx.
GrayImage flow_magnitude(const FlowField& f);

// 2 * n_pairs channels: gray frame of pair k followed by its flow magnitude.
std::vector<GrayImage> temporal_stack(const VideoClip& clip, int n_pairs = 7, const FlowParams& params = {});

// Cache file: 16-byte header ("HNFL", H, W, 2 as little-endian u32) followed by
// H*W*2 little-endian float32 (dx, dy interleaved).
void write_flow_cache(const std::filesystem::path& path, const FlowField& f);
FlowField read_flow_cache(const std::filesystem::path& path);

}  // namespace herdnet::flow
