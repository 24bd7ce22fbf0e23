#pragma once

#include <array>
#include <cstdint>
#include <string>

#include <nlohmann/json.hpp>

#include "herdnet/image.hpp"

namespace herdnet::report {

// Draws text with a built-in 3x5 pixel font (digits, A-Z, '.', '-', ' ') scaled by `scale`.
void draw_text(RgbImage& img, int y, int x, const std::string& text, std::array<std::uint8_t, 3> color, int scale = 2);

// One panel per class: mean PP of each clip in capture order, points coloured by view.
RgbImage plot_adjacency_curves(const nlohmann::json& adjacency_curves);
// 4 x 4 grid of per-view confusion matrices (rows truth, columns prediction,
// row-normalised shading, counts printed); the view's majority column is outlined.
RgbImage plot_per_view_confusion(const nlohmann::json& per_view);
// Stacked bars of the class counts in each view.
RgbImage plot_view_distribution(const nlohmann::json& per_view);

}  // namespace herdnet::report
