#include "herdnet/report.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <map>

#include "herdnet/error.hpp"
#include "herdnet/labels.hpp"

namespace herdnet::report {

namespace {

using Color = std::array<std::uint8_t, 3>;

constexpr Color kWhite{255, 255, 255};
constexpr Color kBlack{0, 0, 0};
constexpr Color kGray{170, 170, 170};
constexpr std::array<Color, kNumClasses> kClassColor{{{70, 110, 200}, {90, 170, 90}, {220, 110, 50}}};

// Rows of 3 bits, top to bottom.
const std::map<char, std::array<const char*, 5>>& font() {
    static const std::map<char, std::array<const char*, 5>> f{
        {'0', {"111", "101", "101", "101", "111"}}, {'1', {"010", "110", "010", "010", "111"}},
        {'2', {"111", "001", "111", "100", "111"}}, {'3', {"111", "001", "111", "001", "111"}},
        {'4', {"101", "101", "111", "001", "001"}}, {'5', {"111", "100", "111", "001", "111"}},
        {'6', {"111", "100", "111", "101", "111"}}, {'7', {"111", "001", "001", "001", "001"}},
        {'8', {"111", "101", "111", "101", "111"}}, {'9', {"111", "101", "111", "001", "111"}},
        {'A', {"010", "101", "111", "101", "101"}}, {'B', {"110", "101", "110", "101", "110"}},
        {'C', {"011", "100", "100", "100", "011"}}, {'D', {"110", "101", "101", "101", "110"}},
        {'E', {"111", "100", "110", "100", "111"}}, {'F', {"111", "100", "110", "100", "100"}},
        {'G', {"011", "100", "101", "101", "011"}}, {'H', {"101", "101", "111", "101", "101"}},
        {'I', {"111", "010", "010", "010", "111"}}, {'J', {"001", "001", "001", "101", "010"}},
        {'K', {"101", "101", "110", "101", "101"}}, {'L', {"100", "100", "100", "100", "111"}},
        {'M', {"101", "111", "111", "101", "101"}}, {'N', {"110", "101", "101", "101", "101"}},
        {'O', {"010", "101", "101", "101", "010"}}, {'P', {"110", "101", "110", "100", "100"}},
        {'Q', {"010", "101", "101", "110", "011"}}, {'R', {"110", "101", "110", "101", "101"}},
        {'S', {"011", "100", "010", "001", "110"}}, {'T', {"111", "010", "010", "010", "010"}},
        {'U', {"101", "101", "101", "101", "111"}}, {'V', {"101", "101", "101", "101", "010"}},
        {'W', {"101", "101", "111", "111", "101"}}, {'X', {"101", "101", "010", "101", "101"}},
        {'Y', {"101", "101", "010", "010", "010"}}, {'Z', {"111", "001", "010", "100", "111"}},
        {'.', {"000", "000", "000", "000", "010"}}, {'-', {"000", "000", "111", "000", "000"}},
        {' ', {"000", "000", "000", "000", "000"}}};
    return f;
}

void put(RgbImage& img, int y, int x, Color c) {
    if (y < 0 || x < 0 || y >= img.height || x >= img.width) return;
    std::uint8_t* p = img.at(y, x);
    p[0] = c[0], p[1] = c[1], p[2] = c[2];
}

void fill_rect(RgbImage& img, int y0, int x0, int h, int w, Color c) {
    for (int y = y0; y < y0 + h; ++y)
        for (int x = x0; x < x0 + w; ++x) put(img, y, x, c);
}

void outline(RgbImage& img, int y0, int x0, int h, int w, Color c) {
    for (int x = x0; x < x0 + w; ++x) put(img, y0, x, c), put(img, y0 + h - 1, x, c);
    for (int y = y0; y < y0 + h; ++y) put(img, y, x0, c), put(img, y, x0 + w - 1, c);
}

void line(RgbImage& img, int y0, int x0, int y1, int x1, Color c) {
    const int n = std::max({std::abs(y1 - y0), std::abs(x1 - x0), 1});
    for (int i = 0; i <= n; ++i)
        put(img, static_cast<int>(std::lround(y0 + (y1 - y0) * static_cast<double>(i) / n)),
            static_cast<int>(std::lround(x0 + (x1 - x0) * static_cast<double>(i) / n)), c);
}

RgbImage canvas(int h, int w) {
    RgbImage img(h, w);
    fill_rect(img, 0, 0, h, w, kWhite);
    return img;
}

// Distinct colours for the 16 views.
Color view_color(int view_id) {
    const double hue = std::fmod((view_id - 1) * 0.618034, 1.0) * 6.0;
    const int i = static_cast<int>(hue);
    const double f = hue - i;
    const double v = 200, lo = 40;
    const double up = lo + (v - lo) * f, down = v - (v - lo) * f;
    std::array<double, 3> rgb{};
    switch (i % 6) {
        case 0: rgb = {v, up, lo}; break;
        case 1: rgb = {down, v, lo}; break;
        case 2: rgb = {lo, v, up}; break;
        case 3: rgb = {lo, down, v}; break;
        case 4: rgb = {up, lo, v}; break;
        default: rgb = {v, lo, down}; break;
    }
    return {static_cast<std::uint8_t>(rgb[0]), static_cast<std::uint8_t>(rgb[1]), static_cast<std::uint8_t>(rgb[2])};
}

const nlohmann::json& field(const nlohmann::json& j, const char* key) {
    require(j.is_object() && j.contains(key), "report", std::string("audit JSON lacks '") + key + "'");
    return j.at(key);
}

}  // namespace

void draw_text(RgbImage& img, int y, int x, const std::string& text, Color color, int scale) {
    for (char ch : text) {
        const auto it = font().find(static_cast<char>(std::toupper(static_cast<unsigned char>(ch))));
        if (it != font().end())
            for (int r = 0; r < 5; ++r)
                for (int c = 0; c < 3; ++c)
                    if (it->second[static_cast<std::size_t>(r)][c] == '1') fill_rect(img, y + r * scale, x + c * scale, scale, scale, color);
        x += 4 * scale;
    }
}

RgbImage plot_adjacency_curves(const nlohmann::json& adjacency) {
    const auto& curves = field(adjacency, "curves");
    constexpr int kPanelH = 150, kLeft = 40, kGap = 30, kWidth = 900;
    RgbImage img = canvas(kNumClasses * (kPanelH + kGap) + kGap, kWidth);
    for (int k = 0; k < kNumClasses; ++k) {
        const std::string name(to_string(label_from_index(k)));
        const auto& pts = curves.contains(name) ? curves.at(name) : nlohmann::json::array();
        const int top = kGap + k * (kPanelH + kGap);
        const int plot_w = kWidth - kLeft - 10;
        draw_text(img, top - 14, kLeft, name, kClassColor[static_cast<std::size_t>(k)]);
        outline(img, top, kLeft, kPanelH, plot_w, kBlack);
        for (double level : {1.0 / 3.0, 0.5}) {
            const int y = top + static_cast<int>(std::lround((1.0 - level) * (kPanelH - 1)));
            for (int x = kLeft; x < kLeft + plot_w; x += 4) put(img, y, x, kGray);
        }
        draw_text(img, top - 2, 4, "1.0", kBlack, 1);
        draw_text(img, top + kPanelH - 6, 4, "0.0", kBlack, 1);
        const std::size_t n = pts.size();
        int py = -1, px = -1;
        for (std::size_t i = 0; i < n; ++i) {
            const double pp = pts[i].at("pp").get<double>();
            const int x = kLeft + 2 + static_cast<int>(n > 1 ? (plot_w - 5) * i / (n - 1) : 0);
            const int y = top + static_cast<int>(std::lround((1.0 - std::clamp(pp, 0.0, 1.0)) * (kPanelH - 1)));
            if (px >= 0) line(img, py, px, y, x, kGray);
            fill_rect(img, y - 1, x - 1, 3, 3, view_color(pts[i].at("view_id").get<int>()));
            py = y, px = x;
        }
    }
    return img;
}

RgbImage plot_per_view_confusion(const nlohmann::json& per_view) {
    const auto& views = field(per_view, "views");
    constexpr int kCell = 30, kPad = 40;
    constexpr int kBlock = kNumClasses * kCell;
    RgbImage img = canvas(4 * (kBlock + kPad) + kPad, 4 * (kBlock + kPad) + kPad);
    for (const auto& v : views) {
        const int id = v.at("view_id").get<int>();
        const int top = kPad + ((id - 1) / 4) * (kBlock + kPad);
        const int left = kPad + ((id - 1) % 4) * (kBlock + kPad);
        draw_text(img, top - 14, left, "V" + std::to_string(id), kBlack);
        const auto& counts = v.at("confusion");
        for (int t = 0; t < kNumClasses; ++t) {
            int row_total = 0;
            for (int p = 0; p < kNumClasses; ++p) row_total += counts.at(t).at(p).get<int>();
            for (int p = 0; p < kNumClasses; ++p) {
                const int n = counts.at(t).at(p).get<int>();
                const double share = row_total ? static_cast<double>(n) / row_total : 0.0;
                const auto shade = static_cast<std::uint8_t>(std::lround(255 - 200 * share));
                fill_rect(img, top + t * kCell, left + p * kCell, kCell, kCell, {shade, shade, 255});
                draw_text(img, top + t * kCell + 10, left + p * kCell + 6, std::to_string(n), share > 0.6 ? kWhite : kBlack);
            }
        }
        outline(img, top, left, kBlock, kBlock, kBlack);
        const Label major = parse_label(v.at("majority").get<std::string>());
        outline(img, top - 1, left + index_of(major) * kCell - 1, kBlock + 2, kCell + 2, {220, 30, 30});
        outline(img, top, left + index_of(major) * kCell, kBlock, kCell, {220, 30, 30});
    }
    return img;
}

RgbImage plot_view_distribution(const nlohmann::json& per_view) {
    const auto& views = field(per_view, "views");
    int most = 1;
    for (const auto& v : views) {
        int n = 0;
        for (const auto& c : v.at("distribution")) n += c.get<int>();
        most = std::max(most, n);
    }
    constexpr int kBar = 30, kGap = 14, kLeft = 30, kHeight = 260, kBottom = 30;
    RgbImage img = canvas(kHeight + kBottom + 30, kLeft + kNumViews * (kBar + kGap) + 10);
    const int base = 20 + kHeight;
    for (const auto& v : views) {
        const int id = v.at("view_id").get<int>();
        const int x = kLeft + (id - 1) * (kBar + kGap);
        int y = base;
        for (int c = 0; c < kNumClasses; ++c) {
            const int h = static_cast<int>(std::lround(static_cast<double>(v.at("distribution").at(c).get<int>()) * kHeight / most));
            fill_rect(img, y - h, x, h, kBar, kClassColor[static_cast<std::size_t>(c)]);
            y -= h;
        }
        draw_text(img, base + 8, x + 4, std::to_string(id), kBlack);
    }
    line(img, base, kLeft - 5, base, img.width - 5, kBlack);
    for (int c = 0; c < kNumClasses; ++c) {
        fill_rect(img, 4, kLeft + c * 60, 10, 10, kClassColor[static_cast<std::size_t>(c)]);
        draw_text(img, 4, kLeft + c * 60 + 14, std::string(to_string(label_from_index(c))), kBlack);
    }
    return img;
}

}  // namespace herdnet::report
