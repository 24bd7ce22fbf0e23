#pragma once

#include <array>
#include <string>
#include <string_view>

#include "herdnet/error.hpp"

namespace herdnet {

inline constexpr int kNumClasses = 3;
inline constexpr int kNumViews = 16;

// Clip labels, in the fixed (NF, NR, R) order used by every matrix and vector.
enum class Label : int { NF = 0, NR = 1, R = 2 };

inline constexpr std::array<Label, kNumClasses> kAllLabels{Label::NF, Label::NR, Label::R};

inline int index_of(Label l) { return static_cast<int>(l); }

inline Label label_from_index(int i) {
    require(i >= 0 && i < kNumClasses, "labels", "class index out of range: " + std::to_string(i));
    return static_cast<Label>(i);
}

inline std::string_view to_string(Label l) {
    switch (l) {
        case Label::NF: return "NF";
        case Label::NR: return "NR";
        case Label::R: return "R";
    }
    return "?";
}

inline Label parse_label(std::string_view s) {
    if (s == "NF") return Label::NF;
    if (s == "NR") return Label::NR;
    if (s == "R") return Label::R;
    throw Error("labels", "unknown label '" + std::string(s) + "'");
}

}  // namespace herdnet
