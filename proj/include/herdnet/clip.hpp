#pragma once

#include <string>
#include <vector>

#include "herdnet/image.hpp"
#include "herdnet/labels.hpp"

namespace herdnet {

// A labeled grayscale frame sequence. All frames share one size.
struct VideoClip {
    std::string clip_id;
    std::vector<GrayImage> frames;
    Label label = Label::NF;
    int view_id = 1;
    int capture_index = 0;
    int n_padding = 0;  // trailing all-zero frames appended by pad_clip

    int frame_count() const { return static_cast<int>(frames.size()); }
    int height() const { return frames.empty() ? 0 : frames.front().height; }
    int width() const { return frames.empty() ? 0 : frames.front().width; }
};

}  // namespace herdnet
