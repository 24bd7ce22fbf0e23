#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <vector>

#include <nlohmann/json.hpp>

#include "herdnet/clip.hpp"
#include "herdnet/rng.hpp"

namespace herdnet::scenegen {

inline constexpr int kMinFrames = 8;
inline constexpr int kMaxFrames = 80;
inline constexpr double kDefaultFishContrast = 0.15;
inline constexpr double kDefaultLaserToFishRatio = 4.0;
inline constexpr double kLaserJitterPx = 3.0;

struct LaserSegment {
    double x0 = 0, y0 = 0, x1 = 0, y1 = 0;  // endpoints in pixels
    double intensity = 0;                  // peak brightness added, [0, 255]
};

enum class Trajectory { Straight, TurnAway };

struct FishSpec {
    double start_x = 0, start_y = 0;  // pixels
    double size = 10;                 // body length in pixels
    double contrast = kDefaultFishContrast;
    Trajectory trajectory = Trajectory::Straight;
    double heading = 0;    // radians, image coordinates
    double speed = 0.6;    // pixels per frame
    int turn_frame = 0;    // first frame of the turn (TurnAway only)
    int turn_duration = 4; // frames over which the heading rotates by pi
};

struct Timestamp {
    int day = 1;
    int hour = 0;
    int minute = 0;
};

struct SceneSpec {
    int view_id = 1;
    Label class_label = Label::NF;
    int frame_count = 30;
    int height = 64;
    int width = 64;
    std::vector<LaserSegment> laser_geometry;
    double drift_x = 0.0, drift_y = 0.0;  // background motion, pixels/frame
    std::optional<FishSpec> fish;
    bool timestamp_enabled = true;
    Timestamp timestamp;
    double noise_sigma = 2.0;
    std::uint64_t rng_seed = 0;
};

// Rejects specs that break the label/fish coupling or geometric preconditions.
void validate(const SceneSpec& spec);

// Top-left region holding the timestamp glyphs: 12% of the height by 30% of the width.
struct Box {
    int y0 = 0, x0 = 0, height = 0, width = 0;
    bool contains(int y, int x) const { return y >= y0 && y < y0 + height && x >= x0 && x < x0 + width; }
    int area() const { return height * width; }
};
Box timestamp_box(int height, int width);

// Normalized base layout (coordinates in [0,1]) of one of the 16 camera views.
const std::vector<std::array<double, 4>>& view_layout(int view_id);

// Laser segments of a view scaled to the frame, endpoints jittered by up to
// +/- kLaserJitterPx drawn from `jitter_seed`.
std::vector<LaserSegment> laser_geometry_for_view(int view_id, int height, int width, double intensity,
                                                  std::uint64_t jitter_seed);

struct SceneMasks {
    std::vector<Raster<std::uint8_t>> fish;   // 1 where the fish body is drawn
    std::vector<Raster<std::uint8_t>> laser;  // 1 where laser light dominates (fish excluded)
};

struct RenderedScene {
    VideoClip clip;
    SceneMasks masks;
};

RenderedScene render_scene(const SceneSpec& spec);
VideoClip generate_clip(const SceneSpec& spec);

// Fish centre and heading at frame t (used for mask export and label checks).
struct FishPose {
    double x, y, heading;
};
FishPose fish_pose(const FishSpec& fish, int t);

// Periodic band-limited noise texture in [0,1] (several octaves of smooth value noise).
FloatImage band_limited_noise(int height, int width, std::uint64_t seed);

// Options for drawing a random but valid scene of a given view/class.
struct SceneOptions {
    int height = 64;
    int width = 64;
    double fish_contrast = kDefaultFishContrast;
    double laser_to_fish_ratio = kDefaultLaserToFishRatio;
    double noise_sigma = 2.0;
    double max_drift = 1.0;
    bool timestamp_enabled = true;
};

SceneSpec random_scene(int view_id, Label label, int frame_count, const SceneOptions& options,
                       std::uint64_t seed);

nlohmann::json to_json(const SceneSpec& spec);
SceneSpec scene_from_json(const nlohmann::json& j);

}  // namespace herdnet::scenegen
