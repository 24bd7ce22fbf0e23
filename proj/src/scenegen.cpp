#include "herdnet/scenegen.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

namespace herdnet::scenegen {

namespace {

using Layout = std::vector<std::array<double, 4>>;

// Laser layouts of the 16 camera views as (x0, y0, x1, y1) in frame-relative
// coordinates. Lines fan out from the projector anchor; pan and tilt of the
// camera move the anchor across a 4 x 4 grid.
const std::array<Layout, kNumViews> kViewLayouts{{
    {{0.220, 0.920, 0.020, 0.714}, {0.220, 0.920, 0.272, 0.172}},
    {{0.420, 0.920, 0.101, 0.241}, {0.420, 0.920, 0.495, 0.174}, {0.420, 0.920, 0.868, 0.318}},
    {{0.600, 0.920, 0.422, 0.191}, {0.600, 0.920, 0.690, 0.175}, {0.600, 0.920, 0.946, 0.255}, {0.600, 0.920, 0.980, 0.579}},
    {{0.800, 0.920, 0.395, 0.289}, {0.800, 0.920, 0.980, 0.270}},
    {{0.220, 0.800, 0.020, 0.638}, {0.220, 0.800, 0.020, 0.252}, {0.220, 0.800, 0.362, 0.063}},
    {{0.420, 0.800, 0.101, 0.121}, {0.420, 0.800, 0.360, 0.052}, {0.420, 0.800, 0.627, 0.079}, {0.420, 0.800, 0.868, 0.198}},
    {{0.600, 0.800, 0.510, 0.055}, {0.600, 0.800, 0.980, 0.367}},
    {{0.800, 0.800, 0.323, 0.222}, {0.800, 0.800, 0.688, 0.058}, {0.800, 0.800, 0.980, 0.362}},
    {{0.220, 0.680, 0.020, 0.518}, {0.220, 0.680, 0.020, 0.339}, {0.220, 0.680, 0.107, 0.020}, {0.220, 0.680, 0.347, 0.020}},
    {{0.420, 0.680, 0.201, 0.020}, {0.420, 0.680, 0.793, 0.029}},
    {{0.600, 0.680, 0.438, 0.020}, {0.600, 0.680, 0.804, 0.020}, {0.600, 0.680, 0.980, 0.339}},
    {{0.800, 0.680, 0.323, 0.102}, {0.800, 0.680, 0.574, 0.020}, {0.800, 0.680, 0.820, 0.020}, {0.800, 0.680, 0.980, 0.242}},
    {{0.220, 0.560, 0.020, 0.354}, {0.220, 0.560, 0.258, 0.020}},
    {{0.420, 0.560, 0.166, 0.020}, {0.420, 0.560, 0.474, 0.020}, {0.420, 0.560, 0.822, 0.020}},
    {{0.600, 0.560, 0.468, 0.020}, {0.600, 0.560, 0.665, 0.020}, {0.600, 0.560, 0.881, 0.020}, {0.600, 0.560, 0.980, 0.219}},
    {{0.800, 0.560, 0.454, 0.020}, {0.800, 0.560, 0.949, 0.020}},
}};

constexpr double kLaserSigma = 0.8;
constexpr double kBackgroundBase = 35.0;
constexpr double kBackgroundRange = 50.0;
constexpr std::uint8_t kGlyphValue = 235;

// Seven-segment encodings, bit order a b c d e f g.
constexpr std::array<std::uint8_t, 10> kSevenSegment{0x7E, 0x30, 0x6D, 0x79, 0x33,
                                                     0x5B, 0x5F, 0x70, 0x7F, 0x7B};

double segment_distance(const LaserSegment& s, double x, double y) {
    const double dx = s.x1 - s.x0;
    const double dy = s.y1 - s.y0;
    const double len2 = dx * dx + dy * dy;
    double t = len2 > 0 ? ((x - s.x0) * dx + (y - s.y0) * dy) / len2 : 0.0;
    t = std::clamp(t, 0.0, 1.0);
    const double px = s.x0 + t * dx - x;
    const double py = s.y0 + t * dy - y;
    return std::sqrt(px * px + py * py);
}

double wrap(double v, int n) {
    v = std::fmod(v, static_cast<double>(n));
    return v < 0 ? v + n : v;
}

double sample_periodic(const FloatImage& tex, double y, double x) {
    y = wrap(y, tex.height);
    x = wrap(x, tex.width);
    const int y0 = static_cast<int>(y);
    const int x0 = static_cast<int>(x);
    const int y1 = (y0 + 1) % tex.height;
    const int x1 = (x0 + 1) % tex.width;
    const double fy = y - y0;
    const double fx = x - x0;
    const double top = tex.at(y0, x0) * (1 - fx) + tex.at(y0, x1) * fx;
    const double bot = tex.at(y1, x0) * (1 - fx) + tex.at(y1, x1) * fx;
    return top * (1 - fy) + bot * fy;
}

// Soft elliptical body profile in [0,1] at (x, y) for a fish pose.
double fish_profile(const FishSpec& fish, const FishPose& pose, double x, double y) {
    const double c = std::cos(pose.heading);
    const double s = std::sin(pose.heading);
    const double u = (x - pose.x) * c + (y - pose.y) * s;
    const double v = -(x - pose.x) * s + (y - pose.y) * c;
    const double a = fish.size / 2.0;
    const double b = fish.size / 5.0;
    const double r = std::sqrt((u / a) * (u / a) + (v / b) * (v / b));
    if (r >= 1.2) return 0.0;
    if (r <= 0.7) return 1.0;
    const double t = (1.2 - r) / 0.5;
    return t * t * (3 - 2 * t);
}

void draw_digit(GrayImage& img, int digit, int x0, int y0, int w, int h, int thick) {
    const std::uint8_t bits = kSevenSegment[static_cast<std::size_t>(digit)];
    auto on = [&](int seg) { return (bits >> (6 - seg)) & 1; };
    const int mid = y0 + (h - thick) / 2;
    auto hline = [&](int y) {
        for (int dy = 0; dy < thick; ++dy)
            for (int x = x0; x < x0 + w; ++x)
                if (y + dy < img.height && x < img.width) img.at(y + dy, x) = kGlyphValue;
    };
    auto vline = [&](int x, int ya, int yb) {
        for (int dx = 0; dx < thick; ++dx)
            for (int y = ya; y <= yb; ++y)
                if (y < img.height && x + dx < img.width) img.at(y, x + dx) = kGlyphValue;
    };
    if (on(0)) hline(y0);
    if (on(1)) vline(x0 + w - thick, y0, mid);
    if (on(2)) vline(x0 + w - thick, mid, y0 + h - 1);
    if (on(3)) hline(y0 + h - thick);
    if (on(4)) vline(x0, mid, y0 + h - 1);
    if (on(5)) vline(x0, y0, mid);
    if (on(6)) hline(mid);
}

void draw_timestamp(GrayImage& img, const Timestamp& ts) {
    const Box box = timestamp_box(img.height, img.width);
    const std::array<int, 5> digits{ts.day % 10, ts.hour / 10, ts.hour % 10, ts.minute / 10, ts.minute % 10};
    const int cell = box.width / static_cast<int>(digits.size());
    const int glyph_w = std::max(2, cell - 1);
    const int glyph_h = std::max(3, box.height - 1);
    const int thick = std::max(1, box.height / 16);
    for (std::size_t i = 0; i < digits.size(); ++i) {
        draw_digit(img, digits[i], box.x0 + static_cast<int>(i) * cell, box.y0 + 1 - (box.height > 4 ? 0 : 1),
                   glyph_w, glyph_h, thick);
    }
}

}  // namespace

Box timestamp_box(int height, int width) {
    return Box{0, 0, static_cast<int>(std::ceil(0.12 * height)), static_cast<int>(std::ceil(0.30 * width))};
}

const std::vector<std::array<double, 4>>& view_layout(int view_id) {
    require(view_id >= 1 && view_id <= kNumViews, "scenegen", "view_id out of range: " + std::to_string(view_id));
    return kViewLayouts[static_cast<std::size_t>(view_id - 1)];
}

std::vector<LaserSegment> laser_geometry_for_view(int view_id, int height, int width, double intensity,
                                                  std::uint64_t jitter_seed) {
    Rng rng(jitter_seed);
    std::vector<LaserSegment> out;
    for (const auto& seg : view_layout(view_id)) {
        LaserSegment s;
        s.x0 = seg[0] * (width - 1) + rng.uniform(-kLaserJitterPx, kLaserJitterPx);
        s.y0 = seg[1] * (height - 1) + rng.uniform(-kLaserJitterPx, kLaserJitterPx);
        s.x1 = seg[2] * (width - 1) + rng.uniform(-kLaserJitterPx, kLaserJitterPx);
        s.y1 = seg[3] * (height - 1) + rng.uniform(-kLaserJitterPx, kLaserJitterPx);
        s.intensity = intensity;
        out.push_back(s);
    }
    return out;
}

void validate(const SceneSpec& spec) {
    require(spec.view_id >= 1 && spec.view_id <= kNumViews, "scenegen",
            "view_id out of range: " + std::to_string(spec.view_id));
    require(spec.frame_count >= kMinFrames, "scenegen",
            "frame_count " + std::to_string(spec.frame_count) + " below minimum of " + std::to_string(kMinFrames));
    require(spec.height >= 64 && spec.width >= 64, "scenegen", "image size must be at least 64x64");
    require(spec.noise_sigma >= 0.0, "scenegen", "noise_sigma must be nonnegative");
    for (const auto& s : spec.laser_geometry) {
        require(s.intensity >= 0.0 && s.intensity <= 255.0, "scenegen", "laser intensity outside [0,255]");
    }
    const bool has_fish = spec.fish.has_value();
    require((spec.class_label == Label::NF) == !has_fish, "scenegen",
            "class NF requires an absent fish and NR/R require a fish");
    if (has_fish) {
        const FishSpec& f = *spec.fish;
        require(f.start_x >= 0 && f.start_x < spec.width && f.start_y >= 0 && f.start_y < spec.height, "scenegen",
                "fish initial position outside frame");
        require(f.contrast >= 0.0 && f.contrast <= 1.0, "scenegen", "fish contrast outside [0,1]");
        require(f.size > 0.0, "scenegen", "fish size must be positive");
        const bool turns = f.trajectory == Trajectory::TurnAway;
        require(turns == (spec.class_label == Label::R), "scenegen",
                "class R requires a turn-away trajectory and NR a straight one");
        if (turns) {
            require(f.turn_duration >= 1 && f.turn_frame >= 0 && f.turn_frame + f.turn_duration <= spec.frame_count,
                    "scenegen", "turn must complete within the clip");
        }
    }
    require(spec.timestamp.day >= 0 && spec.timestamp.day <= 9 && spec.timestamp.hour >= 0 &&
                spec.timestamp.hour < 24 && spec.timestamp.minute >= 0 && spec.timestamp.minute < 60,
            "scenegen", "timestamp fields out of range");
}

FishPose fish_pose(const FishSpec& fish, int t) {
    auto heading_at = [&](int k) {
        if (fish.trajectory == Trajectory::Straight || k < fish.turn_frame) return fish.heading;
        const double progress = std::min(1.0, static_cast<double>(k - fish.turn_frame + 1) / fish.turn_duration);
        return fish.heading + std::numbers::pi * progress;
    };
    FishPose pose{fish.start_x, fish.start_y, heading_at(0)};
    for (int k = 1; k <= t; ++k) {
        pose.heading = heading_at(k);
        pose.x += fish.speed * std::cos(pose.heading);
        pose.y += fish.speed * std::sin(pose.heading);
    }
    return pose;
}

FloatImage band_limited_noise(int height, int width, std::uint64_t seed) {
    Rng rng(seed);
    FloatImage tex(height, width, 0.0);
    double total_amp = 0.0;
    // Octaves of periodic value noise; lattice periods chosen to divide the texture.
    const std::array<int, 3> cells{16, 8, 4};
    const std::array<double, 3> amps{1.0, 0.5, 0.25};
    for (std::size_t o = 0; o < cells.size(); ++o) {
        const int cell = cells[o];
        const int gh = std::max(1, height / cell);
        const int gw = std::max(1, width / cell);
        FloatImage lattice(gh, gw);
        for (auto& v : lattice.pixels) v = rng.uniform();
        const double sy = static_cast<double>(gh) / height;
        const double sx = static_cast<double>(gw) / width;
        for (int y = 0; y < height; ++y) {
            for (int x = 0; x < width; ++x) {
                const double ly = y * sy;
                const double lx = x * sx;
                const int y0 = static_cast<int>(ly);
                const int x0 = static_cast<int>(lx);
                double fy = ly - y0;
                double fx = lx - x0;
                fy = fy * fy * (3 - 2 * fy);
                fx = fx * fx * (3 - 2 * fx);
                const double a = lattice.at(y0 % gh, x0 % gw);
                const double b = lattice.at(y0 % gh, (x0 + 1) % gw);
                const double c = lattice.at((y0 + 1) % gh, x0 % gw);
                const double d = lattice.at((y0 + 1) % gh, (x0 + 1) % gw);
                tex.at(y, x) += amps[o] * ((a * (1 - fx) + b * fx) * (1 - fy) + (c * (1 - fx) + d * fx) * fy);
            }
        }
        total_amp += amps[o];
    }
    for (auto& v : tex.pixels) v /= total_amp;
    return tex;
}

RenderedScene render_scene(const SceneSpec& spec) {
    validate(spec);
    const int h = spec.height;
    const int w = spec.width;

    FloatImage texture = band_limited_noise(h, w, derive_seed(spec.rng_seed, 0x7e47));
    // Static fish-like clutter embedded in the seabed texture.
    {
        Rng clutter(derive_seed(spec.rng_seed, 0xc1u));
        const int n = 3;
        for (int i = 0; i < n; ++i) {
            FishSpec blob;
            blob.start_x = clutter.uniform(0, w);
            blob.start_y = clutter.uniform(0, h);
            blob.size = clutter.uniform(6, 11);
            blob.heading = clutter.uniform(0, std::numbers::pi);
            const double amp = clutter.uniform(0.12, 0.25);
            const FishPose pose{blob.start_x, blob.start_y, blob.heading};
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < w; ++x) {
                    // Evaluate on the torus so the clutter scrolls seamlessly.
                    double dx = x - pose.x;
                    double dy = y - pose.y;
                    dx -= w * std::round(dx / w);
                    dy -= h * std::round(dy / h);
                    texture.at(y, x) += amp * fish_profile(blob, pose, pose.x + dx, pose.y + dy);
                }
        }
    }

    RenderedScene out;
    VideoClip& clip = out.clip;
    clip.label = spec.class_label;
    clip.view_id = spec.view_id;
    clip.frames.reserve(static_cast<std::size_t>(spec.frame_count));

    FloatImage laser(h, w, 0.0);
    Raster<std::uint8_t> laser_core(h, w, 0);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double v = 0.0;
            bool core = false;
            for (const auto& s : spec.laser_geometry) {
                const double d = segment_distance(s, x, y);
                const double g = std::exp(-d * d / (2 * kLaserSigma * kLaserSigma));
                v += s.intensity * g;
                core = core || (s.intensity > 0 && g > 0.5);
            }
            laser.at(y, x) = v;
            laser_core.at(y, x) = core ? 1 : 0;
        }

    for (int t = 0; t < spec.frame_count; ++t) {
        Rng noise(derive_seed(spec.rng_seed, 0x4015e, static_cast<std::uint64_t>(t)));
        FloatImage frame(h, w);
        const double oy = spec.drift_y * t;
        const double ox = spec.drift_x * t;
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                frame.at(y, x) = kBackgroundBase + kBackgroundRange * sample_periodic(texture, y - oy, x - ox) +
                                 laser.at(y, x);
            }
        Raster<std::uint8_t> fish_mask(h, w, 0);
        if (spec.fish) {
            const FishSpec& f = *spec.fish;
            const FishPose pose = fish_pose(f, t);
            const double amp = f.contrast * 255.0;
            const int r = static_cast<int>(std::ceil(f.size)) + 2;
            for (int y = std::max(0, static_cast<int>(pose.y) - r); y < std::min(h, static_cast<int>(pose.y) + r + 1); ++y)
                for (int x = std::max(0, static_cast<int>(pose.x) - r); x < std::min(w, static_cast<int>(pose.x) + r + 1); ++x) {
                    const double p = fish_profile(f, pose, x, y);
                    frame.at(y, x) += amp * p;
                    if (p > 0.5) fish_mask.at(y, x) = 1;
                }
        }
        if (spec.noise_sigma > 0) {
            for (auto& v : frame.pixels) v += noise.normal(0.0, spec.noise_sigma);
        }
        GrayImage gray = to_gray(frame);
        if (spec.timestamp_enabled) draw_timestamp(gray, spec.timestamp);

        Raster<std::uint8_t> laser_mask = laser_core;
        for (std::size_t i = 0; i < laser_mask.size(); ++i)
            if (fish_mask.pixels[i]) laser_mask.pixels[i] = 0;
        clip.frames.push_back(std::move(gray));
        out.masks.fish.push_back(std::move(fish_mask));
        out.masks.laser.push_back(std::move(laser_mask));
    }
    return out;
}

VideoClip generate_clip(const SceneSpec& spec) { return render_scene(spec).clip; }

SceneSpec random_scene(int view_id, Label label, int frame_count, const SceneOptions& options, std::uint64_t seed) {
    Rng rng(derive_seed(seed, 0x5ce7e));
    SceneSpec spec;
    spec.view_id = view_id;
    spec.class_label = label;
    spec.frame_count = frame_count;
    spec.height = options.height;
    spec.width = options.width;
    spec.noise_sigma = options.noise_sigma;
    spec.timestamp_enabled = options.timestamp_enabled;
    spec.rng_seed = derive_seed(seed, 0x9e7);
    const double laser_intensity =
        std::min(255.0, options.laser_to_fish_ratio * std::max(options.fish_contrast, 1e-3) * 255.0);
    spec.laser_geometry =
        laser_geometry_for_view(view_id, options.height, options.width, laser_intensity, derive_seed(seed, 0x1a5e));
    spec.drift_x = rng.uniform(-options.max_drift, options.max_drift);
    spec.drift_y = rng.uniform(-options.max_drift, options.max_drift);
    spec.timestamp = Timestamp{static_cast<int>(rng.uniform_int(1, 3)), static_cast<int>(rng.uniform_int(0, 23)),
                               static_cast<int>(rng.uniform_int(0, 59))};
    // Drawn unconditionally so the stream does not depend on the label.
    FishSpec fish;
    fish.start_x = rng.uniform(0.25, 0.75) * options.width;
    fish.start_y = rng.uniform(0.30, 0.80) * options.height;
    fish.size = rng.uniform(8.0, 12.0) * options.width / 64.0;
    fish.contrast = options.fish_contrast;
    fish.heading = rng.uniform(0.0, 2 * std::numbers::pi);
    fish.speed = rng.uniform(0.4, 0.8) * options.width / 64.0;
    fish.turn_duration = 4;
    fish.turn_frame = static_cast<int>(rng.uniform_int(frame_count / 4, std::max(frame_count / 4, frame_count / 2)));
    fish.turn_frame = std::min(fish.turn_frame, frame_count - fish.turn_duration);
    if (label != Label::NF) {
        fish.trajectory = label == Label::R ? Trajectory::TurnAway : Trajectory::Straight;
        spec.fish = fish;
    }
    return spec;
}

nlohmann::json to_json(const SceneSpec& spec) {
    nlohmann::json j;
    j["view_id"] = spec.view_id;
    j["class_label"] = std::string(to_string(spec.class_label));
    j["frame_count"] = spec.frame_count;
    j["image_size"] = {spec.height, spec.width};
    auto& lasers = j["laser_geometry"] = nlohmann::json::array();
    for (const auto& s : spec.laser_geometry) lasers.push_back({{"p0", {s.x0, s.y0}}, {"p1", {s.x1, s.y1}}, {"intensity", s.intensity}});
    j["background_drift"] = {spec.drift_x, spec.drift_y};
    if (spec.fish) {
        const auto& f = *spec.fish;
        j["fish"] = {{"start", {f.start_x, f.start_y}},
                     {"size", f.size},
                     {"contrast", f.contrast},
                     {"trajectory", f.trajectory == Trajectory::TurnAway ? "turn-away" : "straight"},
                     {"heading", f.heading},
                     {"speed", f.speed},
                     {"turn_frame", f.turn_frame},
                     {"turn_duration", f.turn_duration}};
    } else {
        j["fish"] = nullptr;
    }
    j["timestamp_enabled"] = spec.timestamp_enabled;
    j["timestamp"] = {{"day", spec.timestamp.day}, {"hour", spec.timestamp.hour}, {"minute", spec.timestamp.minute}};
    j["noise_sigma"] = spec.noise_sigma;
    j["rng_seed"] = spec.rng_seed;
    return j;
}

SceneSpec scene_from_json(const nlohmann::json& j) {
    try {
        SceneSpec spec;
        spec.view_id = j.at("view_id").get<int>();
        spec.class_label = parse_label(j.at("class_label").get<std::string>());
        spec.frame_count = j.at("frame_count").get<int>();
        spec.height = j.at("image_size").at(0).get<int>();
        spec.width = j.at("image_size").at(1).get<int>();
        for (const auto& s : j.at("laser_geometry")) {
            spec.laser_geometry.push_back({s.at("p0").at(0).get<double>(), s.at("p0").at(1).get<double>(),
                                           s.at("p1").at(0).get<double>(), s.at("p1").at(1).get<double>(),
                                           s.at("intensity").get<double>()});
        }
        spec.drift_x = j.at("background_drift").at(0).get<double>();
        spec.drift_y = j.at("background_drift").at(1).get<double>();
        if (!j.at("fish").is_null()) {
            const auto& jf = j.at("fish");
            FishSpec f;
            f.start_x = jf.at("start").at(0).get<double>();
            f.start_y = jf.at("start").at(1).get<double>();
            f.size = jf.at("size").get<double>();
            f.contrast = jf.at("contrast").get<double>();
            f.trajectory = jf.at("trajectory").get<std::string>() == "turn-away" ? Trajectory::TurnAway : Trajectory::Straight;
            f.heading = jf.at("heading").get<double>();
            f.speed = jf.at("speed").get<double>();
            f.turn_frame = jf.at("turn_frame").get<int>();
            f.turn_duration = jf.at("turn_duration").get<int>();
            spec.fish = f;
        }
        spec.timestamp_enabled = j.at("timestamp_enabled").get<bool>();
        spec.timestamp = {j.at("timestamp").at("day").get<int>(), j.at("timestamp").at("hour").get<int>(),
                          j.at("timestamp").at("minute").get<int>()};
        spec.noise_sigma = j.at("noise_sigma").get<double>();
        spec.rng_seed = j.at("rng_seed").get<std::uint64_t>();
        return spec;
    } catch (const nlohmann::json::exception& e) {
        throw Error("scenegen", std::string("malformed scene spec: ") + e.what());
    }
}

}  // namespace herdnet::scenegen
