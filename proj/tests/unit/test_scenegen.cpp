#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <set>

#include "herdnet/audit.hpp"
#include "herdnet/scenegen.hpp"
#include "herdnet/synthetic.hpp"

using namespace herdnet;
using namespace herdnet::scenegen;

namespace {

bool same_frames(const VideoClip& a, const VideoClip& b) {
    if (a.frame_count() != b.frame_count()) return false;
    for (int t = 0; t < a.frame_count(); ++t)
        if (a.frames[static_cast<std::size_t>(t)].pixels != b.frames[static_cast<std::size_t>(t)].pixels) return false;
    return true;
}

FloatImage mean_mask(const std::vector<Raster<std::uint8_t>>& masks) {
    FloatImage m(masks.front().height, masks.front().width, 0.0);
    for (const auto& k : masks)
        for (std::size_t i = 0; i < k.size(); ++i) m.pixels[i] += k.pixels[i];
    for (double& v : m.pixels) v /= static_cast<double>(masks.size());
    return m;
}

}  // namespace

TEST_CASE("identical specs render identical bytes") {
    const auto spec = random_scene(5, Label::R, 20, {}, 42);
    CHECK(same_frames(generate_clip(spec), generate_clip(spec)));
    const auto other = random_scene(5, Label::R, 20, {}, 43);
    CHECK_FALSE(same_frames(generate_clip(spec), generate_clip(other)));
}

TEST_CASE("an absent fish renders like a zero-contrast fish") {
    const auto nr = random_scene(2, Label::NR, 16, {}, 9);
    REQUIRE(nr.fish.has_value());
    SceneSpec ghost = nr;
    ghost.fish->contrast = 0.0;
    SceneSpec none = nr;
    none.class_label = Label::NF;
    none.fish.reset();
    CHECK(same_frames(generate_clip(ghost), generate_clip(none)));
}

TEST_CASE("label and fish trajectory agree") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const auto nf = random_scene(1, Label::NF, 30, {}, seed);
        CHECK_FALSE(nf.fish.has_value());
        const auto nr = random_scene(1, Label::NR, 30, {}, seed);
        REQUIRE(nr.fish.has_value());
        CHECK(nr.fish->trajectory == Trajectory::Straight);
        for (int t = 0; t < 30; ++t) CHECK(fish_pose(*nr.fish, t).heading == doctest::Approx(nr.fish->heading));
        const auto r = random_scene(1, Label::R, 30, {}, seed);
        REQUIRE(r.fish.has_value());
        CHECK(r.fish->trajectory == Trajectory::TurnAway);
        const double h0 = r.fish->heading;
        const double h1 = fish_pose(*r.fish, 29).heading;
        // The horizontal heading component reverses.
        CHECK(std::cos(h0) * std::cos(h1) < 0.0);
    }
}

TEST_CASE("NF clips have no fish pixels") {
    const auto rendered = render_scene(random_scene(4, Label::NF, 10, {}, 3));
    for (const auto& m : rendered.masks.fish)
        for (auto v : m.pixels) CHECK(v == 0);
}

TEST_CASE("laser layouts of different views differ") {
    const auto a = render_scene(random_scene(3, Label::NF, 8, {}, 11));
    const auto b = render_scene(random_scene(7, Label::NF, 8, {}, 11));
    const auto& ma = a.masks.laser.front();
    const auto& mb = b.masks.laser.front();
    int laser = 0, differ = 0;
    for (std::size_t i = 0; i < ma.size(); ++i) {
        if (ma.pixels[i] || mb.pixels[i]) ++laser;
        if (ma.pixels[i] != mb.pixels[i]) ++differ;
    }
    REQUIRE(laser > 0);
    CHECK(static_cast<double>(differ) / laser >= 0.10);
}

TEST_CASE("views are recovered by a nearest-centroid classifier on laser masks") {
    audit::ViewClassifier views;
    std::vector<FloatImage> train;
    std::vector<int> ids;
    for (int v = 1; v <= kNumViews; ++v)
        for (std::uint64_t k = 0; k < 2; ++k) {
            train.push_back(mean_mask(render_scene(random_scene(v, Label::NF, 8, {}, 1000 + k)).masks.laser));
            ids.push_back(v);
        }
    views.fit(train, ids);
    int correct = 0, total = 0;
    for (int v = 1; v <= kNumViews; ++v)
        for (std::uint64_t k = 0; k < 7; ++k) {
            const auto label = label_from_index(static_cast<int>(k % 3));
            const auto m = mean_mask(render_scene(random_scene(v, label, 8, {}, 2000 + 31 * v + k)).masks.laser);
            correct += views.predict(m) == v;
            ++total;
        }
    CHECK(total >= 100);
    CHECK(correct == total);
}

TEST_CASE("timestamp is drawn only inside its box and only when enabled") {
    auto on = random_scene(6, Label::NF, 8, {}, 77);
    auto off = on;
    off.timestamp_enabled = false;
    const auto a = generate_clip(on), b = generate_clip(off);
    const auto box = timestamp_box(on.height, on.width);
    CHECK(box.height == static_cast<int>(std::ceil(0.12 * on.height)));
    CHECK(box.width == static_cast<int>(std::ceil(0.30 * on.width)));
    int inside = 0;
    for (int y = 0; y < on.height; ++y)
        for (int x = 0; x < on.width; ++x) {
            const bool d = a.frames[0].at(y, x) != b.frames[0].at(y, x);
            if (box.contains(y, x)) inside += d;
            else CHECK_FALSE(d);
        }
    CHECK(inside > 0);
}

TEST_CASE("invalid scenes are rejected") {
    auto s = random_scene(1, Label::NR, 12, {}, 1);
    auto short_clip = s;
    short_clip.frame_count = 7;
    CHECK_THROWS_AS(generate_clip(short_clip), Error);
    auto outside = s;
    outside.fish->start_x = -3;
    CHECK_THROWS_AS(generate_clip(outside), Error);
    auto no_fish = s;
    no_fish.fish.reset();
    CHECK_THROWS_AS(generate_clip(no_fish), Error);
    BiasConfig bad;
    bad.view_class_correlation = 1.2;
    CHECK_THROWS_AS(generate_dataset({2, 2, 2}, bad, 1), Error);
}

TEST_CASE("unbiased view table is uniform within binomial noise") {
    const auto table = view_class_counts(dataio::kReferenceTotals, 1.0 / 3.0);
    for (int c = 0; c < kNumClasses; ++c) {
        const double expect = dataio::kReferenceTotals[static_cast<std::size_t>(c)] / 16.0;
        const double sd = std::sqrt(expect * (1 - 1.0 / 16));
        int sum = 0;
        for (const auto& row : table) {
            CHECK(std::abs(row[static_cast<std::size_t>(c)] - expect) <= 3 * sd);
            sum += row[static_cast<std::size_t>(c)];
        }
        CHECK(sum == dataio::kReferenceTotals[static_cast<std::size_t>(c)]);
    }
}

TEST_CASE("full-count dataset with planted view bias") {
    BiasConfig bias;
    bias.view_class_correlation = 0.9;
    SceneOptions small;
    const auto gen = generate_dataset(dataio::kReferenceTotals, bias, 5, small);
    const auto& m = gen.dataset.manifest;
    CHECK(m.size() == 624);
    CHECK(m.class_totals() == dataio::kReferenceTotals);
    std::array<std::array<int, kNumClasses>, kNumViews> counts{};
    for (std::size_t i = 0; i < m.size(); ++i) {
        const auto& row = m.rows()[i];
        CHECK(row.capture_index == static_cast<int>(i));
        CHECK(row.frame_count >= kMinFrames);
        CHECK(row.frame_count <= kMaxFrames);
        CHECK(gen.dataset.clips[i].frame_count() == row.frame_count);
        counts[static_cast<std::size_t>(row.view_id - 1)][static_cast<std::size_t>(index_of(row.label))]++;
    }
    for (int v = 1; v <= kNumViews; ++v) {
        const auto& row = counts[static_cast<std::size_t>(v - 1)];
        const int n = row[0] + row[1] + row[2];
        if (n < 40) continue;
        const double share = static_cast<double>(row[static_cast<std::size_t>(index_of(view_majority_class(v)))]) / n;
        CHECK(std::abs(share - 0.9) <= 0.05);
    }
    // Some clips run past 75 frames.
    int long_clips = 0;
    for (const auto& row : m.rows()) long_clips += row.frame_count > 75;
    CHECK(long_clips > 0);
}

TEST_CASE("datasets round-trip through disk") {
    const auto gen = generate_dataset({2, 2, 2}, {}, 8);
    const auto dir = std::filesystem::temp_directory_path() / "herdnet_unit_dataset";
    std::filesystem::remove_all(dir);
    write_dataset(dir, gen);
    const auto back = dataio::load_dataset(dir / "manifest.csv");
    CHECK(back.manifest.rows() == gen.dataset.manifest.rows());
    for (std::size_t i = 0; i < back.clips.size(); ++i) CHECK(same_frames(back.clips[i], gen.dataset.clips[i]));
    CHECK(std::filesystem::exists(dir / "clips" / "clip_0000" / "scene.json"));
    const auto again = generate_dataset({2, 2, 2}, {}, 8);
    for (std::size_t i = 0; i < again.dataset.clips.size(); ++i)
        CHECK(same_frames(again.dataset.clips[i], gen.dataset.clips[i]));
    std::filesystem::remove_all(dir);
}
