#include "doctest.h"

#include <algorithm>
#include <filesystem>
#include <set>

#include "herdnet/dataio.hpp"

using namespace herdnet;
using namespace herdnet::dataio;

namespace {

VideoClip ramp_clip(int frames, int h = 8, int w = 10) {
    VideoClip c;
    c.clip_id = "c";
    for (int t = 0; t < frames; ++t) {
        GrayImage f(h, w);
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) f.at(y, x) = static_cast<std::uint8_t>(1 + (t * 7 + y * 3 + x) % 250);
        c.frames.push_back(f);
    }
    return c;
}

Manifest fake_manifest(const std::array<int, kNumClasses>& totals) {
    std::vector<ManifestRow> rows;
    int k = 0;
    for (int c = 0; c < kNumClasses; ++c)
        for (int i = 0; i < totals[static_cast<std::size_t>(c)]; ++i, ++k)
            rows.push_back({"clip_" + std::to_string(k), label_from_index(c), 1 + k % 16, k, 30, "clips/" + std::to_string(k)});
    return Manifest(rows);
}

}  // namespace

TEST_CASE("uniform frame sampling") {
    CHECK(sample_indices_uniform(8, 8) == std::vector<int>{0, 1, 2, 3, 4, 5, 6, 7});
    CHECK(sample_indices_uniform(16, 8) == std::vector<int>{0, 2, 4, 6, 8, 10, 12, 14});
    CHECK(sample_indices_uniform(30, 8) == std::vector<int>{0, 3, 7, 11, 15, 18, 22, 26});
    for (int T = 8; T <= 80; ++T) {
        const auto idx = sample_indices_uniform(T, 8);
        CHECK(std::is_sorted(idx.begin(), idx.end()));
        CHECK(std::adjacent_find(idx.begin(), idx.end()) == idx.end());
    }
    const auto c = ramp_clip(30);
    const auto frames = sample_frames_uniform(c, 8);
    CHECK(frames[2].pixels == c.frames[7].pixels);
}

TEST_CASE("zero padding and truncation") {
    const auto c = ramp_clip(8);
    const auto p = pad_clip(c, 40);
    CHECK(p.frame_count() == 40);
    CHECK(p.n_padding == 32);
    for (int t = 0; t < 8; ++t) CHECK(p.frames[static_cast<std::size_t>(t)].pixels == c.frames[static_cast<std::size_t>(t)].pixels);
    for (int t = 8; t < 40; ++t)
        CHECK(std::all_of(p.frames[static_cast<std::size_t>(t)].pixels.begin(), p.frames[static_cast<std::size_t>(t)].pixels.end(),
                          [](auto v) { return v == 0; }));
    const auto same = pad_clip(ramp_clip(40), 40);
    CHECK(same.n_padding == 0);
    CHECK(same.frame_count() == 40);
    CHECK_THROWS_AS(pad_clip(ramp_clip(12), 10), Error);
    const auto t = truncate_clip(ramp_clip(30), 12);
    CHECK(t.frame_count() == 12);
    CHECK(t.frames[11].pixels == ramp_clip(30).frames[11].pixels);
}

TEST_CASE("timestamp crop zeroes the box only") {
    const auto c = ramp_clip(1, 64, 64);
    const auto box = default_crop_box(64, 64);
    CHECK(box.height == 8);
    CHECK(box.width == 20);
    const auto out = crop_timestamp(c.frames[0], box);
    CHECK(out.same_shape(c.frames[0]));
    for (int y = 0; y < 64; ++y)
        for (int x = 0; x < 64; ++x) {
            const bool in = y < box.height && x < box.width;
            if (in) CHECK(out.at(y, x) == 0);
            else CHECK(out.at(y, x) == c.frames[0].at(y, x));
        }
    // Frames equal outside the box crop to equal images.
    auto other = c.frames[0];
    other.at(2, 3) = 17;
    CHECK(crop_timestamp(other, box).pixels == out.pixels);
    CHECK_THROWS_AS(crop_timestamp(c.frames[0], CropBox{60, 0, 8, 20}), Error);
}

TEST_CASE("horizontal flip") {
    const auto f = ramp_clip(1).frames[0];
    const auto g = horizontal_flip(f);
    for (int y = 0; y < f.height; ++y)
        for (int x = 0; x < f.width; ++x) CHECK(g.at(y, x) == f.at(y, f.width - 1 - x));
    CHECK(horizontal_flip(g).pixels == f.pixels);
    GrayImage sym(4, 6);
    for (int y = 0; y < 4; ++y)
        for (int x = 0; x < 6; ++x) sym.at(y, x) = static_cast<std::uint8_t>(10 * y + std::min(x, 5 - x));
    CHECK(horizontal_flip(sym).pixels == sym.pixels);
}

TEST_CASE("reference split counts") {
    const auto m = fake_manifest(kReferenceTotals);
    const auto splits = make_splits(m, 10, kReferenceSplitCounts, 3);
    REQUIRE(splits.size() == 11);
    for (const auto& s : splits) {
        CHECK(s.train.size() == 449);
        CHECK(s.val.size() == 113);
        CHECK(s.test.size() == 62);
        std::set<std::string> all(s.train.begin(), s.train.end());
        all.insert(s.val.begin(), s.val.end());
        all.insert(s.test.begin(), s.test.end());
        CHECK(all.size() == 624);
        std::array<std::array<int, 3>, kNumClasses> per{};
        for (int k = 0; k < 3; ++k)
            for (const auto& id : s.subset(static_cast<Subset>(k))) per[static_cast<std::size_t>(index_of(m.at(id).label))][static_cast<std::size_t>(k)]++;
        CHECK(per == kReferenceSplitCounts);
    }
    CHECK(make_splits(m, 10, kReferenceSplitCounts, 3) == splits);
    CHECK_FALSE(make_splits(m, 10, kReferenceSplitCounts, 4)[1] == splits[1]);
    CHECK(split_from_json(to_json(splits[4])) == splits[4]);
}

TEST_CASE("infeasible split counts name the class") {
    const auto m = fake_manifest({200, 100, 210});
    try {
        make_splits(m, 2, kReferenceSplitCounts, 1);
        FAIL("expected an error");
    } catch (const Error& e) {
        CHECK(std::string(e.what()).find("NR") != std::string::npos);
    }
}

TEST_CASE("manifest csv round trip and ordering") {
    std::vector<ManifestRow> rows{{"b", Label::R, 3, 5, 20, "clips/b"}, {"a", Label::NF, 16, 2, 9, "clips/a"}};
    const Manifest m(rows);
    CHECK(m.rows().front().clip_id == "a");
    const auto path = std::filesystem::temp_directory_path() / "herdnet_manifest_test.csv";
    m.write_csv(path);
    const auto back = Manifest::read_csv(path);
    CHECK(back.rows() == m.rows());
    std::filesystem::remove(path);
    CHECK_THROWS_AS(Manifest({{"x", Label::R, 17, 1, 20, "p"}}), Error);
    CHECK_THROWS_AS(Manifest({{"x", Label::R, 1, 1, 20, "p"}, {"y", Label::R, 1, 1, 20, "q"}}), Error);
}
