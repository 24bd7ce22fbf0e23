#include "doctest.h"

#include <filesystem>

#include "../common/oracles.hpp"
#include "herdnet/explain.hpp"

using namespace herdnet;
using namespace herdnet::explain;

TEST_CASE("Grad-CAM of a mean-feature model is ReLU of the feature map") {
    const int S = 16;
    oracles::MeanFeatureProbe probe(S);
    const auto x = oracles::random_input(probe.config(), 1, 12);
    const auto maps = gradcam(probe, x, 0);
    REQUIRE(maps.size() == 1);
    const auto want = oracles::relu_normalized(x, S);
    REQUIRE(maps[0].values.same_shape(want));
    for (std::size_t i = 0; i < want.size(); ++i) CHECK(std::abs(maps[0].values.pixels[i] - want.pixels[i]) < 1e-6);
    CHECK(maps[0].layer == "probe.A");
    CHECK_FALSE(maps[0].zero_gradient);

    // The negated logit highlights the negative part.
    nn::Tensor neg(x.shape(), std::vector<double>(x.data().begin(), x.data().end()));
    for (double& v : neg.data()) v = -v;
    const auto want_neg = oracles::relu_normalized(neg, S);
    const auto maps_neg = gradcam(probe, x, 1);
    for (std::size_t i = 0; i < want.size(); ++i) CHECK(std::abs(maps_neg[0].values.pixels[i] - want_neg.pixels[i]) < 1e-6);
}

TEST_CASE("a target without gradient gives an all-zero map") {
    oracles::MeanFeatureProbe probe(8);
    const auto maps = gradcam(probe, oracles::random_input(probe.config(), 1, 3), 2);
    REQUIRE(maps.size() == 1);
    CHECK(maps[0].zero_gradient);
    for (double v : maps[0].values.pixels) CHECK(v == 0.0);
    GrayImage mask(8, 8, 1);
    CHECK(region_mass(maps[0], mask) == 0.0);
}

TEST_CASE("maps are normalised and upsampled") {
    FloatImage coarse(2, 2, 0.0);
    coarse.at(0, 0) = 2.0;
    coarse.at(1, 1) = 1.0;
    const auto m = finalize_map(coarse, 8, 8);
    CHECK(m.height == 8);
    CHECK(m.width == 8);
    double mx = 0.0;
    for (double v : m.pixels) {
        CHECK(v >= 0.0);
        mx = std::max(mx, v);
    }
    CHECK(mx == doctest::Approx(1.0));
    CHECK(m.at(0, 0) > m.at(7, 7));
}

TEST_CASE("region mass") {
    ActivationMap map;
    map.values = FloatImage(4, 4, 0.0);
    map.values.at(0, 0) = 1.0;
    map.values.at(3, 3) = 0.5;
    GrayImage top(4, 4, 0);
    for (int x = 0; x < 4; ++x) top.at(0, x) = 1;
    CHECK(region_mass(map, top) == doctest::Approx(1.0 / 1.5));
    GrayImage all(4, 4, 255);
    CHECK(region_mass(map, all) == doctest::Approx(1.0));
    GrayImage rest(4, 4, 1);
    for (int x = 0; x < 4; ++x) rest.at(0, x) = 0;
    CHECK(region_mass(map, top) + region_mass(map, rest) == doctest::Approx(1.0));
    CHECK_THROWS_AS(region_mass(map, GrayImage(3, 4, 1)), Error);
}

TEST_CASE("averaging maps") {
    ActivationMap a, b;
    a.values = FloatImage(2, 2, 0.0);
    b.values = FloatImage(2, 2, 0.0);
    a.values.at(0, 0) = 1.0;
    b.values.at(1, 1) = 1.0;
    b.values.at(0, 0) = 1.0;
    const auto m = average_maps({a, b});
    CHECK(m.values.at(0, 0) == doctest::Approx(1.0));
    CHECK(m.values.at(1, 1) == doctest::Approx(0.5));
    CHECK(m.values.at(0, 1) == 0.0);
}

TEST_CASE("maps round trip through disk") {
    ActivationMap map;
    map.values = FloatImage(3, 5, 0.0);
    for (std::size_t i = 0; i < map.values.size(); ++i) map.values.pixels[i] = static_cast<double>(i) / 14.0;
    const auto prefix = std::filesystem::temp_directory_path() / "herdnet_map_test";
    save_map(prefix, map);
    const auto back = read_map_values(prefix.string() + ".f32");
    REQUIRE(back.same_shape(map.values));
    for (std::size_t i = 0; i < back.size(); ++i) CHECK(back.pixels[i] == doctest::Approx(map.values.pixels[i]).epsilon(1e-6));
    CHECK(std::filesystem::exists(prefix.string() + ".png"));
    std::filesystem::remove(prefix.string() + ".png");
    std::filesystem::remove(prefix.string() + ".f32");
}

TEST_CASE("per-frame maps of real models") {
    auto c = models::preset(models::Arch::Spatial);
    c.image_size = 32;
    c.frames_per_video = 3;
    auto spatial = models::make_classifier(c);
    const auto x = oracles::random_input(c, 1, 2);
    const auto maps = gradcam(*spatial, x, 1);
    CHECK(maps.size() == 3);
    for (std::size_t t = 0; t < maps.size(); ++t) {
        CHECK(maps[t].frame == static_cast<int>(t));
        CHECK(maps[t].values.height == 32);
    }
    const auto mass = frame_cam_mass(*spatial, x, 1);
    CHECK(mass.size() == 3);

    auto tc = models::preset(models::Arch::TimeSformer);
    tc.image_size = 32;
    tc.patch_size = 8;
    tc.frames_per_video = 2;
    auto ts = models::make_classifier(tc);
    const auto tmaps = transformer_map(*ts, oracles::random_input(tc, 1, 3), 0);
    CHECK(tmaps.size() == 2);
    CHECK(tmaps[0].values.width == 32);
}
