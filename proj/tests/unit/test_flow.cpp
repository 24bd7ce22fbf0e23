#include "doctest.h"

#include <cmath>
#include <filesystem>

#include "../common/oracles.hpp"
#include "herdnet/flow.hpp"

using namespace herdnet;
using namespace herdnet::flow;

TEST_CASE("integer shifts are recovered and flow is roughly antisymmetric") {
    const auto r = oracles::flow_shift_suite();
    CHECK(r.zero_motion_median < 0.1);
    CHECK(r.worst_error < 0.25);
    CHECK(r.worst_antisymmetry < 0.5);
}

TEST_CASE("textureless frames give finite flow") {
    GrayImage a(32, 32, 90);
    const auto f = dense_flow(a, a);
    for (double v : f.data) CHECK(std::isfinite(v));
    GrayImage b(32, 32, 140);
    for (double v : dense_flow(a, b).data) CHECK(std::isfinite(v));
    CHECK_THROWS_AS(dense_flow(a, GrayImage(32, 30, 0)), Error);
}

TEST_CASE("flow magnitude") {
    FlowField zero(4, 5);
    for (auto v : flow_magnitude(zero).pixels) CHECK(v == 0);
    FlowField f(3, 3), g(3, 3);
    for (int y = 0; y < 3; ++y)
        for (int x = 0; x < 3; ++x) {
            f.dx(y, x) = 3, f.dy(y, x) = 4;
            g.dx(y, x) = -4, g.dy(y, x) = 3;
        }
    for (double v : flow_magnitude_raw(f).pixels) CHECK(v == doctest::Approx(5.0));
    CHECK(flow_magnitude(f).pixels == flow_magnitude(g).pixels);
    CHECK(flow_magnitude(f).pixels[0] == static_cast<std::uint8_t>(std::lround(5.0 / kMagnitudeClipPx * 255)));
}

TEST_CASE("temporal stack of a static clip") {
    VideoClip c;
    const auto frame = oracles::texture(32, 3);
    for (int t = 0; t < 10; ++t) c.frames.push_back(frame);
    const auto stack = temporal_stack(c, 7);
    REQUIRE(stack.size() == 14);
    for (int k = 0; k < 7; ++k) {
        CHECK(stack[static_cast<std::size_t>(2 * k)].pixels == frame.pixels);
        int moving = 0;
        for (auto v : stack[static_cast<std::size_t>(2 * k + 1)].pixels) moving += v > 3;
        CHECK(moving == 0);
    }
    CHECK(temporal_stack(c, 7)[1].pixels == stack[1].pixels);
    VideoClip shortc;
    for (int t = 0; t < 7; ++t) shortc.frames.push_back(frame);
    CHECK_THROWS_AS(temporal_stack(shortc, 7), Error);
}

TEST_CASE("flow cache round trip") {
    FlowField f(3, 4);
    for (std::size_t i = 0; i < f.data.size(); ++i) f.data[i] = 0.25 * static_cast<double>(i) - 1.0;
    const auto path = std::filesystem::temp_directory_path() / "herdnet_flow_cache.bin";
    write_flow_cache(path, f);
    const auto g = read_flow_cache(path);
    CHECK(g.height == 3);
    CHECK(g.width == 4);
    CHECK(g.data == f.data);
    CHECK(std::filesystem::file_size(path) == 16 + 3 * 4 * 2 * 4);
    std::filesystem::remove(path);
}
