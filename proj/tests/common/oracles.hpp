#pragma once

// Independent reference checks shared by the unit and acceptance tests.

#include <algorithm>
#include <cmath>
#include <map>
#include <vector>

#include "herdnet/explain.hpp"
#include "herdnet/flow.hpp"
#include "herdnet/models.hpp"
#include "herdnet/scenegen.hpp"

namespace oracles {

using namespace herdnet;

inline double median(std::vector<double> v) {
    if (v.empty()) return 0.0;
    const auto mid = v.begin() + static_cast<std::ptrdiff_t>(v.size() / 2);
    std::nth_element(v.begin(), mid, v.end());
    if (v.size() % 2) return *mid;
    return 0.5 * (*mid + *std::max_element(v.begin(), mid));
}

// Textured frame and a copy shifted by (sx, sy) with wrap-around.
inline GrayImage texture(int size, std::uint64_t seed) {
    return to_gray([&] {
        auto n = scenegen::band_limited_noise(size, size, seed);
        for (double& v : n.pixels) v *= 255.0;
        return n;
    }());
}

inline GrayImage shifted(const GrayImage& a, int sx, int sy) {
    GrayImage b(a.height, a.width);
    for (int y = 0; y < a.height; ++y)
        for (int x = 0; x < a.width; ++x)
            b.at(y, x) = a.at(((y - sy) % a.height + a.height) % a.height, ((x - sx) % a.width + a.width) % a.width);
    return b;
}

struct FlowSuiteResult {
    double worst_error = 0.0;          // max over shifts of the interior median |error| per axis
    double worst_antisymmetry = 0.0;   // max over shifts of the interior median |f(a,b) + f(b,a)| per axis
    double zero_motion_median = 0.0;   // interior median |flow| for identical frames
};

// Integer shifts 1..3 px along x, y and the diagonal on band-limited noise.
// Interior: the frame eroded by the averaging window.
inline FlowSuiteResult flow_shift_suite(int size = 64) {
    const flow::FlowParams params;
    const int margin = params.window;
    FlowSuiteResult r;
    const auto a = texture(size, 5);
    const auto interior = [&](const flow::FlowField& f, auto value) {
        std::vector<double> v;
        for (int y = margin; y < size - margin; ++y)
            for (int x = margin; x < size - margin; ++x) v.push_back(value(f, y, x));
        return median(v);
    };
    {
        const auto f = flow::dense_flow(a, a, params);
        r.zero_motion_median = interior(f, [](const flow::FlowField& g, int y, int x) { return std::hypot(g.dx(y, x), g.dy(y, x)); });
    }
    for (int s = 1; s <= 3; ++s)
        for (const auto& [sx, sy] : std::vector<std::pair<int, int>>{{s, 0}, {0, s}, {s, s}}) {
            const auto b = shifted(a, sx, sy);
            const auto fwd = flow::dense_flow(a, b, params);
            const auto bwd = flow::dense_flow(b, a, params);
            const double ex = interior(fwd, [&](const flow::FlowField& g, int y, int x) { return std::abs(g.dx(y, x) - sx); });
            const double ey = interior(fwd, [&](const flow::FlowField& g, int y, int x) { return std::abs(g.dy(y, x) - sy); });
            r.worst_error = std::max({r.worst_error, ex, ey});
            // The backward field is sampled at the displaced position.
            const auto anti = [&](bool xaxis) {
                std::vector<double> v;
                for (int y = margin; y < size - margin; ++y)
                    for (int x = margin; x < size - margin; ++x) {
                        const int yb = y + sy, xb = x + sx;
                        v.push_back(xaxis ? std::abs(fwd.dx(y, x) + bwd.dx(yb, xb)) : std::abs(fwd.dy(y, x) + bwd.dy(yb, xb)));
                    }
                return median(v);
            };
            r.worst_antisymmetry = std::max({r.worst_antisymmetry, anti(true), anti(false)});
        }
    return r;
}

// Copies every parameter and buffer of `from` whose name exists in `to`.
inline void copy_shared_state(const nn::Module& from, nn::Module& to) {
    std::map<std::string, nn::Tensor> src;
    for (const auto& [name, t] : from.state()) src.emplace(name, t);
    for (auto& [name, t] : to.state()) {
        const auto it = src.find(name);
        if (it == src.end()) continue;
        auto dst = t.data();
        auto s = it->second.data();
        std::copy(s.begin(), s.end(), dst.begin());
    }
}

inline nn::Tensor random_input(const models::ModelConfig& c, int batch, std::uint64_t seed, double scale = 1.0) {
    Rng rng(seed);
    const int k = c.input_channels();
    std::vector<double> v(static_cast<std::size_t>(batch) * k * c.image_size * c.image_size);
    for (double& x : v) x = scale * rng.normal();
    return nn::Tensor({batch, k, c.image_size, c.image_size}, std::move(v));
}

// Max relative error between backward() and central differences of logit
// `target` w.r.t. `checks` random input coordinates. The model is in eval mode.
inline double logit_gradcheck(models::Classifier& model, int target, std::uint64_t seed, int checks = 40,
                              double h = 1e-6) {
    model.eval();
    const auto& c = model.config();
    nn::Tensor x = random_input(c, 1, seed);
    nn::Tensor leaf(x.shape(), std::vector<double>(x.data().begin(), x.data().end()), true);
    nn::element(model.forward(leaf), static_cast<std::size_t>(target)).backward();
    const std::vector<double> analytic(leaf.grad().begin(), leaf.grad().end());
    model.zero_grad();

    nn::NoGradGuard guard;
    Rng pick(seed + 1);
    double worst = 0.0;
    for (int k = 0; k < checks; ++k) {
        const auto i = static_cast<std::size_t>(pick.uniform_int(0, static_cast<std::int64_t>(x.numel()) - 1));
        const double orig = x.data()[i];
        x.data()[i] = orig + h;
        const double up = model.forward(x).data()[static_cast<std::size_t>(target)];
        x.data()[i] = orig - h;
        const double down = model.forward(x).data()[static_cast<std::size_t>(target)];
        x.data()[i] = orig;
        const double numeric = (up - down) / (2 * h);
        const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), 1e-8});
        worst = std::max(worst, std::abs(analytic[i] - numeric) / denom);
    }
    return worst;
}

// Analytic Grad-CAM probe: logits are (mean A, -mean A, 0) where the feature
// map A is input channel 0. Target 0 gives a map proportional to ReLU(A),
// target 2 has no gradient.
class MeanFeatureProbe : public models::Classifier {
public:
    explicit MeanFeatureProbe(int size) : Classifier(config_for(size)) {}

    nn::Tensor forward(const nn::Tensor& input, nn::Trace* trace = nullptr) override {
        const nn::Tensor a = nn::narrow(input, 1, 0, 1);
        if (trace) trace->record("probe.A", a);
        const nn::Tensor m = nn::reshape(nn::mean(a), {1, 1});
        return nn::concat({m, nn::scale(m, -1.0), nn::scale(m, 0.0)}, 1);
    }
    std::string explain_layer() const override { return "probe.A"; }

private:
    static models::ModelConfig config_for(int size) {
        models::ModelConfig c;
        c.arch = models::Arch::Spatial;
        c.image_size = size;
        c.frames_per_video = 1;
        return c;
    }
};

// ReLU(A) / max, computed directly.
inline FloatImage relu_normalized(const nn::Tensor& input, int size) {
    FloatImage m(size, size, 0.0);
    double mx = 0.0;
    for (std::size_t i = 0; i < m.size(); ++i) {
        m.pixels[i] = std::max(0.0, input.data()[i]);
        mx = std::max(mx, m.pixels[i]);
    }
    if (mx > 0)
        for (double& v : m.pixels) v /= mx;
    return m;
}

}  // namespace oracles
