#include "herdnet/explain.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <fstream>
#include <numeric>

namespace herdnet::explain {

using nn::Tensor;

std::vector<FloatImage> gradcam_from_activation(const Tensor& activation) {
    require(activation.ndim() == 4, "explain",
            "Grad-CAM needs a spatial layer [N, C, h, w], got " + nn::shape_str(activation.shape()));
    const int N = activation.dim(0), C = activation.dim(1), h = activation.dim(2), w = activation.dim(3);
    const std::size_t hw = static_cast<std::size_t>(h) * w;
    const auto a = activation.data();
    const auto g = activation.grad();
    std::vector<FloatImage> maps;
    for (int n = 0; n < N; ++n) {
        FloatImage cam(h, w, 0.0);
        if (!g.empty()) {
            for (int c = 0; c < C; ++c) {
                const std::size_t base = (static_cast<std::size_t>(n) * C + c) * hw;
                double alpha = 0.0;
                for (std::size_t i = 0; i < hw; ++i) alpha += g[base + i];
                alpha /= static_cast<double>(hw);
                for (std::size_t i = 0; i < hw; ++i) cam.pixels[i] += alpha * a[base + i];
            }
            for (double& v : cam.pixels) v = std::max(v, 0.0);
        }
        maps.push_back(std::move(cam));
    }
    return maps;
}

FloatImage finalize_map(const FloatImage& coarse, int height, int width) {
    FloatImage out = coarse.height == height && coarse.width == width ? coarse : resize_bilinear(coarse, height, width);
    double mx = 0.0;
    for (double& v : out.pixels) {
        v = std::max(v, 0.0);
        mx = std::max(mx, v);
    }
    if (mx > 0.0)
        for (double& v : out.pixels) v /= mx;
    return out;
}

namespace {

bool all_zero(std::span<const double> g) {
    return std::all_of(g.begin(), g.end(), [](double v) { return v == 0.0; });
}

// Runs forward + backward of the target logit with the input marked as a leaf,
// so every activation downstream of it keeps its gradient.
nn::Trace backprop_target(models::Classifier& model, const Tensor& input, int target_class) {
    require(input.ndim() == 4 && input.dim(0) == 1, "explain", "explanations take a single clip [1, K, S, S]");
    require(target_class >= 0 && target_class < model.config().n_classes, "explain", "target class out of range");
    model.eval();
    Tensor x(input.shape(), std::vector<double>(input.data().begin(), input.data().end()), true);
    nn::Trace trace;
    Tensor logits = model.forward(x, &trace);
    nn::element(logits, static_cast<std::size_t>(target_class)).backward();
    model.zero_grad();
    return trace;
}

}  // namespace

std::vector<ActivationMap> gradcam(models::Classifier& model, const Tensor& input, int target_class,
                                   const std::string& layer_in) {
    const std::string layer = layer_in.empty() ? model.explain_layer() : layer_in;
    const nn::Trace trace = backprop_target(model, input, target_class);
    const Tensor& act = trace.at(layer);
    const bool zero = act.grad().empty() || all_zero(act.grad());
    const auto coarse = gradcam_from_activation(act);
    std::vector<ActivationMap> out;
    for (std::size_t i = 0; i < coarse.size(); ++i) {
        ActivationMap m;
        m.values = finalize_map(coarse[i], input.dim(2), input.dim(3));
        m.target_class = target_class;
        m.layer = layer;
        m.frame = coarse.size() > 1 ? static_cast<int>(i) : -1;
        m.zero_gradient = zero;
        out.push_back(std::move(m));
    }
    return out;
}

std::vector<double> frame_cam_mass(models::Classifier& model, const Tensor& input, int target_class,
                                   const std::string& layer_in) {
    const std::string layer = layer_in.empty() ? model.explain_layer() : layer_in;
    const nn::Trace trace = backprop_target(model, input, target_class);
    std::vector<double> mass;
    for (const auto& cam : gradcam_from_activation(trace.at(layer)))
        mass.push_back(std::accumulate(cam.pixels.begin(), cam.pixels.end(), 0.0));
    return mass;
}

std::vector<ActivationMap> transformer_map(models::Classifier& model, const Tensor& input, int target_class) {
    auto* tsf = dynamic_cast<models::TimeSformer*>(&model);
    require(tsf != nullptr, "explain", "transformer maps need a model with a patch grid");
    const int T = input.dim(1), g = tsf->grid(), N = g * g;
    const std::string layer = model.explain_layer();
    const nn::Trace trace = backprop_target(model, input, target_class);
    const Tensor& act = trace.at(layer);
    const int D = act.dim(2);
    const auto a = act.data();
    const auto grad = act.grad();
    const bool zero = grad.empty() || all_zero(grad);
    const bool divided = model.config().divided_attention;
    std::vector<ActivationMap> out;
    for (int t = 0; t < T; ++t) {
        // Row offset of patch 0 of frame t in the flattened activation.
        const std::size_t first = divided ? (static_cast<std::size_t>(t) * (N + 1) + 1) * D
                                          : (1 + static_cast<std::size_t>(t) * N) * D;
        FloatImage cam(g, g, 0.0);
        if (!zero) {
            std::vector<double> alpha(static_cast<std::size_t>(D), 0.0);
            for (int n = 0; n < N; ++n)
                for (int d = 0; d < D; ++d) alpha[static_cast<std::size_t>(d)] += grad[first + static_cast<std::size_t>(n) * D + d];
            for (double& v : alpha) v /= N;
            for (int n = 0; n < N; ++n) {
                double s = 0.0;
                for (int d = 0; d < D; ++d) s += alpha[static_cast<std::size_t>(d)] * a[first + static_cast<std::size_t>(n) * D + d];
                cam.pixels[static_cast<std::size_t>(n)] = std::max(s, 0.0);
            }
        }
        ActivationMap m;
        m.values = finalize_map(cam, input.dim(2), input.dim(3));
        m.target_class = target_class;
        m.layer = layer;
        m.frame = t;
        m.zero_gradient = zero;
        out.push_back(std::move(m));
    }
    return out;
}

std::vector<ActivationMap> explain_clip(models::Classifier& model, const training::Preprocess& pre, const VideoClip& clip,
                                        int target_class, const std::string& layer) {
    const auto in = training::prepare_input(clip, model.config(), pre);
    const Tensor x = training::make_batch({&in});
    auto maps = model.config().arch == models::Arch::TimeSformer ? transformer_map(model, x, target_class)
                                                                  : gradcam(model, x, target_class, layer);
    for (auto& m : maps) {
        m.clip_id = clip.clip_id;
        if (!pre.crop_timestamp) continue;
        const auto box = dataio::default_crop_box(m.values.height, m.values.width);
        for (int y = box.y0; y < box.y0 + box.height; ++y)
            for (int x0 = box.x0; x0 < box.x0 + box.width; ++x0) m.values.at(y, x0) = 0.0;
        m.values = finalize_map(m.values, m.values.height, m.values.width);
    }
    return maps;
}

ActivationMap average_maps(const std::vector<ActivationMap>& maps) {
    require(!maps.empty(), "explain", "nothing to average");
    ActivationMap out = maps.front();
    out.frame = -1;
    for (std::size_t i = 1; i < maps.size(); ++i) {
        require(maps[i].values.same_shape(out.values), "explain", "maps differ in size");
        for (std::size_t k = 0; k < out.values.size(); ++k) out.values.pixels[k] += maps[i].values.pixels[k];
        out.zero_gradient = out.zero_gradient && maps[i].zero_gradient;
    }
    out.values = finalize_map(out.values, out.values.height, out.values.width);
    return out;
}

namespace {

// Piecewise-linear blue -> cyan -> yellow -> red.
std::array<double, 3> colormap(double v) {
    static constexpr std::array<std::array<double, 3>, 4> stops{{{0, 0, 255}, {0, 255, 255}, {255, 255, 0}, {255, 0, 0}}};
    const double s = std::clamp(v, 0.0, 1.0) * 3.0;
    const int i = std::min(2, static_cast<int>(s));
    const double f = s - i;
    std::array<double, 3> c{};
    for (int k = 0; k < 3; ++k)
        c[static_cast<std::size_t>(k)] = (1 - f) * stops[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)] +
                                         f * stops[static_cast<std::size_t>(i) + 1][static_cast<std::size_t>(k)];
    return c;
}

}  // namespace

RgbImage overlay(const ActivationMap& map, const GrayImage& frame) {
    require(map.values.same_shape(frame), "explain", "map and frame sizes differ");
    RgbImage out(frame.height, frame.width);
    for (int y = 0; y < frame.height; ++y)
        for (int x = 0; x < frame.width; ++x) {
            const auto c = colormap(map.values.at(y, x));
            std::uint8_t* px = out.at(y, x);
            for (int k = 0; k < 3; ++k) px[k] = saturate_u8(0.5 * frame.at(y, x) + 0.5 * c[static_cast<std::size_t>(k)]);
        }
    return out;
}

double region_mass(const ActivationMap& map, const GrayImage& mask) {
    require(map.values.same_shape(mask), "explain", "map and mask sizes differ");
    double inside = 0.0, total = 0.0;
    for (std::size_t i = 0; i < mask.size(); ++i) {
        total += map.values.pixels[i];
        if (mask.pixels[i]) inside += map.values.pixels[i];
    }
    return total > 0.0 ? inside / total : 0.0;
}

static_assert(std::endian::native == std::endian::little, "map sidecars assume a little-endian host");

void save_map(const std::filesystem::path& prefix, const ActivationMap& map) {
    if (prefix.has_parent_path()) std::filesystem::create_directories(prefix.parent_path());
    GrayImage img(map.values.height, map.values.width);
    for (std::size_t i = 0; i < img.size(); ++i) img.pixels[i] = saturate_u8(255.0 * map.values.pixels[i]);
    write_png(prefix.string() + ".png", img);
    std::ofstream out(prefix.string() + ".f32", std::ios::binary);
    require(static_cast<bool>(out), "explain", "cannot write " + prefix.string() + ".f32");
    const std::uint32_t header[4] = {0x4D414E48u /* "HNAM" */, static_cast<std::uint32_t>(map.values.height),
                                     static_cast<std::uint32_t>(map.values.width), 1u};
    out.write(reinterpret_cast<const char*>(header), sizeof header);
    std::vector<float> values(map.values.pixels.begin(), map.values.pixels.end());
    out.write(reinterpret_cast<const char*>(values.data()), static_cast<std::streamsize>(values.size() * sizeof(float)));
}

FloatImage read_map_values(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    require(static_cast<bool>(in), "explain", "cannot read " + path.string());
    std::uint32_t header[4] = {};
    in.read(reinterpret_cast<char*>(header), sizeof header);
    require(in && header[0] == 0x4D414E48u && header[3] == 1u, "explain", "not a map sidecar: " + path.string());
    FloatImage img(static_cast<int>(header[1]), static_cast<int>(header[2]));
    std::vector<float> values(img.size());
    in.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(values.size() * sizeof(float)));
    require(static_cast<bool>(in), "explain", "truncated map sidecar: " + path.string());
    std::copy(values.begin(), values.end(), img.pixels.begin());
    return img;
}

}  // namespace herdnet::explain
