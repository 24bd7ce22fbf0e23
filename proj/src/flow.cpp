#include "herdnet/flow.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include "herdnet/dataio.hpp"

namespace herdnet::flow {

namespace {

// Six polynomial coefficients per pixel: c, bx, by, axx, ayy, axy.
struct PolyImage {
    int height = 0, width = 0;
    std::vector<std::array<double, 6>> r;
    const std::array<double, 6>& at(int y, int x) const { return r[static_cast<std::size_t>(y) * width + x]; }
};

// Weighted least-squares fit of a quadratic in a (2n+1)^2 Gaussian window,
// computed with separable correlations.
PolyImage poly_expand(const FloatImage& img, int n, double sigma) {
    const int h = img.height, w = img.width, k = 2 * n + 1;
    std::vector<double> g(static_cast<std::size_t>(k)), xg(g.size()), xxg(g.size());
    for (int i = -n; i <= n; ++i) {
        const double v = std::exp(-(i * i) / (2.0 * sigma * sigma));
        g[static_cast<std::size_t>(i + n)] = v;
        xg[static_cast<std::size_t>(i + n)] = i * v;
        xxg[static_cast<std::size_t>(i + n)] = i * i * v;
    }
    // Gram matrix of the basis {1, x, y, x^2, y^2, xy} under the window weights.
    Eigen::Matrix<double, 6, 6> gram = Eigen::Matrix<double, 6, 6>::Zero();
    for (int y = -n; y <= n; ++y)
        for (int x = -n; x <= n; ++x) {
            const double wgt = g[static_cast<std::size_t>(x + n)] * g[static_cast<std::size_t>(y + n)];
            const Eigen::Matrix<double, 6, 1> b(1.0, x, y, double(x) * x, double(y) * y, double(x) * y);
            gram += wgt * b * b.transpose();
        }
    const Eigen::Matrix<double, 6, 6> inv = gram.inverse();

    auto clampi = [](int v, int hi) { return std::clamp(v, 0, hi - 1); };
    // Horizontal pass: correlations with g, x g, x^2 g.
    std::vector<std::array<double, 3>> row(static_cast<std::size_t>(h) * w);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            std::array<double, 3> acc{0, 0, 0};
            for (int i = -n; i <= n; ++i) {
                const double v = img.at(y, clampi(x + i, w));
                acc[0] += g[static_cast<std::size_t>(i + n)] * v;
                acc[1] += xg[static_cast<std::size_t>(i + n)] * v;
                acc[2] += xxg[static_cast<std::size_t>(i + n)] * v;
            }
            row[static_cast<std::size_t>(y) * w + x] = acc;
        }
    PolyImage out{h, w, std::vector<std::array<double, 6>>(static_cast<std::size_t>(h) * w)};
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            Eigen::Matrix<double, 6, 1> m = Eigen::Matrix<double, 6, 1>::Zero();
            for (int i = -n; i <= n; ++i) {
                const auto& r = row[static_cast<std::size_t>(clampi(y + i, h)) * w + x];
                const double gi = g[static_cast<std::size_t>(i + n)];
                const double ygi = xg[static_cast<std::size_t>(i + n)];
                const double yygi = xxg[static_cast<std::size_t>(i + n)];
                m(0) += gi * r[0];
                m(1) += gi * r[1];
                m(2) += ygi * r[0];
                m(3) += gi * r[2];
                m(4) += yygi * r[0];
                m(5) += ygi * r[1];
            }
            const Eigen::Matrix<double, 6, 1> coef = inv * m;
            auto& dst = out.r[static_cast<std::size_t>(y) * w + x];
            for (int c = 0; c < 6; ++c) dst[static_cast<std::size_t>(c)] = coef(c);
        }
    return out;
}

std::array<double, 6> sample_poly(const PolyImage& p, double y, double x) {
    y = std::clamp(y, 0.0, static_cast<double>(p.height - 1));
    x = std::clamp(x, 0.0, static_cast<double>(p.width - 1));
    const int y0 = static_cast<int>(y), x0 = static_cast<int>(x);
    const int y1 = std::min(y0 + 1, p.height - 1), x1 = std::min(x0 + 1, p.width - 1);
    const double fy = y - y0, fx = x - x0;
    std::array<double, 6> out{};
    for (std::size_t c = 0; c < 6; ++c) {
        out[c] = (p.at(y0, x0)[c] * (1 - fx) + p.at(y0, x1)[c] * fx) * (1 - fy) +
                 (p.at(y1, x0)[c] * (1 - fx) + p.at(y1, x1)[c] * fx) * fy;
    }
    return out;
}

// Mean over a clamped square window, applied separably to each channel.
void box_blur(std::vector<std::array<double, 5>>& m, int h, int w, int window) {
    const int r = window / 2;
    std::vector<std::array<double, 5>> tmp(m.size());
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            std::array<double, 5> acc{};
            const int lo = std::max(0, x - r), hi = std::min(w - 1, x + r);
            for (int i = lo; i <= hi; ++i)
                for (std::size_t c = 0; c < 5; ++c) acc[c] += m[static_cast<std::size_t>(y) * w + i][c];
            for (auto& v : acc) v /= (hi - lo + 1);
            tmp[static_cast<std::size_t>(y) * w + x] = acc;
        }
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            std::array<double, 5> acc{};
            const int lo = std::max(0, y - r), hi = std::min(h - 1, y + r);
            for (int i = lo; i <= hi; ++i)
                for (std::size_t c = 0; c < 5; ++c) acc[c] += tmp[static_cast<std::size_t>(i) * w + x][c];
            for (auto& v : acc) v /= (hi - lo + 1);
            m[static_cast<std::size_t>(y) * w + x] = acc;
        }
}

void refine(const PolyImage& p1, const PolyImage& p2, FlowField& flow, int window) {
    const int h = p1.height, w = p1.width;
    std::vector<std::array<double, 5>> m(static_cast<std::size_t>(h) * w);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const double dx = flow.dx(y, x), dy = flow.dy(y, x);
            const auto& r1 = p1.at(y, x);
            const auto r2 = sample_poly(p2, y + dy, x + dx);
            const double a11 = 0.5 * (r1[3] + r2[3]);
            const double a22 = 0.5 * (r1[4] + r2[4]);
            const double a12 = 0.25 * (r1[5] + r2[5]);
            const double b1 = -0.5 * (r2[1] - r1[1]) + a11 * dx + a12 * dy;
            const double b2 = -0.5 * (r2[2] - r1[2]) + a12 * dx + a22 * dy;
            m[static_cast<std::size_t>(y) * w + x] = {a11 * a11 + a12 * a12, a12 * (a11 + a22), a12 * a12 + a22 * a22,
                                                      a11 * b1 + a12 * b2, a12 * b1 + a22 * b2};
        }
    box_blur(m, h, w, window);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const auto& v = m[static_cast<std::size_t>(y) * w + x];
            const double det = v[0] * v[2] - v[1] * v[1];
            const double idet = 1.0 / (det + 1e-3);
            flow.dx(y, x) = (v[2] * v[3] - v[1] * v[4]) * idet;
            flow.dy(y, x) = (v[0] * v[4] - v[1] * v[3]) * idet;
        }
}

FloatImage gaussian_blur(const FloatImage& img, double sigma) {
    if (sigma <= 0) return img;
    const int r = std::max(1, static_cast<int>(std::ceil(3 * sigma)));
    std::vector<double> k(static_cast<std::size_t>(2 * r + 1));
    double sum = 0;
    for (int i = -r; i <= r; ++i) sum += k[static_cast<std::size_t>(i + r)] = std::exp(-(i * i) / (2 * sigma * sigma));
    for (auto& v : k) v /= sum;
    FloatImage tmp(img.height, img.width), out(img.height, img.width);
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x) {
            double acc = 0;
            for (int i = -r; i <= r; ++i) acc += k[static_cast<std::size_t>(i + r)] * img.at(y, std::clamp(x + i, 0, img.width - 1));
            tmp.at(y, x) = acc;
        }
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x) {
            double acc = 0;
            for (int i = -r; i <= r; ++i) acc += k[static_cast<std::size_t>(i + r)] * tmp.at(std::clamp(y + i, 0, img.height - 1), x);
            out.at(y, x) = acc;
        }
    return out;
}

}  // namespace

FlowField dense_flow(const GrayImage& a, const GrayImage& b, const FlowParams& params) {
    require(a.same_shape(b), "flow", "frames of mismatched size");
    require(a.height > 0 && a.width > 0, "flow", "empty frames");
    require(params.levels >= 1 && params.pyr_scale > 0 && params.pyr_scale < 1 && params.window >= 1 &&
                params.iterations >= 1 && params.poly_n >= 1 && params.poly_sigma > 0,
            "flow", "invalid flow parameters");

    std::vector<FloatImage> pyr_a{to_float(a)}, pyr_b{to_float(b)};
    const double blur_sigma = (1.0 / params.pyr_scale - 1.0) * 0.5;
    for (int l = 1; l < params.levels; ++l) {
        const int h = static_cast<int>(std::lround(pyr_a.back().height * params.pyr_scale));
        const int w = static_cast<int>(std::lround(pyr_a.back().width * params.pyr_scale));
        if (h < 2 * params.poly_n + 1 || w < 2 * params.poly_n + 1) break;
        pyr_a.push_back(resize_bilinear(gaussian_blur(pyr_a.back(), blur_sigma), h, w));
        pyr_b.push_back(resize_bilinear(gaussian_blur(pyr_b.back(), blur_sigma), h, w));
    }

    FlowField flow;
    for (int l = static_cast<int>(pyr_a.size()) - 1; l >= 0; --l) {
        const auto& ia = pyr_a[static_cast<std::size_t>(l)];
        const auto& ib = pyr_b[static_cast<std::size_t>(l)];
        FlowField cur(ia.height, ia.width);
        if (!flow.data.empty()) {
            FloatImage fx(flow.height, flow.width), fy(flow.height, flow.width);
            for (int y = 0; y < flow.height; ++y)
                for (int x = 0; x < flow.width; ++x) {
                    fx.at(y, x) = flow.dx(y, x);
                    fy.at(y, x) = flow.dy(y, x);
                }
            const FloatImage ux = resize_bilinear(fx, ia.height, ia.width);
            const FloatImage uy = resize_bilinear(fy, ia.height, ia.width);
            const double sx = static_cast<double>(ia.width) / flow.width;
            const double sy = static_cast<double>(ia.height) / flow.height;
            for (int y = 0; y < ia.height; ++y)
                for (int x = 0; x < ia.width; ++x) {
                    cur.dx(y, x) = ux.at(y, x) * sx;
                    cur.dy(y, x) = uy.at(y, x) * sy;
                }
        }
        const PolyImage p1 = poly_expand(ia, params.poly_n, params.poly_sigma);
        const PolyImage p2 = poly_expand(ib, params.poly_n, params.poly_sigma);
        for (int it = 0; it < params.iterations; ++it) refine(p1, p2, cur, params.window);
        flow = std::move(cur);
    }
    for (double& v : flow.data)
        if (!std::isfinite(v)) v = 0.0;
    return flow;
}

FloatImage flow_magnitude_raw(const FlowField& f) {
    FloatImage out(f.height, f.width);
    for (int y = 0; y < f.height; ++y)
        for (int x = 0; x < f.width; ++x) out.at(y, x) = std::hypot(f.dx(y, x), f.dy(y, x));
    return out;
}

GrayImage flow_magnitude(const FlowField& f) {
    const FloatImage mag = flow_magnitude_raw(f);
    GrayImage out(f.height, f.width);
    for (std::size_t i = 0; i < mag.size(); ++i) {
        out.pixels[i] = saturate_u8(std::min(mag.pixels[i], kMagnitudeClipPx) / kMagnitudeClipPx * 255.0);
    }
    return out;
}

std::vector<GrayImage> temporal_stack(const VideoClip& clip, int n_pairs, const FlowParams& params) {
    require(n_pairs >= 1, "flow", "n_pairs must be positive");
    require(clip.frame_count() >= n_pairs + 1, "flow",
            "clip " + clip.clip_id + " has " + std::to_string(clip.frame_count()) + " frames; at least " +
                std::to_string(n_pairs + 1) + " required");
    std::vector<GrayImage> out;
    for (int i : dataio::sample_indices_uniform(clip.frame_count() - 1, n_pairs)) {
        const auto& a = clip.frames[static_cast<std::size_t>(i)];
        const auto& b = clip.frames[static_cast<std::size_t>(i) + 1];
        out.push_back(a);
        out.push_back(flow_magnitude(dense_flow(a, b, params)));
    }
    return out;
}

namespace {

void put_u32(std::ostream& out, std::uint32_t v) {
    const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                                static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    out.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(std::istream& in) {
    unsigned char b[4] = {};
    in.read(reinterpret_cast<char*>(b), 4);
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

}  // namespace

void write_flow_cache(const std::filesystem::path& path, const FlowField& f) {
    std::ofstream out(path, std::ios::binary);
    require(out.good(), "flow", "cannot write " + path.string());
    out.write("HNFL", 4);
    put_u32(out, static_cast<std::uint32_t>(f.height));
    put_u32(out, static_cast<std::uint32_t>(f.width));
    put_u32(out, 2);
    for (double v : f.data) put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
}

FlowField read_flow_cache(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    require(in.good(), "flow", "cannot read " + path.string());
    char magic[4] = {};
    in.read(magic, 4);
    require(std::memcmp(magic, "HNFL", 4) == 0, "flow", "bad flow cache magic in " + path.string());
    const auto h = get_u32(in);
    const auto w = get_u32(in);
    require(get_u32(in) == 2, "flow", "flow cache must hold two channels");
    FlowField f(static_cast<int>(h), static_cast<int>(w));
    for (double& v : f.data) v = std::bit_cast<float>(get_u32(in));
    require(in.good(), "flow", "truncated flow cache " + path.string());
    return f;
}

}  // namespace herdnet::flow
