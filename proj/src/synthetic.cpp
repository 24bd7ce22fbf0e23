#include "herdnet/synthetic.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

namespace herdnet::scenegen {

namespace {

constexpr int kSessionsPerView = 2;

// Integer column allocation by largest remainder; ties broken by row order.
std::vector<int> round_column(const std::vector<double>& expected, int total) {
    std::vector<int> out(expected.size());
    std::vector<std::pair<double, std::size_t>> rem;
    int assigned = 0;
    for (std::size_t i = 0; i < expected.size(); ++i) {
        out[i] = static_cast<int>(std::floor(expected[i]));
        assigned += out[i];
        rem.emplace_back(expected[i] - out[i], i);
    }
    std::stable_sort(rem.begin(), rem.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
    for (std::size_t k = 0; assigned < total; ++k, ++assigned) ++out[rem[k % rem.size()].second];
    return out;
}

}  // namespace

void validate(const BiasConfig& bias) {
    constexpr double lo = 1.0 / 3.0 - 1e-12;
    for (double rho : {bias.view_class_correlation, bias.padding_class_correlation, bias.timestamp_class_correlation}) {
        require(rho >= lo && rho <= 1.0, "scenegen", "correlation " + std::to_string(rho) + " outside [1/3, 1]");
    }
}

Label view_majority_class(int view_id) {
    require(view_id >= 1 && view_id <= kNumViews, "scenegen", "view_id out of range");
    return label_from_index((view_id - 1) % kNumClasses);
}

int designated_length_bin(Label label) {
    switch (label) {
        case Label::R: return 0;
        case Label::NR: return 1;
        case Label::NF: return 2;
    }
    return 1;
}

std::array<int, 2> timestamp_key(Label label) { return {index_of(label) + 1, 2 * index_of(label)}; }

std::array<std::array<int, kNumClasses>, kNumViews> view_class_counts(const std::array<int, kNumClasses>& counts,
                                                                      double rho) {
    std::array<int, kNumClasses> k{};
    for (int v = 1; v <= kNumViews; ++v) ++k[static_cast<std::size_t>(index_of(view_majority_class(v)))];
    // Unknowns: a_c (class c in each of its majority views), b_c (class c in each other view).
    Eigen::Matrix<double, 6, 6> m = Eigen::Matrix<double, 6, 6>::Zero();
    Eigen::Matrix<double, 6, 1> rhs = Eigen::Matrix<double, 6, 1>::Zero();
    for (int c = 0; c < kNumClasses; ++c) {
        m(c, c) = k[static_cast<std::size_t>(c)];
        m(c, 3 + c) = kNumViews - k[static_cast<std::size_t>(c)];
        rhs(c) = counts[static_cast<std::size_t>(c)];
        m(3 + c, c) = 1.0 - rho;
        for (int o = 0; o < kNumClasses; ++o)
            if (o != c) m(3 + c, 3 + o) = -rho;
    }
    Eigen::Matrix<double, 6, 1> sol = m.fullPivLu().solve(rhs);
    std::array<std::array<int, kNumClasses>, kNumViews> out{};
    for (int c = 0; c < kNumClasses; ++c) {
        std::vector<double> col(kNumViews);
        for (int v = 1; v <= kNumViews; ++v) {
            const bool major = index_of(view_majority_class(v)) == c;
            col[static_cast<std::size_t>(v - 1)] = std::max(0.0, major ? sol(c) : sol(3 + c));
        }
        const double sum = std::accumulate(col.begin(), col.end(), 0.0);
        const int n = counts[static_cast<std::size_t>(c)];
        for (auto& x : col) x = sum > 0 ? x * n / sum : static_cast<double>(n) / kNumViews;
        const auto ints = round_column(col, n);
        for (int v = 0; v < kNumViews; ++v) out[static_cast<std::size_t>(v)][static_cast<std::size_t>(c)] = ints[static_cast<std::size_t>(v)];
    }
    return out;
}

GeneratedDataset generate_dataset(const std::array<int, kNumClasses>& counts, const BiasConfig& bias,
                                  std::uint64_t seed, const SceneOptions& options) {
    validate(bias);
    for (int n : counts) require(n >= 1, "scenegen", "every class needs at least one clip");

    struct Draft {
        Label label;
        int view;
        int frames;
        Timestamp ts;
    };
    Rng rng(derive_seed(seed, 0xda7a));
    const auto table = view_class_counts(counts, bias.view_class_correlation);

    // Views per clip, dealt at random within each class.
    std::vector<Draft> drafts;
    for (int c = 0; c < kNumClasses; ++c) {
        std::vector<int> views;
        for (int v = 0; v < kNumViews; ++v)
            for (int i = 0; i < table[static_cast<std::size_t>(v)][static_cast<std::size_t>(c)]; ++i) views.push_back(v + 1);
        rng.shuffle(views);
        for (int v : views) drafts.push_back({label_from_index(c), v, 0, {}});
    }

    for (auto& d : drafts) {
        const int home = designated_length_bin(d.label);
        std::vector<double> w(3, (1.0 - bias.padding_class_correlation) / 2.0);
        w[static_cast<std::size_t>(home)] = bias.padding_class_correlation;
        const auto bin = kLengthBins[rng.categorical(w)];
        int len;
        if (bin[1] == kMaxFrames) {
            const double u = rng.uniform();
            len = bin[0] + static_cast<int>(std::floor((bin[1] - bin[0] + 1) * u * u));
        } else {
            len = static_cast<int>(rng.uniform_int(bin[0], bin[1]));
        }
        len += bias.class_length_offset[static_cast<std::size_t>(index_of(d.label))];
        d.frames = std::clamp(len, kMinFrames, kMaxFrames);

        Label key = d.label;
        if (!rng.bernoulli(bias.timestamp_class_correlation)) {
            const int shift = static_cast<int>(rng.uniform_int(1, 2));
            key = label_from_index((index_of(d.label) + shift) % kNumClasses);
        }
        const auto k = timestamp_key(key);
        d.ts = Timestamp{k[0], static_cast<int>(rng.uniform_int(0, 23)), k[1] * 10 + static_cast<int>(rng.uniform_int(0, 9))};
    }

    // Capture order: each view is visited in a few contiguous sessions.
    std::vector<std::vector<std::size_t>> sessions;
    for (int v = 1; v <= kNumViews; ++v) {
        std::vector<std::size_t> members;
        for (std::size_t i = 0; i < drafts.size(); ++i)
            if (drafts[i].view == v) members.push_back(i);
        rng.shuffle(members);
        const std::size_t n_sessions = std::min<std::size_t>(kSessionsPerView, members.size());
        for (std::size_t s = 0; s < n_sessions; ++s) {
            const std::size_t lo = members.size() * s / n_sessions;
            const std::size_t hi = members.size() * (s + 1) / n_sessions;
            sessions.emplace_back(members.begin() + static_cast<std::ptrdiff_t>(lo),
                                  members.begin() + static_cast<std::ptrdiff_t>(hi));
        }
    }
    rng.shuffle(sessions);

    GeneratedDataset gen;
    gen.bias = bias;
    gen.seed = seed;
    std::vector<dataio::ManifestRow> rows;
    int capture = 0;
    char id[32];
    for (const auto& session : sessions) {
        for (std::size_t i : session) {
            const Draft& d = drafts[i];
            std::snprintf(id, sizeof(id), "clip_%04d", capture);
            SceneSpec spec = random_scene(d.view, d.label, d.frames, options,
                                          derive_seed(seed, 0xc11b, static_cast<std::uint64_t>(capture)));
            spec.timestamp = d.ts;
            VideoClip clip = generate_clip(spec);
            clip.clip_id = id;
            clip.capture_index = capture;
            rows.push_back({id, d.label, d.view, capture, d.frames, std::string("clips/") + id});
            gen.dataset.clips.push_back(std::move(clip));
            gen.specs.push_back(std::move(spec));
            ++capture;
        }
    }
    gen.dataset.manifest = dataio::Manifest(std::move(rows));
    return gen;
}

void write_dataset(const std::filesystem::path& dir, const GeneratedDataset& gen) {
    std::filesystem::create_directories(dir);
    const auto& rows = gen.dataset.manifest.rows();
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const auto clip_dir = dir / rows[i].path;
        dataio::write_clip_frames(clip_dir, gen.dataset.clips[i]);
        std::ofstream(clip_dir / "scene.json") << to_json(gen.specs[i]).dump(2) << '\n';
    }
    gen.dataset.manifest.write_csv(dir / "manifest.csv");
}

nlohmann::json to_json(const BiasConfig& bias) {
    return {{"view_class_correlation", bias.view_class_correlation},
            {"padding_class_correlation", bias.padding_class_correlation},
            {"timestamp_class_correlation", bias.timestamp_class_correlation},
            {"class_length_offset", bias.class_length_offset}};
}

BiasConfig bias_from_json(const nlohmann::json& j) {
    BiasConfig b;
    b.view_class_correlation = j.value("view_class_correlation", b.view_class_correlation);
    b.padding_class_correlation = j.value("padding_class_correlation", b.padding_class_correlation);
    b.timestamp_class_correlation = j.value("timestamp_class_correlation", b.timestamp_class_correlation);
    if (j.contains("class_length_offset")) b.class_length_offset = j.at("class_length_offset").get<std::array<int, 3>>();
    return b;
}

}  // namespace herdnet::scenegen
