#include "herdnet/audit.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>

namespace herdnet::audit {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::size_t view_slot(int view_id) {
    require(view_id >= 1 && view_id <= kNumViews, "audit", "view_id out of range: " + std::to_string(view_id));
    return static_cast<std::size_t>(view_id - 1);
}

nlohmann::json number_or_null(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); }

}  // namespace

Label PerViewReport::majority(int view_id) const {
    const auto& d = distribution[view_slot(view_id)];
    return label_from_index(static_cast<int>(std::max_element(d.begin(), d.end()) - d.begin()));
}

int PerViewReport::modal_prediction(int view_id) const {
    const auto& m = matrices[view_slot(view_id)];
    if (m.total() == 0) return -1;
    int best = 0;
    long best_n = -1;
    for (int c = 0; c < kNumClasses; ++c) {
        long n = 0;
        for (int t = 0; t < kNumClasses; ++t) n += m.at(label_from_index(t), label_from_index(c));
        if (n > best_n) {
            best_n = n;
            best = c;
        }
    }
    return best;
}

int PerViewReport::modal_matches() const {
    int n = 0;
    for (int v = 1; v <= kNumViews; ++v) n += modal_prediction(v) == index_of(majority(v));
    return n;
}

PerViewReport per_view_confusion(const std::vector<metrics::Prediction>& preds, const dataio::Manifest& manifest) {
    PerViewReport r;
    for (const auto& row : manifest.rows()) ++r.distribution[view_slot(row.view_id)][static_cast<std::size_t>(index_of(row.label))];
    for (const auto& p : preds) {
        require(manifest.contains(p.clip_id), "audit", "prediction for a clip missing from the manifest: " + p.clip_id);
        const auto& row = manifest.at(p.clip_id);
        require(row.view_id == p.view_id, "audit", "view_id of " + p.clip_id + " disagrees with the manifest");
        r.matrices[view_slot(row.view_id)].counts[static_cast<std::size_t>(index_of(p.truth))]
                                                 [static_cast<std::size_t>(index_of(p.predicted))]++;
        r.global.counts[static_cast<std::size_t>(index_of(p.truth))][static_cast<std::size_t>(index_of(p.predicted))]++;
    }
    return r;
}

AdjacencyCurves adjacency_pp_curve(const std::vector<metrics::Prediction>& all_split_preds,
                                   const dataio::Manifest& manifest, bool predicted_class_pp) {
    std::map<std::string, std::pair<double, int>> acc;
    for (const auto& p : all_split_preds) {
        require(manifest.contains(p.clip_id), "audit", "prediction for a clip missing from the manifest: " + p.clip_id);
        require(p.probability.size() == static_cast<std::size_t>(kNumClasses), "audit", "prediction without class probabilities");
        const Label k = predicted_class_pp ? p.predicted : p.truth;
        auto& a = acc[p.clip_id];
        a.first += p.probability[static_cast<std::size_t>(index_of(k))];
        ++a.second;
    }
    AdjacencyCurves out;
    for (const auto& row : manifest.rows()) {
        const auto it = acc.find(row.clip_id);
        if (it == acc.end()) {
            ++out.omitted;
            continue;
        }
        out.curves[static_cast<std::size_t>(index_of(row.label))].push_back(
            {row.clip_id, row.capture_index, row.view_id, it->second.first / it->second.second, it->second.second});
    }
    double within = 0.0, across = 0.0;
    int n_within = 0, n_across = 0;
    for (const auto& curve : out.curves)
        for (std::size_t i = 1; i < curve.size(); ++i) {
            const double d = std::abs(curve[i].pp - curve[i - 1].pp);
            if (curve[i].view_id == curve[i - 1].view_id) {
                within += d;
                ++n_within;
            } else {
                across += d;
                ++n_across;
            }
        }
    out.within_view_step = n_within ? within / n_within : kNaN;
    out.across_view_step = n_across ? across / n_across : kNaN;
    return out;
}

MajorityAgreement majority_agreement(const PerViewReport& per_view, const std::vector<metrics::Prediction>& preds,
                                     int permutations, std::uint64_t seed) {
    require(permutations >= 0, "audit", "permutations must be nonnegative");
    MajorityAgreement m;
    m.permutations = permutations;
    if (preds.empty()) return m;
    std::vector<int> majority, predicted;
    for (const auto& p : preds) {
        majority.push_back(index_of(per_view.majority(p.view_id)));
        predicted.push_back(index_of(p.predicted));
    }
    const auto agree = [&](const std::vector<int>& pred) {
        int n = 0;
        for (std::size_t i = 0; i < pred.size(); ++i) n += pred[i] == majority[i];
        return static_cast<double>(n) / static_cast<double>(pred.size());
    };
    m.agreement = agree(predicted);
    if (permutations == 0) return m;
    // Shuffling the predicted labels keeps the model's class frequencies and
    // breaks only their link to the views.
    Rng rng(derive_seed(seed, 0xa9ee));
    std::vector<double> samples;
    std::vector<int> perm = predicted;
    for (int k = 0; k < permutations; ++k) {
        rng.shuffle(perm);
        samples.push_back(agree(perm));
    }
    const double mean = std::accumulate(samples.begin(), samples.end(), 0.0) / permutations;
    double var = 0.0;
    for (double s : samples) var += (s - mean) * (s - mean);
    m.baseline = mean;
    m.baseline_sd = std::sqrt(var / permutations);
    return m;
}

// --- probes ---

training::Hyperparams probe_hyper() {
    auto h = training::desk_preset(models::Arch::Spatial);
    h.epochs = 12;
    return h;
}

scenegen::BiasConfig PaddingProbeConfig::correlated_bias() {
    scenegen::BiasConfig b;
    b.padding_class_correlation = 1.0;
    b.class_length_offset = {0, 0, -4};
    return b;
}

scenegen::BiasConfig PaddingProbeConfig::control_bias() { return {}; }

namespace {

// Drops NF clips.
dataio::Dataset two_class(const dataio::Dataset& all) {
    dataio::Dataset out;
    std::vector<dataio::ManifestRow> rows;
    for (std::size_t i = 0; i < all.clips.size(); ++i) {
        const auto& row = all.manifest.rows()[i];
        if (row.label == Label::NF) continue;
        rows.push_back(row);
        out.clips.push_back(all.clips[i]);
    }
    out.manifest = dataio::Manifest(std::move(rows));
    return out;
}

// 60/20/20 of each class.
dataio::SplitCounts holdout_counts(const std::array<int, kNumClasses>& totals) {
    dataio::SplitCounts c{};
    for (std::size_t k = 0; k < totals.size(); ++k) {
        const int n = totals[k];
        const int val = n / 5, test = n / 5;
        c[k] = {n - val - test, val, test};
    }
    return c;
}

struct ProbeData {
    dataio::Dataset data;
    dataio::SplitSpec split;
};

ProbeData probe_data(const std::array<int, kNumClasses>& counts, const scenegen::BiasConfig& bias, std::uint64_t seed,
                     const scenegen::SceneOptions& scene, bool drop_nf) {
    auto gen = scenegen::generate_dataset(counts, bias, seed, scene);
    ProbeData p{drop_nf ? two_class(gen.dataset) : std::move(gen.dataset), {}};
    p.split = dataio::make_splits(p.data.manifest, 1, holdout_counts(p.data.manifest.class_totals()), seed).at(1);
    return p;
}

double mean_of(const std::vector<double>& v) {
    return v.empty() ? kNaN : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

// Positions (among the sampled frames) that show a padding frame.
std::vector<bool> padding_positions(int frame_count, int sequence_length, int n) {
    const int len = sequence_length > 0 ? sequence_length : frame_count;
    std::vector<bool> pad;
    for (int i : dataio::sample_indices_uniform(len, n)) pad.push_back(i >= frame_count);
    return pad;
}

PaddingSetting run_padding_setting(const PaddingProbeConfig& config, const ProbeData& pd, int sequence_length) {
    training::Hyperparams h = config.hyper;
    h.sequence_length = sequence_length;
    const auto mc = training::model_config(models::Arch::Spatial, h);
    auto trained = training::train(mc, pd.data, pd.split, h);
    auto& model = *trained.model;
    const auto preds = training::evaluate_split(model, trained.preprocess, pd.data, pd.split.test, pd.split.split_id);

    PaddingSetting s;
    s.sequence_length = sequence_length;
    s.accuracy = metrics::accuracy(preds);
    const auto cm = metrics::confusion(preds);
    for (int c = 0; c < kNumClasses; ++c) {
        long n = 0;
        for (int k = 0; k < kNumClasses; ++k) n += cm.at(label_from_index(c), label_from_index(k));
        s.class_accuracy[static_cast<std::size_t>(c)] =
            n ? static_cast<double>(cm.at(label_from_index(c), label_from_index(c))) / static_cast<double>(n) : kNaN;
    }
    std::array<std::vector<double>, kNumClasses> pp;
    for (const auto& p : preds) {
        if (p.n_padding == 0) continue;
        ++s.n_padded;
        for (int c = 0; c < kNumClasses; ++c) pp[static_cast<std::size_t>(c)].push_back(p.probability[static_cast<std::size_t>(c)]);
    }
    for (int c = 0; c < kNumClasses; ++c) s.mean_pp_padded[static_cast<std::size_t>(c)] = mean_of(pp[static_cast<std::size_t>(c)]);

    // Frame-level Grad-CAM (target R) on padded clips.
    std::vector<double> cam_share, frame_share;
    for (const auto& p : preds) {
        if (p.n_padding == 0 || s.n_explained >= config.max_explained) continue;
        const VideoClip& clip = pd.data.clip(p.clip_id);
        const auto in = training::prepare_input(clip, mc, trained.preprocess);
        const auto x = training::make_batch({&in});
        const auto mass = explain::frame_cam_mass(model, x, index_of(Label::R));
        const auto pad = padding_positions(clip.frame_count(), sequence_length, mc.frames_per_video);
        double on_pad = 0.0, total = 0.0;
        int n_pad = 0;
        for (std::size_t f = 0; f < mass.size(); ++f) {
            total += mass[f];
            if (pad[f]) {
                on_pad += mass[f];
                ++n_pad;
            }
        }
        ++s.n_explained;
        cam_share.push_back(total > 0.0 ? on_pad / total : 0.0);
        frame_share.push_back(static_cast<double>(n_pad) / static_cast<double>(mass.size()));
        if (!s.padding_map) {
            const auto maps = explain::gradcam(model, x, index_of(Label::R));
            const auto f = static_cast<std::size_t>(std::find(pad.begin(), pad.end(), true) - pad.begin());
            s.padding_map = maps.at(f);
            s.padding_map->clip_id = clip.clip_id;
        }
    }
    s.padding_cam_share = mean_of(cam_share);
    s.padding_frame_share = mean_of(frame_share);
    return s;
}

}  // namespace

PaddingProbeReport padding_probe(const PaddingProbeConfig& config) {
    scenegen::validate(config.bias);
    training::validate(config.hyper);
    require(config.clips_per_class >= 10, "audit", "padding probe needs at least 10 clips per class");
    require(!config.sequence_lengths.empty(), "audit", "padding probe needs at least one sequence length");
    const ProbeData pd = probe_data({1, config.clips_per_class, config.clips_per_class}, config.bias, config.seed,
                                    config.scene, true);
    int longest = 0;
    for (const auto& row : pd.data.manifest.rows()) longest = std::max(longest, row.frame_count);
    for (int len : config.sequence_lengths) {
        require(len > 0, "audit", "sequence lengths must be positive");
        bool needs = false;
        for (const auto& row : pd.data.manifest.rows()) needs = needs || row.frame_count < len;
        require(needs, "audit", "no clip is shorter than sequence length " + std::to_string(len) + "; nothing gets padded");
    }
    PaddingProbeReport r;
    r.unpadded = run_padding_setting(config, pd, 0);
    for (int len : config.sequence_lengths) {
        auto s = run_padding_setting(config, pd, len);
        s.accuracy_delta = s.accuracy - r.unpadded.accuracy;
        r.settings.push_back(std::move(s));
    }
    return r;
}

TimestampProbeReport timestamp_probe(const TimestampProbeConfig& config) {
    require(config.scene.timestamp_enabled, "audit", "timestamp probe needs timestamps in the data");
    require(config.timestamp_correlation > 1.0 / 3.0 && config.timestamp_correlation <= 1.0, "audit",
            "timestamp probe needs a timestamp-class correlation above 1/3");
    training::validate(config.hyper);
    scenegen::BiasConfig bias;
    bias.timestamp_class_correlation = config.timestamp_correlation;
    const ProbeData pd = probe_data(config.counts, bias, config.seed, config.scene, false);

    TimestampProbeReport r;
    const int S = config.hyper.image_size;
    const auto box = dataio::default_crop_box(S, S);
    GrayImage mask(S, S, 0);
    for (int y = box.y0; y < box.y0 + box.height; ++y)
        for (int x = box.x0; x < box.x0 + box.width; ++x) mask.at(y, x) = 1;
    r.box_area_fraction = static_cast<double>(box.height * box.width) / (static_cast<double>(S) * S);

    for (bool crop : {false, true}) {
        training::Hyperparams h = config.hyper;
        h.crop_timestamp = crop;
        const auto mc = training::model_config(models::Arch::Spatial, h);
        auto trained = training::train(mc, pd.data, pd.split, h);
        const auto preds = training::evaluate_split(*trained.model, trained.preprocess, pd.data, pd.split.test);
        std::vector<double> masses;
        for (const auto& p : preds) {
            if (static_cast<int>(masses.size()) >= config.max_explained) break;
            const auto maps = explain::explain_clip(*trained.model, trained.preprocess, pd.data.clip(p.clip_id),
                                                    index_of(p.predicted), config.cam_layer);
            masses.push_back(explain::region_mass(explain::average_maps(maps), mask));
        }
        (crop ? r.cropped_accuracy : r.uncropped_accuracy) = metrics::accuracy(preds);
        (crop ? r.cropped_box_mass : r.uncropped_box_mass) = mean_of(masses);
        r.n_explained = static_cast<int>(masses.size());
    }
    return r;
}

// --- views ---

FloatImage clip_mean_image(const VideoClip& clip) {
    require(clip.frame_count() > 0, "audit", "empty clip");
    FloatImage m(clip.height(), clip.width(), 0.0);
    for (const auto& f : clip.frames)
        for (std::size_t i = 0; i < f.size(); ++i) m.pixels[i] += f.pixels[i];
    for (double& v : m.pixels) v /= clip.frame_count();
    return m;
}

namespace {

// Separable box filter; clamps at the border.
FloatImage box_blur(const FloatImage& img, int radius) {
    FloatImage tmp(img.height, img.width, 0.0), out(img.height, img.width, 0.0);
    const int n = 2 * radius + 1;
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x) {
            double s = 0.0;
            for (int k = -radius; k <= radius; ++k) s += img.at(y, std::clamp(x + k, 0, img.width - 1));
            tmp.at(y, x) = s / n;
        }
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x) {
            double s = 0.0;
            for (int k = -radius; k <= radius; ++k) s += tmp.at(std::clamp(y + k, 0, img.height - 1), x);
            out.at(y, x) = s / n;
        }
    return out;
}

}  // namespace

void ViewClassifier::fit(const std::vector<FloatImage>& images, const std::vector<int>& view_ids) {
    require(!images.empty() && images.size() == view_ids.size(), "audit", "view classifier needs one view per image");
    std::map<int, std::pair<FloatImage, int>> sums;
    for (std::size_t i = 0; i < images.size(); ++i) {
        auto it = sums.find(view_ids[i]);
        if (it == sums.end()) it = sums.emplace(view_ids[i], std::make_pair(FloatImage(images[i].height, images[i].width, 0.0), 0)).first;
        require(images[i].same_shape(it->second.first), "audit", "view classifier images differ in size");
        const FloatImage smooth = box_blur(images[i], kSmoothRadius);
        for (std::size_t k = 0; k < smooth.size(); ++k) it->second.first.pixels[k] += smooth.pixels[k];
        ++it->second.second;
    }
    views_.clear();
    centroids_.clear();
    for (auto& [view, acc] : sums) {
        for (double& v : acc.first.pixels) v /= acc.second;
        views_.push_back(view);
        centroids_.push_back(std::move(acc.first));
    }
}

int ViewClassifier::predict(const FloatImage& image) const {
    require(!centroids_.empty(), "audit", "view classifier is not fitted");
    double best = std::numeric_limits<double>::infinity();
    int view = views_.front();
    require(image.same_shape(centroids_.front()), "audit", "image size differs from the fitted views");
    const FloatImage smooth = box_blur(image, kSmoothRadius);
    for (std::size_t c = 0; c < centroids_.size(); ++c) {
        double d = 0.0;
        for (std::size_t k = 0; k < smooth.size(); ++k) {
            const double e = smooth.pixels[k] - centroids_[c].pixels[k];
            d += e * e;
        }
        if (d < best) {
            best = d;
            view = views_[c];
        }
    }
    return view;
}

// --- json ---

nlohmann::json to_json(const PerViewReport& r) {
    nlohmann::json views = nlohmann::json::array();
    for (int v = 1; v <= kNumViews; ++v) {
        const auto s = view_slot(v);
        views.push_back({{"view_id", v},
                         {"confusion", metrics::to_json(r.matrices[s])},
                         {"distribution", r.distribution[s]},
                         {"majority", std::string(to_string(r.majority(v)))},
                         {"modal_prediction", r.modal_prediction(v) < 0 ? nlohmann::json(nullptr)
                                                                         : nlohmann::json(std::string(to_string(label_from_index(r.modal_prediction(v)))))}});
    }
    return {{"views", views}, {"global", metrics::to_json(r.global)}, {"modal_matches", r.modal_matches()}};
}

nlohmann::json to_json(const AdjacencyCurves& c) {
    nlohmann::json curves = nlohmann::json::object();
    for (int k = 0; k < kNumClasses; ++k) {
        nlohmann::json pts = nlohmann::json::array();
        for (const auto& p : c.curves[static_cast<std::size_t>(k)])
            pts.push_back({{"clip_id", p.clip_id}, {"capture_index", p.capture_index}, {"view_id", p.view_id}, {"pp", p.pp}, {"n_splits", p.n_splits}});
        curves[std::string(to_string(label_from_index(k)))] = pts;
    }
    return {{"curves", curves},
            {"omitted", c.omitted},
            {"within_view_step", number_or_null(c.within_view_step)},
            {"across_view_step", number_or_null(c.across_view_step)}};
}

nlohmann::json to_json(const MajorityAgreement& m) {
    return {{"agreement", m.agreement}, {"baseline", m.baseline}, {"baseline_sd", m.baseline_sd}, {"permutations", m.permutations}};
}

namespace {

nlohmann::json class_array(const std::array<double, kNumClasses>& a) {
    nlohmann::json j = nlohmann::json::object();
    for (int c = 0; c < kNumClasses; ++c) j[std::string(to_string(label_from_index(c)))] = number_or_null(a[static_cast<std::size_t>(c)]);
    return j;
}

nlohmann::json to_json(const PaddingSetting& s) {
    return {{"sequence_length", s.sequence_length},
            {"accuracy", s.accuracy},
            {"class_accuracy", class_array(s.class_accuracy)},
            {"accuracy_delta", s.accuracy_delta},
            {"n_padded", s.n_padded},
            {"mean_pp_padded", class_array(s.mean_pp_padded)},
            {"padding_cam_share", number_or_null(s.padding_cam_share)},
            {"padding_frame_share", number_or_null(s.padding_frame_share)},
            {"n_explained", s.n_explained}};
}

}  // namespace

nlohmann::json to_json(const PaddingProbeReport& r) {
    nlohmann::json settings = nlohmann::json::array();
    for (const auto& s : r.settings) settings.push_back(to_json(s));
    return {{"unpadded", to_json(r.unpadded)}, {"settings", settings}};
}

nlohmann::json to_json(const TimestampProbeReport& r) {
    return {{"uncropped_accuracy", r.uncropped_accuracy},
            {"cropped_accuracy", r.cropped_accuracy},
            {"uncropped_box_mass", number_or_null(r.uncropped_box_mass)},
            {"cropped_box_mass", number_or_null(r.cropped_box_mass)},
            {"box_area_fraction", r.box_area_fraction},
            {"n_explained", r.n_explained}};
}

nlohmann::json audit_report(const std::vector<metrics::Prediction>& preds, const dataio::Manifest& manifest,
                            bool predicted_class_pp, std::uint64_t seed) {
    const auto per_view = per_view_confusion(preds, manifest);
    return {{"per_view", to_json(per_view)},
            {"adjacency_curves", to_json(adjacency_pp_curve(preds, manifest, predicted_class_pp))},
            {"adjacency_pp", predicted_class_pp ? "predicted_class" : "true_class"},
            {"majority_agreement", to_json(majority_agreement(per_view, preds, 1000, seed))}};
}

}  // namespace herdnet::audit
