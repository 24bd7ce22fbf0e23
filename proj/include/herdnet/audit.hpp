#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "herdnet/dataio.hpp"
#include "herdnet/explain.hpp"
#include "herdnet/metrics.hpp"
#include "herdnet/synthetic.hpp"
#include "herdnet/training.hpp"

namespace herdnet::audit {

using ClassCounts = std::array<int, kNumClasses>;

struct PerViewReport {
    std::array<metrics::ConfusionMatrix, kNumViews> matrices{};  // views 1..16 at index 0..15
    std::array<ClassCounts, kNumViews> distribution{};          // over the whole manifest
    metrics::ConfusionMatrix global;

    // Most frequent class of a view in the manifest (ties -> lowest class index).
    Label majority(int view_id) const;
    // Column with the most predictions in a view's matrix; -1 for a view with none.
    int modal_prediction(int view_id) const;
    // Views whose modal prediction equals their majority class.
    int modal_matches() const;
};

// Partitions the predictions by camera view. Predictions may repeat a clip
// (several splits); each counts once per occurrence.
PerViewReport per_view_confusion(const std::vector<metrics::Prediction>& preds, const dataio::Manifest& manifest);

struct CurvePoint {
    std::string clip_id;
    int capture_index = 0;
    int view_id = 1;
    double pp = 0.0;
    int n_splits = 0;
};

struct AdjacencyCurves {
    std::array<std::vector<CurvePoint>, kNumClasses> curves;  // capture order
    int omitted = 0;  // manifest clips never predicted
    // Mean |pp difference| between consecutive points of a curve, for pairs from
    // the same view and pairs straddling a view change.
    double within_view_step = 0.0;
    double across_view_step = 0.0;
};

// Per clip, the mean over splits of the PP of its true class (or of its
// per-split predicted class when `predicted_class_pp`).
AdjacencyCurves adjacency_pp_curve(const std::vector<metrics::Prediction>& all_split_preds,
                                   const dataio::Manifest& manifest, bool predicted_class_pp = false);

struct MajorityAgreement {
    double agreement = 0.0;  // fraction of predictions equal to their view's majority class
    double baseline = 0.0;   // mean agreement with predictions permuted across clips
    double baseline_sd = 0.0;
    int permutations = 0;
};

MajorityAgreement majority_agreement(const PerViewReport& per_view, const std::vector<metrics::Prediction>& preds,
                                     int permutations = 1000, std::uint64_t seed = 0);

// --- leakage probes ---

// Spatial-stream desk preset shortened to 12 epochs.
training::Hyperparams probe_hyper();

struct PaddingProbeConfig {
    int clips_per_class = 100;  // R and NR; NF is not used
    scenegen::BiasConfig bias = correlated_bias();
    std::vector<int> sequence_lengths{24, 32};
    training::Hyperparams hyper = probe_hyper();
    int max_explained = 20;
    std::uint64_t seed = 1;
    scenegen::SceneOptions scene;

    // R clips drawn from the short length bin, NR from the medium one.
    static scenegen::BiasConfig correlated_bias();
    // Length independent of class.
    static scenegen::BiasConfig control_bias();
};

struct PaddingSetting {
    int sequence_length = 0;  // 0: no padding, frames sampled over each whole clip
    double accuracy = 0.0;
    std::array<double, kNumClasses> class_accuracy{};  // NaN for a class with no test clips
    double accuracy_delta = 0.0;  // vs the unpadded model
    int n_padded = 0;             // test clips with padding frames in the model input
    std::array<double, kNumClasses> mean_pp_padded{};  // mean PP of each class over padded clips
    double padding_cam_share = 0.0;  // Grad-CAM mass on padding frames / total, padded R clips
    double padding_frame_share = 0.0;  // padding frames / frames in those inputs
    int n_explained = 0;
    std::optional<explain::ActivationMap> padding_map;  // Grad-CAM (target R) of one padding frame
};

struct PaddingProbeReport {
    std::vector<PaddingSetting> settings;
    PaddingSetting unpadded;
};

PaddingProbeReport padding_probe(const PaddingProbeConfig& config);

struct TimestampProbeConfig {
    ClassCounts counts{80, 80, 80};
    double timestamp_correlation = 0.95;
    training::Hyperparams hyper = probe_hyper();
    int max_explained = 30;
    // The desk backbone's last stage is a 4x4 grid at 64 px; its 8x8 stage is
    // nearer the resolution of a full-size backbone's last layer.
    std::string cam_layer = "backbone.stage2";
    std::uint64_t seed = 1;
    scenegen::SceneOptions scene;
};

struct TimestampProbeReport {
    double uncropped_accuracy = 0.0;
    double cropped_accuracy = 0.0;
    double uncropped_box_mass = 0.0;  // mean Grad-CAM region_mass over the timestamp box
    double cropped_box_mass = 0.0;
    double box_area_fraction = 0.0;
    int n_explained = 0;
};

TimestampProbeReport timestamp_probe(const TimestampProbeConfig& config);

// --- views without labels ---

// Nearest-centroid classifier over per-clip mean images. Images are box-blurred
// first so thin structures that shift by a pixel or two between clips still overlap.
class ViewClassifier {
public:
    static constexpr int kSmoothRadius = 3;

    void fit(const std::vector<FloatImage>& images, const std::vector<int>& view_ids);
    int predict(const FloatImage& image) const;

private:
    std::vector<int> views_;
    std::vector<FloatImage> centroids_;
};

FloatImage clip_mean_image(const VideoClip& clip);

// --- report ---

nlohmann::json to_json(const PerViewReport& r);
nlohmann::json to_json(const AdjacencyCurves& c);
nlohmann::json to_json(const MajorityAgreement& m);
nlohmann::json to_json(const PaddingProbeReport& r);
nlohmann::json to_json(const TimestampProbeReport& r);

// AuditReport of a set of predictions: per_view, adjacency_curves, majority_agreement.
nlohmann::json audit_report(const std::vector<metrics::Prediction>& preds, const dataio::Manifest& manifest,
                            bool predicted_class_pp = false, std::uint64_t seed = 0);

}  // namespace herdnet::audit
