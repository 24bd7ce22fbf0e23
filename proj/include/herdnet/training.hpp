#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "herdnet/dataio.hpp"
#include "herdnet/flow.hpp"
#include "herdnet/metrics.hpp"
#include "herdnet/models.hpp"

namespace herdnet::training {

struct Hyperparams {
    double learning_rate = 1e-3;
    int epochs = 30;
    int batch_size = 4;
    int image_size = 64;
    int frames_per_video = 8;  // flow pairs for the temporal stream
    bool use_scheduler = true;
    int scheduler_patience = 10;
    double scheduler_factor = 0.1;
    int early_stop_patience = 25;
    bool augment_flip = true;
    double grad_clip = 5.0;  // global L2 norm; 0 disables
    // Preprocessing.
    bool crop_timestamp = true;
    // 0: sample frames_per_video frames across the whole clip. L > 0: pad with
    // zero frames or keep the first L frames, then sample.
    int sequence_length = 0;
    std::uint64_t seed = 0;

    bool operator==(const Hyperparams&) const = default;
};

// Full-scale rows: learning rate, epochs, batch size, image size, frames.
Hyperparams full_scale_preset(models::Arch arch);
// Desk-scale defaults used by the tests and the synthetic experiments.
Hyperparams desk_preset(models::Arch arch);
void validate(const Hyperparams& h);

// Flat key = value file using the Hyperparams field names.
void write_ini(const std::filesystem::path& path, const Hyperparams& h);
// Overrides the fields present in the file; unknown keys are rejected.
Hyperparams read_ini(const std::filesystem::path& path, Hyperparams base);

// Model configuration for `arch` with the sizes taken from `h`.
models::ModelConfig model_config(models::Arch arch, const Hyperparams& h, models::Scale scale = models::Scale::Desk);

// --- inputs ---

struct Preprocess {
    bool crop_timestamp = true;
    int sequence_length = 0;
    flow::FlowParams flow;
};

Preprocess preprocess_of(const Hyperparams& h);

// One clip's model input as 8-bit channels [K, S, S].
struct ClipInput {
    int channels = 0;
    int size = 0;
    std::vector<std::uint8_t> pixels;
    int n_padding = 0;  // channels showing (or, for flow, derived from) a padding frame
};

ClipInput prepare_input(const VideoClip& clip, const models::ModelConfig& config, const Preprocess& pre);

// Normalised [B, K, S, S] tensor; flip[i] mirrors sample i horizontally.
nn::Tensor make_batch(const std::vector<const ClipInput*>& inputs, const std::vector<bool>& flip = {});

// --- optimisation ---

class Adam {
public:
    Adam(std::vector<nn::Tensor> params, double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);
    void step();
    double lr() const { return lr_; }
    void set_lr(double lr) { lr_ = lr; }

private:
    std::vector<nn::Tensor> params_;
    std::vector<std::vector<double>> m_, v_;
    double lr_, beta1_, beta2_, eps_;
    long step_count_ = 0;
};

// Scales gradients so their global L2 norm is at most max_norm; returns the norm before scaling.
double clip_grad_norm(const std::vector<nn::Tensor>& params, double max_norm);

// Multiplies the learning rate by `factor` once the monitored loss has not
// improved for `patience` consecutive epochs.
class PlateauScheduler {
public:
    PlateauScheduler(double lr, int patience, double factor);
    // Feeds one epoch's validation loss; returns the learning rate for the next epoch.
    double step(double loss);
    double lr() const { return lr_; }
    int reductions() const { return reductions_; }

private:
    double lr_;
    int patience_;
    double factor_;
    double best_;
    int bad_epochs_ = 0;
    int reductions_ = 0;
};

struct EpochRecord {
    int epoch = 0;
    double train_loss = 0.0;
    double val_loss = 0.0;
    double val_acc = 0.0;
    double lr = 0.0;
};

struct TrainHistory {
    std::vector<EpochRecord> epochs;
    int selected_epoch = -1;  // epoch of minimum validation loss

    void write_csv(const std::filesystem::path& path) const;
};

struct TrainResult {
    std::unique_ptr<models::Classifier> model;
    TrainHistory history;
    Preprocess preprocess;
};

// Loss/accuracy of a model over already-prepared inputs, in evaluation mode.
struct EvalStats {
    double loss = 0.0;
    double accuracy = 0.0;
};

// Trains on split.train, selects by split.val. An empty validation subset falls
// back to the training loss for selection.
// `backbone_init`, when given, seeds the model's backbone.* tensors (see copy_backbone).
TrainResult train(const models::ModelConfig& config, const dataio::Dataset& data, const dataio::SplitSpec& split,
                  const Hyperparams& hyper, const models::Classifier* backbone_init = nullptr);

struct TwoStreamResult {
    TrainResult spatial, temporal;
};

TwoStreamResult train_two_stream(const dataio::Dataset& data, const dataio::SplitSpec& split, const Hyperparams& spatial,
                                 const Hyperparams& temporal, const models::Classifier* backbone_init = nullptr);

// --- backbone pretraining ---

// Single-frame fish / no-fish classification on generated frames, a small
// stand-in for pretraining on a large image corpus.
struct PretrainConfig {
    int frames = 600;
    int epochs = 4;
    int batch_size = 16;
    int image_size = 64;
    double learning_rate = 1e-3;
    std::uint64_t seed = 0;
};

struct PretrainResult {
    std::unique_ptr<models::Classifier> model;  // spatial, one frame, two classes
    double train_accuracy = 0.0;
};

PretrainResult pretrain_backbone(const nn::BackboneSpec& backbone, const PretrainConfig& config);

// Copies every backbone.* tensor of `from` whose name and shape exist in `to`;
// returns the number copied. A stem with a different channel count (the
// temporal stream) is skipped.
int copy_backbone(const models::Classifier& from, models::Classifier& to);

// Per-clip predictions in capture order.
std::vector<metrics::Prediction> evaluate_split(models::Classifier& model, const Preprocess& pre,
                                                const dataio::Dataset& data, const std::vector<std::string>& clip_ids,
                                                int split_id = 0);
// Fused predictions: probability = mean of the two softmaxes, scores = log of it.
std::vector<metrics::Prediction> evaluate_two_stream(models::Classifier& spatial, const Preprocess& spatial_pre,
                                                     models::Classifier& temporal, const Preprocess& temporal_pre,
                                                     const dataio::Dataset& data,
                                                     const std::vector<std::string>& clip_ids, int split_id = 0);

// Saves <dir>/<name>.bin/.json plus the preprocessing as <dir>/<name>.pre.json.
void save_trained(const std::filesystem::path& dir, const std::string& name, const models::Classifier& model,
                  const Preprocess& pre);
struct LoadedModel {
    std::unique_ptr<models::Classifier> model;
    Preprocess preprocess;
};
LoadedModel load_trained(const std::filesystem::path& dir, const std::string& name);

nlohmann::json to_json(const Preprocess& p);
Preprocess preprocess_from_json(const nlohmann::json& j);

}  // namespace herdnet::training
