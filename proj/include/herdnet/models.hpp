#pragma once

#include <array>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "herdnet/labels.hpp"
#include "herdnet/nn.hpp"

namespace herdnet::models {

enum class Arch { Spatial, Temporal, TwoStream, Hybrid, TimeSformer };

std::string to_string(Arch arch);
Arch parse_arch(const std::string& name);

enum class Scale { Desk, Full };

struct ModelConfig {
    Arch arch = Arch::Spatial;
    nn::BackboneSpec backbone = nn::desk_backbone();
    int image_size = 64;
    int frames_per_video = 8;  // frames per clip; flow pairs for the temporal stream
    // Hybrid encoder.
    int token_dim = 40;
    int encoder_layers = 5;
    int encoder_heads = 5;
    bool per_cell_tokens = false;  // one token per backbone cell instead of per frame
    // TimeSformer.
    int patch_size = 16;
    int embed_dim = 48;
    int depth = 2;
    int heads = 4;
    bool divided_attention = true;  // false: joint space-time attention
    int mlp_ratio = 4;
    double dropout_rate = 0.1;
    int n_classes = kNumClasses;
    std::uint64_t init_seed = 0;

    // Channels of the input tensor [B, K, H, W].
    int input_channels() const;
    bool operator==(const ModelConfig&) const = default;
};

// Architecture defaults at desk or full scale (full-scale frame counts and sizes).
ModelConfig preset(Arch arch, Scale scale = Scale::Desk);
void validate(const ModelConfig& config);

nlohmann::json to_json(const ModelConfig& config);
ModelConfig config_from_json(const nlohmann::json& j);

// Pixel normalisation applied to every 8-bit input: (v / 255 - 0.5) / 0.25.
double normalize_pixel(std::uint8_t v);

// Common interface: [B, K, H, W] normalised input -> [B, n_classes] logits.
class Classifier : public nn::Module {
public:
    explicit Classifier(ModelConfig config) : config_(std::move(config)) {}
    const ModelConfig& config() const { return config_; }

    virtual nn::Tensor forward(const nn::Tensor& input, nn::Trace* trace = nullptr) = 0;
    // Layer whose activations feed Grad-CAM.
    virtual std::string explain_layer() const = 0;

protected:
    void check_input(const nn::Tensor& input) const;

    ModelConfig config_;
};

// Backbone applied to every frame; per-frame logits averaged.
class SpatialCnn : public Classifier {
public:
    explicit SpatialCnn(const ModelConfig& config);
    nn::Tensor forward(const nn::Tensor& input, nn::Trace* trace = nullptr) override;
    std::string explain_layer() const override { return "backbone.stage" + std::to_string(config_.backbone.widths.size()); }

private:
    Rng rng_;
    nn::ResNet backbone_;
    nn::Linear fc_;
};

// Backbone over the interleaved gray/flow stack.
class TemporalCnn : public Classifier {
public:
    explicit TemporalCnn(const ModelConfig& config);
    nn::Tensor forward(const nn::Tensor& input, nn::Trace* trace = nullptr) override;
    std::string explain_layer() const override { return "backbone.stage" + std::to_string(config_.backbone.widths.size()); }

private:
    Rng rng_;
    nn::ResNet backbone_;
    nn::Linear fc_;
};

// Per-frame backbone embeddings -> transformer encoder -> max over tokens
// -> dropout -> linear.
class HybridTransformer : public Classifier {
public:
    explicit HybridTransformer(const ModelConfig& config);
    nn::Tensor forward(const nn::Tensor& input, nn::Trace* trace = nullptr) override;
    std::string explain_layer() const override { return "backbone.stage" + std::to_string(config_.backbone.widths.size()); }

    // Skips the encoder layers (the position table is still added).
    bool bypass_encoder = false;

private:
    Rng rng_;
    nn::ResNet backbone_;
    nn::Linear proj_;
    nn::Tensor pos_;
    std::vector<std::unique_ptr<nn::EncoderLayer>> layers_;
    nn::LayerNorm norm_;
    nn::Linear head_;
    Rng dropout_rng_;
};

// Video transformer with divided (time, then space) or joint attention.
class TimeSformer : public Classifier {
public:
    explicit TimeSformer(const ModelConfig& config);
    nn::Tensor forward(const nn::Tensor& input, nn::Trace* trace = nullptr) override;
    // norm1 of the last block: [B*T, 1 + N, D] (class token first).
    std::string explain_layer() const override;
    int grid() const { return config_.image_size / config_.patch_size; }

    // Embeds patches of [B, T, H, W]: [B, T, N, D] before position terms.
    nn::Tensor patch_tokens(const nn::Tensor& input) const;

private:
    struct Block {
        std::unique_ptr<nn::LayerNorm> temporal_norm;
        std::unique_ptr<nn::SelfAttention> temporal_attn;
        std::unique_ptr<nn::Linear> temporal_fc;
        std::unique_ptr<nn::LayerNorm> norm1;
        std::unique_ptr<nn::SelfAttention> attn;
        std::unique_ptr<nn::LayerNorm> norm2;
        std::unique_ptr<nn::Mlp> mlp;
    };

    Rng rng_;
    nn::Linear patch_embed_;
    nn::Tensor cls_token_, pos_space_, pos_time_;
    std::vector<Block> blocks_;
    nn::LayerNorm norm_;
    nn::Linear head_;
};

std::unique_ptr<Classifier> make_classifier(const ModelConfig& config);

// (softmax(s) + softmax(t)) / 2.
std::vector<double> fuse_two_stream(const std::vector<double>& s, const std::vector<double>& t);

// Spatial and temporal streams, trained separately, fused at the score level.
struct TwoStream {
    std::unique_ptr<Classifier> spatial;
    std::unique_ptr<Classifier> temporal;
};

// Checkpoint: <prefix>.bin holds named float32 arrays, <prefix>.json the config.
// Binary layout (little endian): "HNCK", u32 version, u32 count, then per array
// u32 name length, name bytes, u32 rank, u32 dims[rank], float32 values.
void save_checkpoint(const std::filesystem::path& prefix, const Classifier& model);
std::unique_ptr<Classifier> load_checkpoint(const std::filesystem::path& prefix);

}  // namespace herdnet::models
