#include "herdnet/models.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>

namespace herdnet::models {

using nn::Tensor;

std::string to_string(Arch arch) {
    switch (arch) {
        case Arch::Spatial: return "spatial";
        case Arch::Temporal: return "temporal";
        case Arch::TwoStream: return "two_stream";
        case Arch::Hybrid: return "hybrid";
        case Arch::TimeSformer: return "timesformer";
    }
    return "?";
}

Arch parse_arch(const std::string& name) {
    for (Arch a : {Arch::Spatial, Arch::Temporal, Arch::TwoStream, Arch::Hybrid, Arch::TimeSformer})
        if (to_string(a) == name) return a;
    throw Error("models", "unknown architecture '" + name + "'");
}

int ModelConfig::input_channels() const { return arch == Arch::Temporal ? 2 * frames_per_video : frames_per_video; }

ModelConfig preset(Arch arch, Scale scale) {
    ModelConfig c;
    c.arch = arch;
    const bool full = scale == Scale::Full;
    if (full) c.backbone = nn::resnet18_backbone();
    c.image_size = full ? 300 : 64;
    switch (arch) {
        case Arch::Spatial:
        case Arch::TwoStream: c.frames_per_video = 8; break;
        case Arch::Temporal: c.frames_per_video = 7; break;
        case Arch::Hybrid:
            c.frames_per_video = 12;
            c.token_dim = full ? 500 : 40;
            break;
        case Arch::TimeSformer:
            c.frames_per_video = 8;
            c.image_size = full ? 224 : 64;
            c.embed_dim = full ? 768 : 48;
            c.depth = full ? 12 : 2;
            c.heads = full ? 12 : 4;
            c.dropout_rate = 0.0;
            break;
    }
    return c;
}

void validate(const ModelConfig& c) {
    require(c.arch != Arch::TwoStream, "models", "two_stream is a pair of spatial and temporal configs");
    require(c.image_size >= 8 && c.frames_per_video >= 1 && c.n_classes >= 2, "models", "invalid image size, frame count or class count");
    require(c.dropout_rate >= 0.0 && c.dropout_rate < 1.0, "models", "dropout rate must be in [0, 1)");
    if (c.arch == Arch::Hybrid)
        require(c.encoder_heads >= 1 && c.token_dim % c.encoder_heads == 0, "models",
                "encoder_heads (" + std::to_string(c.encoder_heads) + ") must divide token_dim (" + std::to_string(c.token_dim) + ")");
    if (c.arch == Arch::TimeSformer) {
        require(c.patch_size >= 1 && c.image_size % c.patch_size == 0, "models",
                "image size " + std::to_string(c.image_size) + " is not divisible by patch size " + std::to_string(c.patch_size));
        require(c.heads >= 1 && c.embed_dim % c.heads == 0, "models", "heads must divide embed_dim");
        require(c.depth >= 1, "models", "depth must be >= 1");
    }
}

nlohmann::json to_json(const ModelConfig& c) {
    return {{"arch", to_string(c.arch)},
            {"backbone",
             {{"widths", c.backbone.widths},
              {"blocks", c.backbone.blocks},
              {"strides", c.backbone.strides},
              {"stem_width", c.backbone.stem_width},
              {"stem_kernel", c.backbone.stem_kernel},
              {"stem_stride", c.backbone.stem_stride},
              {"pool_kernel", c.backbone.pool_kernel},
              {"pool_stride", c.backbone.pool_stride}}},
            {"image_size", c.image_size},
            {"frames_per_video", c.frames_per_video},
            {"token_dim", c.token_dim},
            {"encoder_layers", c.encoder_layers},
            {"encoder_heads", c.encoder_heads},
            {"per_cell_tokens", c.per_cell_tokens},
            {"patch_size", c.patch_size},
            {"embed_dim", c.embed_dim},
            {"depth", c.depth},
            {"heads", c.heads},
            {"divided_attention", c.divided_attention},
            {"mlp_ratio", c.mlp_ratio},
            {"dropout_rate", c.dropout_rate},
            {"n_classes", c.n_classes},
            {"init_seed", c.init_seed}};
}

ModelConfig config_from_json(const nlohmann::json& j) {
    ModelConfig c;
    try {
        c.arch = parse_arch(j.at("arch").get<std::string>());
        const auto& b = j.at("backbone");
        b.at("widths").get_to(c.backbone.widths);
        b.at("blocks").get_to(c.backbone.blocks);
        b.at("strides").get_to(c.backbone.strides);
        b.at("stem_width").get_to(c.backbone.stem_width);
        b.at("stem_kernel").get_to(c.backbone.stem_kernel);
        b.at("stem_stride").get_to(c.backbone.stem_stride);
        b.at("pool_kernel").get_to(c.backbone.pool_kernel);
        b.at("pool_stride").get_to(c.backbone.pool_stride);
        j.at("image_size").get_to(c.image_size);
        j.at("frames_per_video").get_to(c.frames_per_video);
        j.at("token_dim").get_to(c.token_dim);
        j.at("encoder_layers").get_to(c.encoder_layers);
        j.at("encoder_heads").get_to(c.encoder_heads);
        j.at("per_cell_tokens").get_to(c.per_cell_tokens);
        j.at("patch_size").get_to(c.patch_size);
        j.at("embed_dim").get_to(c.embed_dim);
        j.at("depth").get_to(c.depth);
        j.at("heads").get_to(c.heads);
        j.at("divided_attention").get_to(c.divided_attention);
        j.at("mlp_ratio").get_to(c.mlp_ratio);
        j.at("dropout_rate").get_to(c.dropout_rate);
        j.at("n_classes").get_to(c.n_classes);
        j.at("init_seed").get_to(c.init_seed);
    } catch (const nlohmann::json::exception& e) {
        throw Error("models", std::string("bad model config: ") + e.what());
    }
    return c;
}

double normalize_pixel(std::uint8_t v) { return (v / 255.0 - 0.5) / 0.25; }

void Classifier::check_input(const Tensor& input) const {
    const int k = config_.input_channels();
    require(input.ndim() == 4, "models", "input must be [B, K, H, W], got " + nn::shape_str(input.shape()));
    if (config_.arch == Arch::Temporal)
        require(input.dim(1) == k, "models",
                "temporal stream expects " + std::to_string(k) + " channels, got " + std::to_string(input.dim(1)));
    else
        require(input.dim(1) == k, "models",
                to_string(config_.arch) + " expects " + std::to_string(k) + " frames per video, got " + std::to_string(input.dim(1)));
    require(input.dim(2) == config_.image_size && input.dim(3) == config_.image_size, "models",
            "input frames must be " + std::to_string(config_.image_size) + "x" + std::to_string(config_.image_size));
}

namespace {

Tensor pooled(const Tensor& fmap) { return nn::global_avg_pool2d(fmap); }

Tensor table(nn::Shape shape, double stddev, Rng& rng) {
    std::vector<double> v(nn::numel_of(shape));
    for (double& x : v) x = stddev * rng.normal();
    return Tensor(std::move(shape), std::move(v));
}

}  // namespace

// ---------------------------------------------------------------- CNN streams

SpatialCnn::SpatialCnn(const ModelConfig& config)
    : Classifier(config),
      rng_(derive_seed(config.init_seed, 0x5A)),
      backbone_(config.backbone, 1, rng_),
      fc_(config.backbone.widths.back(), config.n_classes, rng_) {
    validate(config);
    register_module("backbone", backbone_);
    register_module("fc", fc_);
}

Tensor SpatialCnn::forward(const Tensor& input, nn::Trace* trace) {
    check_input(input);
    const int B = input.dim(0), T = input.dim(1), H = input.dim(2), W = input.dim(3);
    Tensor fmap = backbone_.forward(nn::reshape(input, {B * T, 1, H, W}), trace);
    Tensor logits = fc_.forward(pooled(fmap));
    return nn::mean_dim(nn::reshape(logits, {B, T, config_.n_classes}), 1);
}

TemporalCnn::TemporalCnn(const ModelConfig& config)
    : Classifier(config),
      rng_(derive_seed(config.init_seed, 0x7E)),
      backbone_(config.backbone, config.input_channels(), rng_),
      fc_(config.backbone.widths.back(), config.n_classes, rng_) {
    validate(config);
    register_module("backbone", backbone_);
    register_module("fc", fc_);
}

Tensor TemporalCnn::forward(const Tensor& input, nn::Trace* trace) {
    check_input(input);
    return fc_.forward(pooled(backbone_.forward(input, trace)));
}

// --------------------------------------------------------------------- hybrid

namespace {

int hybrid_tokens(const ModelConfig& c) {
    if (!c.per_cell_tokens) return c.frames_per_video;
    int size = (c.image_size + 2 * (c.backbone.stem_kernel / 2) - c.backbone.stem_kernel) / c.backbone.stem_stride + 1;
    size = (size - c.backbone.pool_kernel) / c.backbone.pool_stride + 1;
    for (int s : c.backbone.strides) size = (size + 2 - 3) / s + 1;
    return c.frames_per_video * size * size;
}

}  // namespace

HybridTransformer::HybridTransformer(const ModelConfig& config)
    : Classifier(config),
      rng_(derive_seed(config.init_seed, 0x4B)),
      backbone_(config.backbone, 1, rng_),
      proj_(config.backbone.widths.back(), config.token_dim, rng_),
      norm_(config.token_dim),
      head_(config.token_dim, config.n_classes, rng_),
      dropout_rng_(derive_seed(config.init_seed, 0xD0)) {
    validate(config);
    register_module("backbone", backbone_);
    register_module("proj", proj_);
    pos_ = register_parameter("pos_embed", table({hybrid_tokens(config), config.token_dim}, 0.02, rng_));
    for (int i = 0; i < config.encoder_layers; ++i) {
        layers_.push_back(std::make_unique<nn::EncoderLayer>(config.token_dim, config.encoder_heads, 4 * config.token_dim, rng_));
        register_module("encoder." + std::to_string(i), *layers_.back());
    }
    register_module("norm", norm_);
    register_module("head", head_);
}

Tensor HybridTransformer::forward(const Tensor& input, nn::Trace* trace) {
    check_input(input);
    const int B = input.dim(0), T = input.dim(1), H = input.dim(2), W = input.dim(3);
    Tensor fmap = backbone_.forward(nn::reshape(input, {B * T, 1, H, W}), trace);
    Tensor tokens;
    if (config_.per_cell_tokens) {
        const int C = fmap.dim(1), cells = fmap.dim(2) * fmap.dim(3);
        Tensor cellwise = nn::permute(nn::reshape(fmap, {B * T, C, cells}), {0, 2, 1});
        tokens = proj_.forward(nn::reshape(cellwise, {B, T * cells, C}));
    } else {
        tokens = nn::reshape(proj_.forward(pooled(fmap)), {B, T, config_.token_dim});
    }
    Tensor x = nn::add(tokens, pos_);
    if (!bypass_encoder) {
        for (auto& layer : layers_) x = layer->forward(x);
        x = norm_.forward(x);
    }
    if (trace) trace->record("encoder.output", x);
    Tensor pooled_tokens = nn::max_dim(x, 1);
    return head_.forward(nn::dropout(pooled_tokens, config_.dropout_rate, training(), dropout_rng_));
}

// ---------------------------------------------------------------- TimeSformer

TimeSformer::TimeSformer(const ModelConfig& config)
    : Classifier(config),
      rng_(derive_seed(config.init_seed, 0x75)),
      patch_embed_(config.patch_size * config.patch_size, config.embed_dim, rng_),
      norm_(config.embed_dim),
      head_(config.embed_dim, config.n_classes, rng_) {
    validate(config);
    const int D = config.embed_dim;
    const int n = grid() * grid();
    register_module("patch_embed", patch_embed_);
    cls_token_ = register_parameter("cls_token", table({D}, 0.02, rng_));
    pos_space_ = register_parameter("pos_embed", table({n + 1, D}, 0.02, rng_));
    pos_time_ = register_parameter("time_embed", table({config.frames_per_video, D}, 0.02, rng_));
    for (int i = 0; i < config.depth; ++i) {
        Block b;
        const std::string p = "blocks." + std::to_string(i) + ".";
        if (config.divided_attention) {
            b.temporal_norm = std::make_unique<nn::LayerNorm>(D);
            b.temporal_attn = std::make_unique<nn::SelfAttention>(D, config.heads, rng_);
            b.temporal_fc = std::make_unique<nn::Linear>(D, D, rng_);
        }
        b.norm1 = std::make_unique<nn::LayerNorm>(D);
        b.attn = std::make_unique<nn::SelfAttention>(D, config.heads, rng_);
        b.norm2 = std::make_unique<nn::LayerNorm>(D);
        b.mlp = std::make_unique<nn::Mlp>(D, config.mlp_ratio * D, rng_);
        blocks_.push_back(std::move(b));
        Block& r = blocks_.back();
        if (r.temporal_norm) {
            register_module(p + "temporal_norm1", *r.temporal_norm);
            register_module(p + "temporal_attn", *r.temporal_attn);
            register_module(p + "temporal_fc", *r.temporal_fc);
        }
        register_module(p + "norm1", *r.norm1);
        register_module(p + "attn", *r.attn);
        register_module(p + "norm2", *r.norm2);
        register_module(p + "mlp", *r.mlp);
    }
    register_module("norm", norm_);
    register_module("head", head_);
}

std::string TimeSformer::explain_layer() const { return "blocks." + std::to_string(config_.depth - 1) + ".norm1"; }

Tensor TimeSformer::patch_tokens(const Tensor& input) const {
    const int B = input.dim(0), T = input.dim(1), g = grid(), p = config_.patch_size;
    Tensor x = nn::reshape(input, {B, T, g, p, g, p});
    x = nn::permute(x, {0, 1, 2, 4, 3, 5});
    return patch_embed_.forward(nn::reshape(x, {B, T, g * g, p * p}));
}

Tensor TimeSformer::forward(const Tensor& input, nn::Trace* trace) {
    check_input(input);
    const int B = input.dim(0), T = input.dim(1), N = grid() * grid(), D = config_.embed_dim;
    // Patches with space and time positions: [B, T, N, D].
    Tensor x = nn::add(patch_tokens(input), nn::narrow(pos_space_, 0, 1, N));
    x = nn::permute(nn::add(nn::permute(x, {0, 2, 1, 3}), pos_time_), {0, 2, 1, 3});
    Tensor cls = nn::broadcast_to(nn::add(cls_token_, nn::reshape(nn::narrow(pos_space_, 0, 0, 1), {D})), {B, D});

    for (std::size_t i = 0; i < blocks_.size(); ++i) {
        Block& b = blocks_[i];
        const std::string name = "blocks." + std::to_string(i) + ".norm1";
        if (!config_.divided_attention) {
            Tensor full = nn::concat({nn::reshape(cls, {B, 1, D}), nn::reshape(x, {B, T * N, D})}, 1);
            Tensor normed = b.norm1->forward(full);
            if (trace) trace->record(name, normed);
            full = nn::add(full, b.attn->forward(normed));
            full = nn::add(full, b.mlp->forward(b.norm2->forward(full)));
            cls = nn::reshape(nn::narrow(full, 1, 0, 1), {B, D});
            x = nn::reshape(nn::narrow(full, 1, 1, T * N), {B, T, N, D});
            continue;
        }
        // Time: each patch position attends over frames. A single frame has
        // nothing to attend over, so the sublayer is skipped.
        if (T > 1) {
            Tensor xt = nn::reshape(nn::permute(x, {0, 2, 1, 3}), {B * N, T, D});
            Tensor rt = b.temporal_fc->forward(b.temporal_attn->forward(b.temporal_norm->forward(xt)));
            x = nn::add(x, nn::permute(nn::reshape(rt, {B, N, T, D}), {0, 2, 1, 3}));
        }
        // Space: per frame, [cls + patches]; the class token is shared across
        // frames and its per-frame updates are averaged.
        Tensor cls_rep = nn::reshape(nn::permute(nn::broadcast_to(cls, {T, B, D}), {1, 0, 2}), {B * T, 1, D});
        Tensor s = nn::concat({cls_rep, nn::reshape(x, {B * T, N, D})}, 1);
        Tensor normed = b.norm1->forward(s);
        if (trace) trace->record(name, normed);
        Tensor a = b.attn->forward(normed);
        cls = nn::add(cls, nn::mean_dim(nn::reshape(nn::narrow(a, 1, 0, 1), {B, T, D}), 1));
        x = nn::add(x, nn::reshape(nn::narrow(a, 1, 1, N), {B, T, N, D}));
        // MLP over every token.
        Tensor full = nn::concat({nn::reshape(cls, {B, 1, D}), nn::reshape(x, {B, T * N, D})}, 1);
        full = nn::add(full, b.mlp->forward(b.norm2->forward(full)));
        cls = nn::reshape(nn::narrow(full, 1, 0, 1), {B, D});
        x = nn::reshape(nn::narrow(full, 1, 1, T * N), {B, T, N, D});
    }
    return head_.forward(norm_.forward(cls));
}

// ---------------------------------------------------------------------------

std::unique_ptr<Classifier> make_classifier(const ModelConfig& config) {
    switch (config.arch) {
        case Arch::Spatial: return std::make_unique<SpatialCnn>(config);
        case Arch::Temporal: return std::make_unique<TemporalCnn>(config);
        case Arch::Hybrid: return std::make_unique<HybridTransformer>(config);
        case Arch::TimeSformer: return std::make_unique<TimeSformer>(config);
        case Arch::TwoStream: break;
    }
    throw Error("models", "two_stream is built from separate spatial and temporal classifiers");
}

std::vector<double> fuse_two_stream(const std::vector<double>& s, const std::vector<double>& t) {
    require(s.size() == t.size() && !s.empty(), "models",
            "stream score lengths differ (" + std::to_string(s.size()) + " vs " + std::to_string(t.size()) + ")");
    auto softmax = [](const std::vector<double>& x) {
        const double mx = *std::max_element(x.begin(), x.end());
        std::vector<double> p(x.size());
        double z = 0.0;
        for (std::size_t i = 0; i < x.size(); ++i) z += p[i] = std::exp(x[i] - mx);
        for (double& v : p) v /= z;
        return p;
    };
    const auto ps = softmax(s), pt = softmax(t);
    std::vector<double> out(s.size());
    for (std::size_t i = 0; i < s.size(); ++i) out[i] = 0.5 * (ps[i] + pt[i]);
    return out;
}

// ----------------------------------------------------------------- checkpoint

namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

constexpr char kMagic[4] = {'H', 'N', 'C', 'K'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::ofstream& out, std::uint32_t v) { out.write(reinterpret_cast<const char*>(&v), 4); }

std::uint32_t get_u32(std::ifstream& in) {
    std::uint32_t v = 0;
    in.read(reinterpret_cast<char*>(&v), 4);
    require(static_cast<bool>(in), "models", "truncated checkpoint");
    return v;
}

std::filesystem::path with_ext(const std::filesystem::path& prefix, const char* ext) {
    return prefix.string() + ext;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& prefix, const Classifier& model) {
    if (prefix.has_parent_path()) std::filesystem::create_directories(prefix.parent_path());
    std::ofstream out(with_ext(prefix, ".bin"), std::ios::binary);
    require(static_cast<bool>(out), "models", "cannot write " + with_ext(prefix, ".bin").string());
    const auto state = model.state();
    out.write(kMagic, 4);
    put_u32(out, kVersion);
    put_u32(out, static_cast<std::uint32_t>(state.size()));
    for (const auto& [name, t] : state) {
        put_u32(out, static_cast<std::uint32_t>(name.size()));
        out.write(name.data(), static_cast<std::streamsize>(name.size()));
        put_u32(out, static_cast<std::uint32_t>(t.ndim()));
        for (int d : t.shape()) put_u32(out, static_cast<std::uint32_t>(d));
        std::vector<float> values(t.data().begin(), t.data().end());
        out.write(reinterpret_cast<const char*>(values.data()), static_cast<std::streamsize>(values.size() * sizeof(float)));
    }
    require(static_cast<bool>(out), "models", "failed writing checkpoint");
    std::ofstream side(with_ext(prefix, ".json"));
    side << to_json(model.config()).dump(2) << "\n";
}

std::unique_ptr<Classifier> load_checkpoint(const std::filesystem::path& prefix) {
    std::ifstream side(with_ext(prefix, ".json"));
    require(static_cast<bool>(side), "models", "missing checkpoint config " + with_ext(prefix, ".json").string());
    nlohmann::json j;
    try {
        side >> j;
    } catch (const nlohmann::json::exception& e) {
        throw Error("models", std::string("bad checkpoint config: ") + e.what());
    }
    auto model = make_classifier(config_from_json(j));

    std::ifstream in(with_ext(prefix, ".bin"), std::ios::binary);
    require(static_cast<bool>(in), "models", "missing checkpoint " + with_ext(prefix, ".bin").string());
    char magic[4];
    in.read(magic, 4);
    require(in && std::equal(magic, magic + 4, kMagic), "models", "not a checkpoint file");
    require(get_u32(in) == kVersion, "models", "unsupported checkpoint version");
    const std::uint32_t count = get_u32(in);
    std::vector<std::pair<std::string, Tensor>> state;
    for (std::uint32_t i = 0; i < count; ++i) {
        std::string name(get_u32(in), '\0');
        in.read(name.data(), static_cast<std::streamsize>(name.size()));
        nn::Shape shape(get_u32(in));
        for (int& d : shape) d = static_cast<int>(get_u32(in));
        std::vector<float> values(nn::numel_of(shape));
        in.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(values.size() * sizeof(float)));
        require(static_cast<bool>(in), "models", "truncated checkpoint array '" + name + "'");
        state.emplace_back(name, Tensor(shape, std::vector<double>(values.begin(), values.end())));
    }
    model->load_state(state);
    model->eval();
    return model;
}

}  // namespace herdnet::models
