#include "herdnet/nn.hpp"

#include <cmath>

namespace herdnet::nn {

const Tensor& Trace::at(const std::string& name) const {
    auto it = activations.find(name);
    require(it != activations.end(), "nn", "no activation recorded for layer '" + name + "'");
    return it->second;
}

void Module::train(bool on) {
    training_ = on;
    for (auto& [name, child] : children_) child->train(on);
}

Tensor Module::register_parameter(const std::string& name, Tensor t) {
    t.set_requires_grad(true);
    params_.emplace_back(name, t);
    return t;
}

Tensor Module::register_buffer(const std::string& name, Tensor t) {
    buffers_.emplace_back(name, t);
    return t;
}

void Module::register_module(const std::string& name, Module& child) { children_.emplace_back(name, &child); }

void Module::collect(const std::string& prefix, bool buffers, std::vector<std::pair<std::string, Tensor>>& out) const {
    for (const auto& [name, t] : buffers ? buffers_ : params_) out.emplace_back(prefix + name, t);
    for (const auto& [name, child] : children_) child->collect(prefix + name + ".", buffers, out);
}

std::vector<std::pair<std::string, Tensor>> Module::named_parameters() const {
    std::vector<std::pair<std::string, Tensor>> out;
    collect("", false, out);
    return out;
}

std::vector<std::pair<std::string, Tensor>> Module::named_buffers() const {
    std::vector<std::pair<std::string, Tensor>> out;
    collect("", true, out);
    return out;
}

std::vector<Tensor> Module::parameters() const {
    std::vector<Tensor> out;
    for (auto& [name, t] : named_parameters()) out.push_back(t);
    return out;
}

std::size_t Module::parameter_count() const {
    std::size_t n = 0;
    for (auto& [name, t] : named_parameters()) n += t.numel();
    return n;
}

void Module::zero_grad() {
    for (auto& t : parameters()) t.zero_grad();
}

std::vector<std::pair<std::string, Tensor>> Module::state() const {
    auto out = named_parameters();
    for (auto& b : named_buffers()) out.push_back(b);
    return out;
}

void Module::load_state(const std::vector<std::pair<std::string, Tensor>>& state) {
    auto mine = this->state();
    require(mine.size() == state.size(), "models",
            "checkpoint has " + std::to_string(state.size()) + " arrays, model expects " + std::to_string(mine.size()));
    for (std::size_t i = 0; i < mine.size(); ++i) {
        require(mine[i].first == state[i].first, "models",
                "checkpoint array '" + state[i].first + "' where '" + mine[i].first + "' was expected");
        require(mine[i].second.shape() == state[i].second.shape(), "models",
                "shape mismatch for '" + mine[i].first + "': " + shape_str(state[i].second.shape()) + " vs " +
                    shape_str(mine[i].second.shape()));
        auto dst = mine[i].second.data();
        auto src = state[i].second.data();
        std::copy(src.begin(), src.end(), dst.begin());
    }
}

namespace {

Tensor normal_tensor(Shape shape, double stddev, Rng& rng) {
    std::vector<double> v(numel_of(shape));
    for (double& x : v) x = stddev * rng.normal();
    return Tensor(std::move(shape), std::move(v));
}

Tensor uniform_tensor(Shape shape, double bound, Rng& rng) {
    std::vector<double> v(numel_of(shape));
    for (double& x : v) x = rng.uniform(-bound, bound);
    return Tensor(std::move(shape), std::move(v));
}

}  // namespace

Conv2d::Conv2d(int in, int out, int kernel, int stride, int padding, Rng& rng) : stride_(stride), padding_(padding) {
    require(in > 0 && out > 0 && kernel > 0, "nn", "conv2d sizes must be positive");
    weight = register_parameter("weight", normal_tensor({out, in, kernel, kernel}, std::sqrt(2.0 / (in * kernel * kernel)), rng));
}

BatchNorm2d::BatchNorm2d(int channels) {
    gamma = register_parameter("weight", Tensor({channels}, 1.0));
    beta = register_parameter("bias", Tensor({channels}, 0.0));
    running_mean = register_buffer("running_mean", Tensor({channels}, 0.0));
    running_var = register_buffer("running_var", Tensor({channels}, 1.0));
}

Tensor BatchNorm2d::forward(const Tensor& x) {
    return batch_norm2d(x, gamma, beta, running_mean, running_var, training());
}

Linear::Linear(int in, int out, Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    weight = register_parameter("weight", uniform_tensor({out, in}, bound, rng));
    bias = register_parameter("bias", uniform_tensor({out}, bound, rng));
}

LayerNorm::LayerNorm(int dim) {
    gamma = register_parameter("weight", Tensor({dim}, 1.0));
    beta = register_parameter("bias", Tensor({dim}, 0.0));
}

SelfAttention::SelfAttention(int dim, int heads, Rng& rng)
    : dim_(dim), heads_(heads), qkv_(dim, 3 * dim, rng), proj_(dim, dim, rng) {
    require(heads > 0 && dim % heads == 0, "models",
            "attention heads (" + std::to_string(heads) + ") must divide the embedding width (" + std::to_string(dim) + ")");
    register_module("qkv", qkv_);
    register_module("proj", proj_);
}

Tensor SelfAttention::forward(const Tensor& x) const {
    require(x.ndim() == 3 && x.dim(2) == dim_, "nn", "attention expects [B, L, " + std::to_string(dim_) + "]");
    const int B = x.dim(0), L = x.dim(1), hd = dim_ / heads_;
    // [B, L, 3, H, hd] -> [3, B, H, L, hd]
    Tensor qkv = permute(reshape(qkv_.forward(x), {B, L, 3, heads_, hd}), {2, 0, 3, 1, 4});
    auto part = [&](int i) { return reshape(narrow(qkv, 0, i, 1), {B * heads_, L, hd}); };
    Tensor q = scale(part(0), 1.0 / std::sqrt(static_cast<double>(hd)));
    Tensor attn = softmax_lastdim(bmm(q, part(1), true));
    Tensor y = bmm(attn, part(2));  // [B*H, L, hd]
    y = reshape(permute(reshape(y, {B, heads_, L, hd}), {0, 2, 1, 3}), {B, L, dim_});
    return proj_.forward(y);
}

Mlp::Mlp(int dim, int hidden, Rng& rng) : fc1_(dim, hidden, rng), fc2_(hidden, dim, rng) {
    register_module("fc1", fc1_);
    register_module("fc2", fc2_);
}

EncoderLayer::EncoderLayer(int dim, int heads, int mlp_hidden, Rng& rng)
    : norm1(dim), norm2(dim), attn(dim, heads, rng), mlp(dim, mlp_hidden, rng) {
    register_module("norm1", norm1);
    register_module("attn", attn);
    register_module("norm2", norm2);
    register_module("mlp", mlp);
}

Tensor EncoderLayer::forward(const Tensor& x) const {
    Tensor h = add(x, attn.forward(norm1.forward(x)));
    return add(h, mlp.forward(norm2.forward(h)));
}

BasicBlock::BasicBlock(int in, int out, int stride, Rng& rng)
    : conv1_(in, out, 3, stride, 1, rng), conv2_(out, out, 3, 1, 1, rng), bn1_(out), bn2_(out) {
    register_module("conv1", conv1_);
    register_module("bn1", bn1_);
    register_module("conv2", conv2_);
    register_module("bn2", bn2_);
    if (stride != 1 || in != out) {
        down_conv_ = std::make_unique<Conv2d>(in, out, 1, stride, 0, rng);
        down_bn_ = std::make_unique<BatchNorm2d>(out);
        register_module("downsample.0", *down_conv_);
        register_module("downsample.1", *down_bn_);
    }
}

Tensor BasicBlock::forward(const Tensor& x) {
    Tensor h = relu(bn1_.forward(conv1_.forward(x)));
    h = bn2_.forward(conv2_.forward(h));
    Tensor shortcut = down_conv_ ? down_bn_->forward(down_conv_->forward(x)) : x;
    return relu(add(h, shortcut));
}

BackboneSpec desk_backbone() { return {}; }

BackboneSpec resnet18_backbone() {
    BackboneSpec s;
    s.widths = {64, 128, 256, 512};
    s.blocks = {2, 2, 2, 2};
    s.strides = {1, 2, 2, 2};
    s.stem_width = 64;
    s.stem_kernel = 7;
    s.stem_stride = 2;
    s.pool_kernel = 3;
    s.pool_stride = 2;
    return s;
}

ResNet::ResNet(const BackboneSpec& spec, int in_channels, Rng& rng)
    : spec_(spec),
      stem_(in_channels, spec.stem_width, spec.stem_kernel, spec.stem_stride, spec.stem_kernel / 2, rng),
      stem_bn_(spec.stem_width) {
    require(!spec.widths.empty() && spec.widths.size() == spec.blocks.size() && spec.widths.size() == spec.strides.size(),
            "models", "backbone stage lists must have equal nonzero length");
    register_module("conv1", stem_);
    register_module("bn1", stem_bn_);
    int in = spec.stem_width;
    for (std::size_t s = 0; s < spec.widths.size(); ++s) {
        require(spec.blocks[s] >= 1, "models", "each backbone stage needs at least one block");
        auto& stage = stages_.emplace_back();
        for (int b = 0; b < spec.blocks[s]; ++b) {
            stage.push_back(std::make_unique<BasicBlock>(in, spec.widths[s], b == 0 ? spec.strides[s] : 1, rng));
            register_module("layer" + std::to_string(s + 1) + "." + std::to_string(b), *stage.back());
            in = spec.widths[s];
        }
    }
}

Tensor ResNet::forward(const Tensor& x, Trace* trace, const std::string& prefix) {
    Tensor h = relu(stem_bn_.forward(stem_.forward(x)));
    h = max_pool2d(h, spec_.pool_kernel, spec_.pool_stride);
    for (std::size_t s = 0; s < stages_.size(); ++s) {
        for (auto& block : stages_[s]) h = block->forward(h);
        if (trace) trace->record(prefix + "stage" + std::to_string(s + 1), h);
    }
    return h;
}

}  // namespace herdnet::nn
