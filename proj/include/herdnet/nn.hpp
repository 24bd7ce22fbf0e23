#pragma once

#include <map>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "herdnet/tensor.hpp"

namespace herdnet::nn {

// Named intermediate activations captured during a forward pass.
struct Trace {
    std::map<std::string, Tensor> activations;

    void record(const std::string& name, const Tensor& t) { activations[name] = t; }
    const Tensor& at(const std::string& name) const;
    bool has(const std::string& name) const { return activations.count(name) > 0; }
};

// Parameter / buffer registry with recursive naming ("block.conv1.weight").
// Modules are neither copyable nor movable: children are registered by address.
class Module {
public:
    Module() = default;
    virtual ~Module() = default;
    Module(const Module&) = delete;
    Module& operator=(const Module&) = delete;

    void train(bool on = true);
    void eval() { train(false); }
    bool training() const { return training_; }

    std::vector<std::pair<std::string, Tensor>> named_parameters() const;
    std::vector<std::pair<std::string, Tensor>> named_buffers() const;
    std::vector<Tensor> parameters() const;
    std::size_t parameter_count() const;
    void zero_grad();

    // Parameters followed by buffers; the checkpoint payload.
    std::vector<std::pair<std::string, Tensor>> state() const;
    // Copies values from `state` into this module. Names and shapes must match.
    void load_state(const std::vector<std::pair<std::string, Tensor>>& state);

protected:
    Tensor register_parameter(const std::string& name, Tensor t);
    Tensor register_buffer(const std::string& name, Tensor t);
    void register_module(const std::string& name, Module& child);

private:
    void collect(const std::string& prefix, bool buffers, std::vector<std::pair<std::string, Tensor>>& out) const;

    bool training_ = true;
    std::vector<std::pair<std::string, Tensor>> params_;
    std::vector<std::pair<std::string, Tensor>> buffers_;
    std::vector<std::pair<std::string, Module*>> children_;
};

class Conv2d : public Module {
public:
    Conv2d(int in, int out, int kernel, int stride, int padding, Rng& rng);
    Tensor forward(const Tensor& x) const { return conv2d(x, weight, stride_, padding_); }

    Tensor weight;

private:
    int stride_, padding_;
};

class BatchNorm2d : public Module {
public:
    explicit BatchNorm2d(int channels);
    Tensor forward(const Tensor& x);

    Tensor gamma, beta, running_mean, running_var;
};

class Linear : public Module {
public:
    Linear(int in, int out, Rng& rng);
    Tensor forward(const Tensor& x) const { return linear(x, weight, bias); }

    Tensor weight, bias;
};

class LayerNorm : public Module {
public:
    explicit LayerNorm(int dim);
    Tensor forward(const Tensor& x) const { return layer_norm(x, gamma, beta); }

    Tensor gamma, beta;
};

// Multi-head self-attention over [B, L, D].
class SelfAttention : public Module {
public:
    SelfAttention(int dim, int heads, Rng& rng);
    Tensor forward(const Tensor& x) const;

private:
    int dim_, heads_;
    Linear qkv_, proj_;
};

class Mlp : public Module {
public:
    Mlp(int dim, int hidden, Rng& rng);
    Tensor forward(const Tensor& x) const { return fc2_.forward(gelu(fc1_.forward(x))); }

private:
    Linear fc1_, fc2_;
};

// Pre-norm encoder layer: x + attn(norm1(x)), then x + mlp(norm2(x)).
class EncoderLayer : public Module {
public:
    EncoderLayer(int dim, int heads, int mlp_hidden, Rng& rng);
    Tensor forward(const Tensor& x) const;

    LayerNorm norm1, norm2;
    SelfAttention attn;
    Mlp mlp;
};

class BasicBlock : public Module {
public:
    BasicBlock(int in, int out, int stride, Rng& rng);
    Tensor forward(const Tensor& x);

private:
    Conv2d conv1_, conv2_;
    BatchNorm2d bn1_, bn2_;
    std::unique_ptr<Conv2d> down_conv_;
    std::unique_ptr<BatchNorm2d> down_bn_;
};

struct BackboneSpec {
    std::vector<int> widths{16, 32, 64, 128};
    std::vector<int> blocks{1, 1, 1, 1};
    std::vector<int> strides{1, 2, 2, 1};
    int stem_width = 16;
    int stem_kernel = 3;
    int stem_stride = 2;
    int pool_kernel = 2;
    int pool_stride = 2;

    bool operator==(const BackboneSpec&) const = default;
};

// Desk preset: 4 stages of one residual block, widths 16/32/64/128.
BackboneSpec desk_backbone();
// 18-layer residual network: 7x7/2 stem, 3x3/2 pool, 2 blocks per stage.
BackboneSpec resnet18_backbone();

// Residual CNN. forward() returns the last stage's feature map and records each
// stage's output as "<prefix>stage<k>" when a trace is given.
class ResNet : public Module {
public:
    ResNet(const BackboneSpec& spec, int in_channels, Rng& rng);
    Tensor forward(const Tensor& x, Trace* trace = nullptr, const std::string& prefix = "backbone.");
    int out_channels() const { return spec_.widths.back(); }

private:
    BackboneSpec spec_;
    Conv2d stem_;
    BatchNorm2d stem_bn_;
    std::vector<std::vector<std::unique_ptr<BasicBlock>>> stages_;
};

}  // namespace herdnet::nn
