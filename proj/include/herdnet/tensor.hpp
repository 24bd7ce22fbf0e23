#pragma once

#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "herdnet/error.hpp"
#include "herdnet/rng.hpp"

// Minimal reverse-mode automatic differentiation over dense row-major
// double-precision arrays.
namespace herdnet::nn {

using Shape = std::vector<int>;

std::size_t numel_of(const Shape& shape);
std::string shape_str(const Shape& shape);

class Tensor {
public:
    struct Impl;

    Tensor() = default;
    explicit Tensor(Shape shape, double fill = 0.0, bool requires_grad = false);
    Tensor(Shape shape, std::vector<double> values, bool requires_grad = false);

    bool defined() const { return impl_ != nullptr; }
    const Shape& shape() const;
    int ndim() const { return static_cast<int>(shape().size()); }
    int dim(int i) const;  // negative indices count from the back
    std::size_t numel() const;

    std::span<double> data();
    std::span<const double> data() const;
    double item() const;

    bool requires_grad() const;
    void set_requires_grad(bool on);

    // Gradient accumulated by backward(); empty if none reached this tensor.
    std::span<const double> grad() const;
    std::span<double> mutable_grad();
    void zero_grad();

    // Seeds d(self)/d(self) = 1 for a single-element tensor.
    void backward();
    void backward(std::span<const double> seed);

    // Same values, no graph history.
    Tensor detach() const;

    Impl* impl() const { return impl_.get(); }
    const std::shared_ptr<Impl>& impl_ptr() const { return impl_; }

    static Tensor make(Shape shape, std::vector<double> values, std::vector<Tensor> inputs,
                       std::function<void(Impl&)> backward_fn);

private:
    explicit Tensor(std::shared_ptr<Impl> impl) : impl_(std::move(impl)) {}
    std::shared_ptr<Impl> impl_;
};

struct Tensor::Impl {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;
    bool requires_grad = false;
    std::vector<std::shared_ptr<Impl>> inputs;
    std::function<void(Impl&)> backward_fn;

    std::vector<double>& ensure_grad() {
        if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
        return grad;
    }
};

// Graph recording is on by default; NoGradGuard disables it for its scope.
bool grad_enabled();
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

// --- elementwise ---
// `b` may have the trailing shape of `a`; it is then broadcast over the leading dims.
Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor relu(const Tensor& a);
Tensor gelu(const Tensor& a);
// Zeroes with probability p and rescales by 1/(1-p); identity when !training.
Tensor dropout(const Tensor& a, double p, bool training, Rng& rng);

// --- shape ---
Tensor reshape(const Tensor& a, Shape shape);
Tensor permute(const Tensor& a, const std::vector<int>& perm);
Tensor concat(const std::vector<Tensor>& parts, int dim);
Tensor narrow(const Tensor& a, int dim, int start, int length);
// Repeats `a` (whose shape is a suffix of `shape`) over the leading dims.
Tensor broadcast_to(const Tensor& a, const Shape& shape);

// --- reductions ---
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
Tensor mean_dim(const Tensor& a, int dim);
Tensor max_dim(const Tensor& a, int dim);
// Single element at flat index.
Tensor element(const Tensor& a, std::size_t index);

// --- linear algebra ---
// x [..., in] * w[out, in]^T + bias[out]
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias);
// Batched product of [B, M, K] and [B, K, N] (or [B, N, K] when transpose_b).
Tensor bmm(const Tensor& a, const Tensor& b, bool transpose_b = false);

// --- convolutional ---
Tensor conv2d(const Tensor& x, const Tensor& w, int stride, int padding);
Tensor batch_norm2d(const Tensor& x, const Tensor& gamma, const Tensor& beta, Tensor& running_mean,
                    Tensor& running_var, bool training, double momentum = 0.1, double eps = 1e-5);
Tensor max_pool2d(const Tensor& x, int kernel, int stride);
Tensor global_avg_pool2d(const Tensor& x);

// --- normalisation and probabilities ---
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-6);
Tensor softmax_lastdim(const Tensor& x);
// Mean of -log softmax(logits)[label] over rows of [N, C].
Tensor cross_entropy(const Tensor& logits, const std::vector<int>& labels);

}  // namespace herdnet::nn
