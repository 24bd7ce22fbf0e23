#include "herdnet/tensor.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <unordered_set>

namespace herdnet::nn {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

thread_local bool g_grad_enabled = true;

using Impl = Tensor::Impl;

bool is_suffix(const Shape& full, const Shape& tail) {
    if (tail.size() > full.size()) return false;
    return std::equal(tail.begin(), tail.end(), full.end() - static_cast<std::ptrdiff_t>(tail.size()));
}

void accumulate(Impl* in, const std::vector<double>& g) {
    if (!in->requires_grad) return;
    auto& dst = in->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
}

bool needs(const Impl* in) { return in->requires_grad; }

std::vector<std::size_t> strides_of(const Shape& s) {
    std::vector<std::size_t> st(s.size(), 1);
    for (int i = static_cast<int>(s.size()) - 2; i >= 0; --i)
        st[static_cast<std::size_t>(i)] = st[static_cast<std::size_t>(i) + 1] * static_cast<std::size_t>(s[static_cast<std::size_t>(i) + 1]);
    return st;
}

int norm_dim(int dim, int ndim) {
    const int d = dim < 0 ? dim + ndim : dim;
    require(d >= 0 && d < ndim, "nn", "dimension out of range");
    return d;
}

}  // namespace

std::size_t numel_of(const Shape& shape) {
    std::size_t n = 1;
    for (int d : shape) {
        require(d >= 0, "nn", "negative dimension in shape");
        n *= static_cast<std::size_t>(d);
    }
    return n;
}

std::string shape_str(const Shape& shape) {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) s += (i ? ", " : "") + std::to_string(shape[i]);
    return s + "]";
}

bool grad_enabled() { return g_grad_enabled; }
NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

Tensor::Tensor(Shape shape, double fill, bool requires_grad) : impl_(std::make_shared<Impl>()) {
    impl_->data.assign(numel_of(shape), fill);
    impl_->shape = std::move(shape);
    impl_->requires_grad = requires_grad;
}

Tensor::Tensor(Shape shape, std::vector<double> values, bool requires_grad) : impl_(std::make_shared<Impl>()) {
    require(values.size() == numel_of(shape), "nn",
            "value count " + std::to_string(values.size()) + " does not match shape " + shape_str(shape));
    impl_->shape = std::move(shape);
    impl_->data = std::move(values);
    impl_->requires_grad = requires_grad;
}

const Shape& Tensor::shape() const { return impl_->shape; }
int Tensor::dim(int i) const { return impl_->shape[static_cast<std::size_t>(norm_dim(i, ndim()))]; }
std::size_t Tensor::numel() const { return impl_->data.size(); }
std::span<double> Tensor::data() { return impl_->data; }
std::span<const double> Tensor::data() const { return impl_->data; }

double Tensor::item() const {
    require(numel() == 1, "nn", "item() needs a single-element tensor, got " + shape_str(shape()));
    return impl_->data[0];
}

bool Tensor::requires_grad() const { return impl_->requires_grad; }
void Tensor::set_requires_grad(bool on) { impl_->requires_grad = on; }
std::span<const double> Tensor::grad() const { return impl_->grad; }
std::span<double> Tensor::mutable_grad() { return impl_->ensure_grad(); }
void Tensor::zero_grad() { std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0); }

Tensor Tensor::detach() const { return Tensor(shape(), impl_->data, false); }

Tensor Tensor::make(Shape shape, std::vector<double> values, std::vector<Tensor> inputs,
                    std::function<void(Impl&)> backward_fn) {
    auto impl = std::make_shared<Impl>();
    impl->shape = std::move(shape);
    impl->data = std::move(values);
    if (g_grad_enabled) {
        const bool any = std::any_of(inputs.begin(), inputs.end(),
                                     [](const Tensor& t) { return t.defined() && t.requires_grad(); });
        if (any) {
            impl->requires_grad = true;
            for (auto& t : inputs)
                if (t.defined()) impl->inputs.push_back(t.impl_);
            impl->backward_fn = std::move(backward_fn);
        }
    }
    return Tensor(std::move(impl));
}

void Tensor::backward() {
    require(numel() == 1, "nn", "backward() without a seed needs a scalar");
    const double one = 1.0;
    backward(std::span<const double>(&one, 1));
}

void Tensor::backward(std::span<const double> seed) {
    require(seed.size() == numel(), "nn", "seed size does not match tensor");
    require(requires_grad(), "nn", "tensor does not require grad");
    std::vector<Impl*> order;
    std::unordered_set<Impl*> seen;
    std::vector<std::pair<Impl*, std::size_t>> stack{{impl_.get(), 0}};
    seen.insert(impl_.get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->inputs.size()) {
            Impl* child = node->inputs[next++].get();
            if (child->requires_grad && seen.insert(child).second) stack.push_back({child, 0});
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    auto& g = impl_->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += seed[i];
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Impl* node = *it;
        if (node->backward_fn && !node->grad.empty()) node->backward_fn(*node);
    }
}

// ---------------------------------------------------------------- elementwise

Tensor add(const Tensor& a, const Tensor& b) {
    require(is_suffix(a.shape(), b.shape()), "nn", "add: cannot broadcast " + shape_str(b.shape()) + " to " + shape_str(a.shape()));
    const std::size_t n = a.numel(), m = b.numel();
    std::vector<double> out(a.data().begin(), a.data().end());
    const auto bd = b.data();
    for (std::size_t i = 0; i < n; ++i) out[i] += bd[i % m];
    Impl* ai = a.impl();
    Impl* bi = b.impl();
    return Tensor::make(a.shape(), std::move(out), {a, b}, [ai, bi, m](Impl& self) {
        accumulate(ai, self.grad);
        if (needs(bi)) {
            auto& gb = bi->ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i) gb[i % m] += self.grad[i];
        }
    });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    require(is_suffix(a.shape(), b.shape()), "nn", "mul: cannot broadcast " + shape_str(b.shape()) + " to " + shape_str(a.shape()));
    const std::size_t n = a.numel(), m = b.numel();
    std::vector<double> out(n);
    const auto ad = a.data();
    const auto bd = b.data();
    for (std::size_t i = 0; i < n; ++i) out[i] = ad[i] * bd[i % m];
    Impl* ai = a.impl();
    Impl* bi = b.impl();
    return Tensor::make(a.shape(), std::move(out), {a, b}, [ai, bi, m](Impl& self) {
        const std::size_t n = self.grad.size();
        if (needs(ai)) {
            auto& ga = ai->ensure_grad();
            for (std::size_t i = 0; i < n; ++i) ga[i] += self.grad[i] * bi->data[i % m];
        }
        if (needs(bi)) {
            auto& gb = bi->ensure_grad();
            for (std::size_t i = 0; i < n; ++i) gb[i % m] += self.grad[i] * ai->data[i];
        }
    });
}

Tensor scale(const Tensor& a, double s) {
    std::vector<double> out(a.data().begin(), a.data().end());
    for (double& v : out) v *= s;
    Impl* ai = a.impl();
    return Tensor::make(a.shape(), std::move(out), {a}, [ai, s](Impl& self) {
        auto& ga = ai->ensure_grad();
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += s * self.grad[i];
    });
}

Tensor relu(const Tensor& a) {
    std::vector<double> out(a.data().begin(), a.data().end());
    for (double& v : out) v = v > 0.0 ? v : 0.0;
    Impl* ai = a.impl();
    return Tensor::make(a.shape(), std::move(out), {a}, [ai](Impl& self) {
        auto& ga = ai->ensure_grad();
        for (std::size_t i = 0; i < ga.size(); ++i)
            if (ai->data[i] > 0.0) ga[i] += self.grad[i];
    });
}

Tensor gelu(const Tensor& a) {
    std::vector<double> out(a.numel());
    const auto ad = a.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = 0.5 * ad[i] * (1.0 + std::erf(ad[i] / std::numbers::sqrt2));
    Impl* ai = a.impl();
    return Tensor::make(a.shape(), std::move(out), {a}, [ai](Impl& self) {
        auto& ga = ai->ensure_grad();
        const double inv_sqrt_2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
        for (std::size_t i = 0; i < ga.size(); ++i) {
            const double x = ai->data[i];
            const double d = 0.5 * (1.0 + std::erf(x / std::numbers::sqrt2)) + x * std::exp(-0.5 * x * x) * inv_sqrt_2pi;
            ga[i] += d * self.grad[i];
        }
    });
}

Tensor dropout(const Tensor& a, double p, bool training, Rng& rng) {
    if (!training || p <= 0.0) return a;
    require(p < 1.0, "nn", "dropout probability must be < 1");
    std::vector<double> mask(a.numel());
    for (double& m : mask) m = rng.bernoulli(p) ? 0.0 : 1.0 / (1.0 - p);
    return mul(a, Tensor(a.shape(), std::move(mask)));
}

// ---------------------------------------------------------------------- shape

Tensor reshape(const Tensor& a, Shape shape) {
    require(numel_of(shape) == a.numel(), "nn", "reshape " + shape_str(a.shape()) + " -> " + shape_str(shape));
    Impl* ai = a.impl();
    return Tensor::make(std::move(shape), std::vector<double>(a.data().begin(), a.data().end()), {a},
                        [ai](Impl& self) { accumulate(ai, self.grad); });
}

Tensor permute(const Tensor& a, const std::vector<int>& perm) {
    const Shape& in = a.shape();
    require(perm.size() == in.size(), "nn", "permute rank mismatch");
    Shape out_shape(in.size());
    for (std::size_t i = 0; i < perm.size(); ++i) out_shape[i] = in[static_cast<std::size_t>(perm[i])];
    const auto in_strides = strides_of(in);
    // Stride in the input for each output axis.
    std::vector<std::size_t> src_stride(perm.size());
    for (std::size_t i = 0; i < perm.size(); ++i) src_stride[i] = in_strides[static_cast<std::size_t>(perm[i])];
    const std::size_t n = a.numel();
    std::vector<std::size_t> src_index(n);
    {
        std::vector<int> counter(out_shape.size(), 0);
        std::size_t src = 0;
        for (std::size_t o = 0; o < n; ++o) {
            src_index[o] = src;
            for (int d = static_cast<int>(out_shape.size()) - 1; d >= 0; --d) {
                const auto du = static_cast<std::size_t>(d);
                if (++counter[du] < out_shape[du]) {
                    src += src_stride[du];
                    break;
                }
                src -= src_stride[du] * static_cast<std::size_t>(out_shape[du] - 1);
                counter[du] = 0;
            }
        }
    }
    std::vector<double> out(n);
    const auto ad = a.data();
    for (std::size_t o = 0; o < n; ++o) out[o] = ad[src_index[o]];
    Impl* ai = a.impl();
    return Tensor::make(std::move(out_shape), std::move(out), {a},
                        [ai, idx = std::move(src_index)](Impl& self) {
                            auto& ga = ai->ensure_grad();
                            for (std::size_t o = 0; o < idx.size(); ++o) ga[idx[o]] += self.grad[o];
                        });
}

Tensor concat(const std::vector<Tensor>& parts, int dim) {
    require(!parts.empty(), "nn", "concat of nothing");
    const int nd = parts.front().ndim();
    const int d = norm_dim(dim, nd);
    Shape out_shape = parts.front().shape();
    out_shape[static_cast<std::size_t>(d)] = 0;
    for (const auto& p : parts) {
        require(p.ndim() == nd, "nn", "concat rank mismatch");
        for (int i = 0; i < nd; ++i)
            if (i != d) require(p.dim(i) == parts.front().dim(i), "nn", "concat shape mismatch");
        out_shape[static_cast<std::size_t>(d)] += p.dim(d);
    }
    std::size_t outer = 1, inner = 1;
    for (int i = 0; i < d; ++i) outer *= static_cast<std::size_t>(out_shape[static_cast<std::size_t>(i)]);
    for (int i = d + 1; i < nd; ++i) inner *= static_cast<std::size_t>(out_shape[static_cast<std::size_t>(i)]);
    const std::size_t out_block = static_cast<std::size_t>(out_shape[static_cast<std::size_t>(d)]) * inner;
    std::vector<double> out(numel_of(out_shape));
    struct Piece {
        Impl* impl;
        std::size_t offset, block;
    };
    std::vector<Piece> pieces;
    std::size_t offset = 0;
    for (const auto& p : parts) {
        const std::size_t block = static_cast<std::size_t>(p.dim(d)) * inner;
        const auto pd = p.data();
        for (std::size_t o = 0; o < outer; ++o)
            std::copy_n(pd.begin() + static_cast<std::ptrdiff_t>(o * block), block,
                        out.begin() + static_cast<std::ptrdiff_t>(o * out_block + offset));
        pieces.push_back({p.impl(), offset, block});
        offset += block;
    }
    return Tensor::make(std::move(out_shape), std::move(out), parts, [pieces, outer, out_block](Impl& self) {
        for (const auto& pc : pieces) {
            if (!needs(pc.impl)) continue;
            auto& g = pc.impl->ensure_grad();
            for (std::size_t o = 0; o < outer; ++o)
                for (std::size_t i = 0; i < pc.block; ++i) g[o * pc.block + i] += self.grad[o * out_block + pc.offset + i];
        }
    });
}

Tensor narrow(const Tensor& a, int dim, int start, int length) {
    const int d = norm_dim(dim, a.ndim());
    require(start >= 0 && length >= 0 && start + length <= a.dim(d), "nn", "narrow out of range");
    Shape out_shape = a.shape();
    out_shape[static_cast<std::size_t>(d)] = length;
    std::size_t outer = 1, inner = 1;
    for (int i = 0; i < d; ++i) outer *= static_cast<std::size_t>(a.dim(i));
    for (int i = d + 1; i < a.ndim(); ++i) inner *= static_cast<std::size_t>(a.dim(i));
    const std::size_t in_block = static_cast<std::size_t>(a.dim(d)) * inner;
    const std::size_t block = static_cast<std::size_t>(length) * inner;
    const std::size_t off = static_cast<std::size_t>(start) * inner;
    std::vector<double> out(outer * block);
    const auto ad = a.data();
    for (std::size_t o = 0; o < outer; ++o)
        std::copy_n(ad.begin() + static_cast<std::ptrdiff_t>(o * in_block + off), block,
                    out.begin() + static_cast<std::ptrdiff_t>(o * block));
    Impl* ai = a.impl();
    return Tensor::make(std::move(out_shape), std::move(out), {a}, [ai, outer, in_block, block, off](Impl& self) {
        auto& g = ai->ensure_grad();
        for (std::size_t o = 0; o < outer; ++o)
            for (std::size_t i = 0; i < block; ++i) g[o * in_block + off + i] += self.grad[o * block + i];
    });
}

Tensor broadcast_to(const Tensor& a, const Shape& shape) {
    require(is_suffix(shape, a.shape()), "nn", "broadcast_to: " + shape_str(a.shape()) + " is not a suffix of " + shape_str(shape));
    const std::size_t n = numel_of(shape), m = a.numel();
    std::vector<double> out(n);
    const auto ad = a.data();
    for (std::size_t i = 0; i < n; ++i) out[i] = ad[i % m];
    Impl* ai = a.impl();
    return Tensor::make(shape, std::move(out), {a}, [ai, m](Impl& self) {
        auto& g = ai->ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i) g[i % m] += self.grad[i];
    });
}

// ----------------------------------------------------------------- reductions

Tensor sum(const Tensor& a) {
    const auto ad = a.data();
    const double total = std::accumulate(ad.begin(), ad.end(), 0.0);
    Impl* ai = a.impl();
    return Tensor::make({1}, {total}, {a}, [ai](Impl& self) {
        auto& g = ai->ensure_grad();
        for (double& v : g) v += self.grad[0];
    });
}

Tensor mean(const Tensor& a) { return scale(sum(a), 1.0 / static_cast<double>(a.numel())); }

namespace {

struct DimSplit {
    std::size_t outer, extent, inner;
};

DimSplit split_at(const Tensor& a, int d) {
    DimSplit s{1, static_cast<std::size_t>(a.dim(d)), 1};
    for (int i = 0; i < d; ++i) s.outer *= static_cast<std::size_t>(a.dim(i));
    for (int i = d + 1; i < a.ndim(); ++i) s.inner *= static_cast<std::size_t>(a.dim(i));
    return s;
}

}  // namespace

Tensor mean_dim(const Tensor& a, int dim) {
    const int d = norm_dim(dim, a.ndim());
    const DimSplit s = split_at(a, d);
    Shape out_shape = a.shape();
    out_shape.erase(out_shape.begin() + d);
    std::vector<double> out(s.outer * s.inner, 0.0);
    const auto ad = a.data();
    for (std::size_t o = 0; o < s.outer; ++o)
        for (std::size_t e = 0; e < s.extent; ++e)
            for (std::size_t i = 0; i < s.inner; ++i) out[o * s.inner + i] += ad[(o * s.extent + e) * s.inner + i];
    const double inv = 1.0 / static_cast<double>(s.extent);
    for (double& v : out) v *= inv;
    Impl* ai = a.impl();
    return Tensor::make(std::move(out_shape), std::move(out), {a}, [ai, s, inv](Impl& self) {
        auto& g = ai->ensure_grad();
        for (std::size_t o = 0; o < s.outer; ++o)
            for (std::size_t e = 0; e < s.extent; ++e)
                for (std::size_t i = 0; i < s.inner; ++i) g[(o * s.extent + e) * s.inner + i] += inv * self.grad[o * s.inner + i];
    });
}

Tensor max_dim(const Tensor& a, int dim) {
    const int d = norm_dim(dim, a.ndim());
    const DimSplit s = split_at(a, d);
    require(s.extent > 0, "nn", "max over an empty dimension");
    Shape out_shape = a.shape();
    out_shape.erase(out_shape.begin() + d);
    std::vector<double> out(s.outer * s.inner);
    std::vector<std::size_t> arg(out.size());
    const auto ad = a.data();
    for (std::size_t o = 0; o < s.outer; ++o)
        for (std::size_t i = 0; i < s.inner; ++i) {
            std::size_t best = o * s.extent * s.inner + i;
            for (std::size_t e = 1; e < s.extent; ++e) {
                const std::size_t k = (o * s.extent + e) * s.inner + i;
                if (ad[k] > ad[best]) best = k;
            }
            out[o * s.inner + i] = ad[best];
            arg[o * s.inner + i] = best;
        }
    Impl* ai = a.impl();
    return Tensor::make(std::move(out_shape), std::move(out), {a}, [ai, arg = std::move(arg)](Impl& self) {
        auto& g = ai->ensure_grad();
        for (std::size_t j = 0; j < arg.size(); ++j) g[arg[j]] += self.grad[j];
    });
}

Tensor element(const Tensor& a, std::size_t index) {
    require(index < a.numel(), "nn", "element index out of range");
    Impl* ai = a.impl();
    return Tensor::make({1}, {a.data()[index]}, {a}, [ai, index](Impl& self) { ai->ensure_grad()[index] += self.grad[0]; });
}

// ------------------------------------------------------------- linear algebra

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias) {
    require(w.ndim() == 2, "nn", "linear weight must be 2-D");
    const int in = w.dim(1), outf = w.dim(0);
    require(x.dim(-1) == in, "nn", "linear: input width " + std::to_string(x.dim(-1)) + " != " + std::to_string(in));
    require(!bias.defined() || (bias.ndim() == 1 && bias.dim(0) == outf), "nn", "linear bias shape");
    const auto rows = static_cast<Eigen::Index>(x.numel() / static_cast<std::size_t>(in));
    Shape out_shape = x.shape();
    out_shape.back() = outf;
    std::vector<double> out(static_cast<std::size_t>(rows) * static_cast<std::size_t>(outf));
    CMapMat X(x.data().data(), rows, in);
    CMapMat W(w.data().data(), outf, in);
    MapMat Y(out.data(), rows, outf);
    Y.noalias() = X * W.transpose();
    if (bias.defined()) Y.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(bias.data().data(), outf);
    Impl* xi = x.impl();
    Impl* wi = w.impl();
    Impl* bi = bias.defined() ? bias.impl() : nullptr;
    std::vector<Tensor> inputs{x, w};
    if (bias.defined()) inputs.push_back(bias);
    return Tensor::make(std::move(out_shape), std::move(out), inputs, [xi, wi, bi, rows, in, outf](Impl& self) {
        CMapMat G(self.grad.data(), rows, outf);
        if (needs(xi)) MapMat(xi->ensure_grad().data(), rows, in).noalias() += G * CMapMat(wi->data.data(), outf, in);
        if (needs(wi)) MapMat(wi->ensure_grad().data(), outf, in).noalias() += G.transpose() * CMapMat(xi->data.data(), rows, in);
        if (bi && needs(bi)) Eigen::Map<Eigen::RowVectorXd>(bi->ensure_grad().data(), outf) += G.colwise().sum();
    });
}

Tensor bmm(const Tensor& a, const Tensor& b, bool transpose_b) {
    require(a.ndim() == 3 && b.ndim() == 3 && a.dim(0) == b.dim(0), "nn", "bmm expects matching [B, M, K] operands");
    const int B = a.dim(0), M = a.dim(1), K = a.dim(2);
    const int N = transpose_b ? b.dim(1) : b.dim(2);
    require((transpose_b ? b.dim(2) : b.dim(1)) == K, "nn", "bmm inner dimension mismatch");
    std::vector<double> out(static_cast<std::size_t>(B) * M * N);
    const std::size_t sa = static_cast<std::size_t>(M) * K, sb = static_cast<std::size_t>(K) * N, so = static_cast<std::size_t>(M) * N;
    for (int i = 0; i < B; ++i) {
        CMapMat A(a.data().data() + i * sa, M, K);
        MapMat Y(out.data() + i * so, M, N);
        if (transpose_b) Y.noalias() = A * CMapMat(b.data().data() + i * sb, N, K).transpose();
        else Y.noalias() = A * CMapMat(b.data().data() + i * sb, K, N);
    }
    Impl* ai = a.impl();
    Impl* bi = b.impl();
    return Tensor::make({B, M, N}, std::move(out), {a, b}, [=](Impl& self) {
        for (int i = 0; i < B; ++i) {
            CMapMat G(self.grad.data() + i * so, M, N);
            CMapMat A(ai->data.data() + i * sa, M, K);
            if (transpose_b) {
                CMapMat Bm(bi->data.data() + i * sb, N, K);
                if (needs(ai)) MapMat(ai->ensure_grad().data() + i * sa, M, K).noalias() += G * Bm;
                if (needs(bi)) MapMat(bi->ensure_grad().data() + i * sb, N, K).noalias() += G.transpose() * A;
            } else {
                CMapMat Bm(bi->data.data() + i * sb, K, N);
                if (needs(ai)) MapMat(ai->ensure_grad().data() + i * sa, M, K).noalias() += G * Bm.transpose();
                if (needs(bi)) MapMat(bi->ensure_grad().data() + i * sb, K, N).noalias() += A.transpose() * G;
            }
        }
    });
}

// -------------------------------------------------------------- convolutional

Tensor conv2d(const Tensor& x, const Tensor& w, int stride, int padding) {
    require(x.ndim() == 4 && w.ndim() == 4, "nn", "conv2d expects [N,C,H,W] input and [O,C,k,k] weight");
    const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const int O = w.dim(0), k = w.dim(2);
    require(w.dim(1) == C, "nn", "conv2d: input has " + std::to_string(C) + " channels, weight expects " + std::to_string(w.dim(1)));
    require(w.dim(3) == k && stride >= 1 && padding >= 0, "nn", "conv2d geometry");
    const int Ho = (H + 2 * padding - k) / stride + 1;
    const int Wo = (W + 2 * padding - k) / stride + 1;
    require(Ho > 0 && Wo > 0, "nn", "conv2d output would be empty");
    const int ckk = C * k * k;
    const std::size_t P = static_cast<std::size_t>(N) * Ho * Wo;
    // cols[ckk, N*Ho*Wo]
    auto cols = std::make_shared<std::vector<double>>(static_cast<std::size_t>(ckk) * P, 0.0);
    const auto xd = x.data();
    for (int c = 0; c < C; ++c)
        for (int ky = 0; ky < k; ++ky)
            for (int kx = 0; kx < k; ++kx) {
                double* row = cols->data() + static_cast<std::size_t>((c * k + ky) * k + kx) * P;
                for (int n = 0; n < N; ++n) {
                    const double* img = xd.data() + (static_cast<std::size_t>(n) * C + c) * H * W;
                    double* dst = row + static_cast<std::size_t>(n) * Ho * Wo;
                    for (int oy = 0; oy < Ho; ++oy) {
                        const int iy = oy * stride - padding + ky;
                        if (iy < 0 || iy >= H) continue;
                        for (int ox = 0; ox < Wo; ++ox) {
                            const int ix = ox * stride - padding + kx;
                            if (ix >= 0 && ix < W) dst[oy * Wo + ox] = img[iy * W + ix];
                        }
                    }
                }
            }
    std::vector<double> tmp(static_cast<std::size_t>(O) * P);
    MapMat(tmp.data(), O, static_cast<Eigen::Index>(P)).noalias() =
        CMapMat(w.data().data(), O, ckk) * CMapMat(cols->data(), ckk, static_cast<Eigen::Index>(P));
    const std::size_t hw = static_cast<std::size_t>(Ho) * Wo;
    std::vector<double> out(static_cast<std::size_t>(N) * O * hw);
    for (int o = 0; o < O; ++o)
        for (int n = 0; n < N; ++n)
            std::copy_n(tmp.begin() + static_cast<std::ptrdiff_t>(o * P + n * hw), hw,
                        out.begin() + static_cast<std::ptrdiff_t>((static_cast<std::size_t>(n) * O + o) * hw));
    Impl* xi = x.impl();
    Impl* wi = w.impl();
    return Tensor::make({N, O, Ho, Wo}, std::move(out), {x, w}, [=](Impl& self) {
        std::vector<double> g(static_cast<std::size_t>(O) * P);
        for (int o = 0; o < O; ++o)
            for (int n = 0; n < N; ++n)
                std::copy_n(self.grad.begin() + static_cast<std::ptrdiff_t>((static_cast<std::size_t>(n) * O + o) * hw), hw,
                            g.begin() + static_cast<std::ptrdiff_t>(o * P + n * hw));
        CMapMat G(g.data(), O, static_cast<Eigen::Index>(P));
        if (needs(wi))
            MapMat(wi->ensure_grad().data(), O, ckk).noalias() += G * CMapMat(cols->data(), ckk, static_cast<Eigen::Index>(P)).transpose();
        if (needs(xi)) {
            std::vector<double> dcols(static_cast<std::size_t>(ckk) * P);
            MapMat(dcols.data(), ckk, static_cast<Eigen::Index>(P)).noalias() = CMapMat(wi->data.data(), O, ckk).transpose() * G;
            auto& gx = xi->ensure_grad();
            for (int c = 0; c < C; ++c)
                for (int ky = 0; ky < k; ++ky)
                    for (int kx = 0; kx < k; ++kx) {
                        const double* row = dcols.data() + static_cast<std::size_t>((c * k + ky) * k + kx) * P;
                        for (int n = 0; n < N; ++n) {
                            double* img = gx.data() + (static_cast<std::size_t>(n) * C + c) * H * W;
                            const double* src = row + static_cast<std::size_t>(n) * Ho * Wo;
                            for (int oy = 0; oy < Ho; ++oy) {
                                const int iy = oy * stride - padding + ky;
                                if (iy < 0 || iy >= H) continue;
                                for (int ox = 0; ox < Wo; ++ox) {
                                    const int ix = ox * stride - padding + kx;
                                    if (ix >= 0 && ix < W) img[iy * W + ix] += src[oy * Wo + ox];
                                }
                            }
                        }
                    }
        }
    });
}

Tensor batch_norm2d(const Tensor& x, const Tensor& gamma, const Tensor& beta, Tensor& running_mean,
                    Tensor& running_var, bool training, double momentum, double eps) {
    require(x.ndim() == 4, "nn", "batch_norm2d expects [N,C,H,W]");
    const int N = x.dim(0), C = x.dim(1);
    const std::size_t hw = static_cast<std::size_t>(x.dim(2)) * x.dim(3);
    const std::size_t m = static_cast<std::size_t>(N) * hw;
    require(gamma.numel() == static_cast<std::size_t>(C) && beta.numel() == static_cast<std::size_t>(C), "nn",
            "batch_norm2d parameter size");
    const auto xd = x.data();
    std::vector<double> mu(static_cast<std::size_t>(C)), invstd(static_cast<std::size_t>(C));
    if (training) {
        require(m > 1, "nn", "batch_norm2d needs more than one value per channel in training");
        for (int c = 0; c < C; ++c) {
            double s = 0.0;
            for (int n = 0; n < N; ++n) {
                const double* p = xd.data() + (static_cast<std::size_t>(n) * C + c) * hw;
                for (std::size_t i = 0; i < hw; ++i) s += p[i];
            }
            const double mean_c = s / static_cast<double>(m);
            double v = 0.0;
            for (int n = 0; n < N; ++n) {
                const double* p = xd.data() + (static_cast<std::size_t>(n) * C + c) * hw;
                for (std::size_t i = 0; i < hw; ++i) v += (p[i] - mean_c) * (p[i] - mean_c);
            }
            const double var_c = v / static_cast<double>(m);
            mu[static_cast<std::size_t>(c)] = mean_c;
            invstd[static_cast<std::size_t>(c)] = 1.0 / std::sqrt(var_c + eps);
            auto rm = running_mean.data();
            auto rv = running_var.data();
            rm[static_cast<std::size_t>(c)] = (1 - momentum) * rm[static_cast<std::size_t>(c)] + momentum * mean_c;
            rv[static_cast<std::size_t>(c)] = (1 - momentum) * rv[static_cast<std::size_t>(c)] +
                                              momentum * var_c * static_cast<double>(m) / static_cast<double>(m - 1);
        }
    } else {
        for (int c = 0; c < C; ++c) {
            mu[static_cast<std::size_t>(c)] = running_mean.data()[static_cast<std::size_t>(c)];
            invstd[static_cast<std::size_t>(c)] = 1.0 / std::sqrt(running_var.data()[static_cast<std::size_t>(c)] + eps);
        }
    }
    std::vector<double> xhat(x.numel()), out(x.numel());
    const auto gd = gamma.data();
    const auto bd = beta.data();
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
            const std::size_t base = (static_cast<std::size_t>(n) * C + c) * hw;
            const auto cu = static_cast<std::size_t>(c);
            for (std::size_t i = 0; i < hw; ++i) {
                xhat[base + i] = (xd[base + i] - mu[cu]) * invstd[cu];
                out[base + i] = gd[cu] * xhat[base + i] + bd[cu];
            }
        }
    Impl* xi = x.impl();
    Impl* gi = gamma.impl();
    Impl* bi = beta.impl();
    return Tensor::make(x.shape(), std::move(out), {x, gamma, beta},
                        [=, xhat = std::move(xhat), invstd = std::move(invstd)](Impl& self) {
                            const auto& dy = self.grad;
                            for (int c = 0; c < C; ++c) {
                                const auto cu = static_cast<std::size_t>(c);
                                double sum_dy = 0.0, sum_dy_xhat = 0.0;
                                for (int n = 0; n < N; ++n) {
                                    const std::size_t base = (static_cast<std::size_t>(n) * C + c) * hw;
                                    for (std::size_t i = 0; i < hw; ++i) {
                                        sum_dy += dy[base + i];
                                        sum_dy_xhat += dy[base + i] * xhat[base + i];
                                    }
                                }
                                if (needs(gi)) gi->ensure_grad()[cu] += sum_dy_xhat;
                                if (needs(bi)) bi->ensure_grad()[cu] += sum_dy;
                                if (!needs(xi)) continue;
                                auto& gx = xi->ensure_grad();
                                const double gam = gi->data[cu];
                                for (int n = 0; n < N; ++n) {
                                    const std::size_t base = (static_cast<std::size_t>(n) * C + c) * hw;
                                    for (std::size_t i = 0; i < hw; ++i) {
                                        if (training) {
                                            gx[base + i] += gam * invstd[cu] / static_cast<double>(m) *
                                                            (static_cast<double>(m) * dy[base + i] - sum_dy - xhat[base + i] * sum_dy_xhat);
                                        } else {
                                            gx[base + i] += gam * invstd[cu] * dy[base + i];
                                        }
                                    }
                                }
                            }
                        });
}

Tensor max_pool2d(const Tensor& x, int kernel, int stride) {
    require(x.ndim() == 4 && kernel >= 1 && stride >= 1, "nn", "max_pool2d geometry");
    const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const int Ho = (H - kernel) / stride + 1, Wo = (W - kernel) / stride + 1;
    require(Ho > 0 && Wo > 0, "nn", "max_pool2d output would be empty");
    std::vector<double> out(static_cast<std::size_t>(N) * C * Ho * Wo);
    std::vector<std::size_t> arg(out.size());
    const auto xd = x.data();
    std::size_t o = 0;
    for (int nc = 0; nc < N * C; ++nc) {
        const std::size_t base = static_cast<std::size_t>(nc) * H * W;
        for (int oy = 0; oy < Ho; ++oy)
            for (int ox = 0; ox < Wo; ++ox, ++o) {
                std::size_t best = base + static_cast<std::size_t>(oy * stride) * W + ox * stride;
                for (int ky = 0; ky < kernel; ++ky)
                    for (int kx = 0; kx < kernel; ++kx) {
                        const std::size_t k = base + static_cast<std::size_t>(oy * stride + ky) * W + ox * stride + kx;
                        if (xd[k] > xd[best]) best = k;
                    }
                out[o] = xd[best];
                arg[o] = best;
            }
    }
    Impl* xi = x.impl();
    return Tensor::make({N, C, Ho, Wo}, std::move(out), {x}, [xi, arg = std::move(arg)](Impl& self) {
        auto& g = xi->ensure_grad();
        for (std::size_t j = 0; j < arg.size(); ++j) g[arg[j]] += self.grad[j];
    });
}

Tensor global_avg_pool2d(const Tensor& x) {
    require(x.ndim() == 4, "nn", "global_avg_pool2d expects [N,C,H,W]");
    return mean_dim(reshape(x, {x.dim(0), x.dim(1), x.dim(2) * x.dim(3)}), 2);
}

// ------------------------------------------------ normalisation / probability

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
    const int D = x.dim(-1);
    require(gamma.numel() == static_cast<std::size_t>(D) && beta.numel() == static_cast<std::size_t>(D), "nn",
            "layer_norm parameter size");
    const std::size_t rows = x.numel() / static_cast<std::size_t>(D);
    std::vector<double> xhat(x.numel()), out(x.numel()), invstd(rows);
    const auto xd = x.data();
    const auto gd = gamma.data();
    const auto bd = beta.data();
    for (std::size_t r = 0; r < rows; ++r) {
        const double* p = xd.data() + r * D;
        double mu = 0.0;
        for (int i = 0; i < D; ++i) mu += p[i];
        mu /= D;
        double var = 0.0;
        for (int i = 0; i < D; ++i) var += (p[i] - mu) * (p[i] - mu);
        var /= D;
        invstd[r] = 1.0 / std::sqrt(var + eps);
        for (int i = 0; i < D; ++i) {
            xhat[r * D + i] = (p[i] - mu) * invstd[r];
            out[r * D + i] = gd[static_cast<std::size_t>(i)] * xhat[r * D + i] + bd[static_cast<std::size_t>(i)];
        }
    }
    Impl* xi = x.impl();
    Impl* gi = gamma.impl();
    Impl* bi = beta.impl();
    return Tensor::make(x.shape(), std::move(out), {x, gamma, beta},
                        [=, xhat = std::move(xhat), invstd = std::move(invstd)](Impl& self) {
                            const auto& dy = self.grad;
                            std::vector<double> dxhat(static_cast<std::size_t>(D));
                            for (std::size_t r = 0; r < rows; ++r) {
                                double s1 = 0.0, s2 = 0.0;
                                for (int i = 0; i < D; ++i) {
                                    const std::size_t k = r * D + i;
                                    if (needs(gi)) gi->ensure_grad()[static_cast<std::size_t>(i)] += dy[k] * xhat[k];
                                    if (needs(bi)) bi->ensure_grad()[static_cast<std::size_t>(i)] += dy[k];
                                    dxhat[static_cast<std::size_t>(i)] = dy[k] * gi->data[static_cast<std::size_t>(i)];
                                    s1 += dxhat[static_cast<std::size_t>(i)];
                                    s2 += dxhat[static_cast<std::size_t>(i)] * xhat[k];
                                }
                                if (!needs(xi)) continue;
                                auto& gx = xi->ensure_grad();
                                for (int i = 0; i < D; ++i) {
                                    const std::size_t k = r * D + i;
                                    gx[k] += invstd[r] / D * (D * dxhat[static_cast<std::size_t>(i)] - s1 - xhat[k] * s2);
                                }
                            }
                        });
}

Tensor softmax_lastdim(const Tensor& x) {
    const int D = x.dim(-1);
    const std::size_t rows = x.numel() / static_cast<std::size_t>(D);
    std::vector<double> out(x.numel());
    const auto xd = x.data();
    for (std::size_t r = 0; r < rows; ++r) {
        const double* p = xd.data() + r * D;
        const double mx = *std::max_element(p, p + D);
        double s = 0.0;
        for (int i = 0; i < D; ++i) s += out[r * D + i] = std::exp(p[i] - mx);
        for (int i = 0; i < D; ++i) out[r * D + i] /= s;
    }
    Impl* xi = x.impl();
    return Tensor::make(x.shape(), std::move(out), {x}, [xi, D, rows](Impl& self) {
        auto& g = xi->ensure_grad();
        // self.data holds the softmax output.
        for (std::size_t r = 0; r < rows; ++r) {
            double dot = 0.0;
            for (int i = 0; i < D; ++i) dot += self.grad[r * D + i] * self.data[r * D + i];
            for (int i = 0; i < D; ++i) g[r * D + i] += self.data[r * D + i] * (self.grad[r * D + i] - dot);
        }
    });
}

Tensor cross_entropy(const Tensor& logits, const std::vector<int>& labels) {
    require(logits.ndim() == 2, "nn", "cross_entropy expects [N, C] logits");
    const int N = logits.dim(0), C = logits.dim(1);
    require(static_cast<int>(labels.size()) == N && N > 0, "nn", "cross_entropy label count mismatch");
    std::vector<double> prob(logits.numel());
    double loss = 0.0;
    const auto ld = logits.data();
    for (int n = 0; n < N; ++n) {
        const double* p = ld.data() + static_cast<std::size_t>(n) * C;
        const double mx = *std::max_element(p, p + C);
        double s = 0.0;
        for (int c = 0; c < C; ++c) s += std::exp(p[c] - mx);
        const int y = labels[static_cast<std::size_t>(n)];
        require(y >= 0 && y < C, "nn", "cross_entropy label out of range");
        loss += -(p[y] - mx - std::log(s));
        for (int c = 0; c < C; ++c) prob[static_cast<std::size_t>(n) * C + c] = std::exp(p[c] - mx) / s;
    }
    loss /= N;
    Impl* li = logits.impl();
    return Tensor::make({1}, {loss}, {logits}, [li, N, C, labels, prob = std::move(prob)](Impl& self) {
        auto& g = li->ensure_grad();
        const double s = self.grad[0] / N;
        for (int n = 0; n < N; ++n)
            for (int c = 0; c < C; ++c) {
                const std::size_t k = static_cast<std::size_t>(n) * C + c;
                g[k] += s * (prob[k] - (c == labels[static_cast<std::size_t>(n)] ? 1.0 : 0.0));
            }
    });
}

}  // namespace herdnet::nn
