#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "herdnet/rng.hpp"
#include "herdnet/tensor.hpp"

namespace testutil {

using herdnet::nn::Tensor;

inline Tensor random_tensor(herdnet::nn::Shape shape, std::uint64_t seed, double scale = 1.0, bool grad = true) {
    herdnet::Rng rng(seed);
    std::vector<double> v(herdnet::nn::numel_of(shape));
    for (double& x : v) x = scale * rng.normal();
    return Tensor(std::move(shape), std::move(v), grad);
}

// Largest relative error between backward() and central differences of the
// scalar f over (up to max_checks) coordinates of each input.
inline double gradcheck(const std::function<Tensor()>& f, std::vector<Tensor> inputs, std::size_t max_checks = 60,
                        double h = 1e-5) {
    for (auto& t : inputs) t.zero_grad();
    Tensor out = f();
    out.backward();
    double worst = 0.0;
    herdnet::Rng pick(99);
    for (auto& t : inputs) {
        const std::vector<double> analytic(t.grad().begin(), t.grad().end());
        std::vector<std::size_t> idx(t.numel());
        for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
        pick.shuffle(idx);
        idx.resize(std::min(idx.size(), max_checks));
        for (std::size_t i : idx) {
            const double orig = t.data()[i];
            t.data()[i] = orig + h;
            const double up = f().item();
            t.data()[i] = orig - h;
            const double down = f().item();
            t.data()[i] = orig;
            const double numeric = (up - down) / (2 * h);
            const double a = analytic.empty() ? 0.0 : analytic[i];
            const double denom = std::max(std::abs(a), std::abs(numeric));
            if (denom < 1e-7) continue;
            worst = std::max(worst, std::abs(a - numeric) / denom);
        }
    }
    return worst;
}

}  // namespace testutil
