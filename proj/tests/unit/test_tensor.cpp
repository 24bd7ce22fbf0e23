#include "doctest.h"
#include "gradcheck.hpp"

#include <cmath>

using namespace herdnet;
using namespace herdnet::nn;
using testutil::gradcheck;
using testutil::random_tensor;

namespace {

// Fixed random weights turn any tensor into a scalar with a nontrivial gradient.
Tensor probe(const Tensor& t, std::uint64_t seed = 7) { return sum(mul(t, random_tensor(t.shape(), seed, 1.0, false))); }

}  // namespace

TEST_CASE("elementwise ops match finite differences") {
    auto a = random_tensor({3, 4}, 1);
    auto b = random_tensor({4}, 2);
    CHECK(gradcheck([&] { return probe(add(a, b)); }, {a, b}) < 1e-6);
    CHECK(gradcheck([&] { return probe(mul(a, b)); }, {a, b}) < 1e-6);
    CHECK(gradcheck([&] { return probe(scale(a, -1.7)); }, {a}) < 1e-6);
    CHECK(gradcheck([&] { return probe(relu(a)); }, {a}) < 1e-6);
    CHECK(gradcheck([&] { return probe(gelu(a)); }, {a}) < 1e-6);
}

TEST_CASE("shape ops match finite differences") {
    auto a = random_tensor({2, 3, 4}, 3);
    auto b = random_tensor({2, 2, 4}, 4);
    CHECK(gradcheck([&] { return probe(permute(a, {2, 0, 1})); }, {a}) < 1e-6);
    CHECK(gradcheck([&] { return probe(reshape(a, {6, 4})); }, {a}) < 1e-6);
    CHECK(gradcheck([&] { return probe(concat({a, b}, 1)); }, {a, b}) < 1e-6);
    CHECK(gradcheck([&] { return probe(narrow(a, 2, 1, 2)); }, {a}) < 1e-6);
    auto c = random_tensor({4}, 5);
    CHECK(gradcheck([&] { return probe(broadcast_to(c, {3, 4})); }, {c}) < 1e-6);
}

TEST_CASE("permute and concat place values correctly") {
    Tensor a({2, 3}, {0, 1, 2, 3, 4, 5});
    auto p = permute(a, {1, 0});
    CHECK(p.shape() == Shape{3, 2});
    CHECK(std::vector<double>(p.data().begin(), p.data().end()) == std::vector<double>{0, 3, 1, 4, 2, 5});
    Tensor b({2, 1}, {9, 8});
    auto c = concat({a, b}, 1);
    CHECK(std::vector<double>(c.data().begin(), c.data().end()) == std::vector<double>{0, 1, 2, 9, 3, 4, 5, 8});
}

TEST_CASE("reductions match finite differences") {
    auto a = random_tensor({3, 5, 2}, 6);
    CHECK(gradcheck([&] { return mean(a); }, {a}) < 1e-6);
    CHECK(gradcheck([&] { return probe(mean_dim(a, 1)); }, {a}) < 1e-6);
    CHECK(gradcheck([&] { return probe(max_dim(a, 1)); }, {a}) < 1e-6);
    CHECK(gradcheck([&] { return element(a, 7); }, {a}) < 1e-6);
}

TEST_CASE("linear and bmm match finite differences") {
    auto x = random_tensor({2, 3, 5}, 7);
    auto w = random_tensor({4, 5}, 8);
    auto bias = random_tensor({4}, 9);
    CHECK(gradcheck([&] { return probe(linear(x, w, bias)); }, {x, w, bias}) < 1e-6);
    auto a = random_tensor({2, 3, 4}, 10);
    auto b = random_tensor({2, 4, 5}, 11);
    auto bt = random_tensor({2, 5, 4}, 12);
    CHECK(gradcheck([&] { return probe(bmm(a, b)); }, {a, b}) < 1e-6);
    CHECK(gradcheck([&] { return probe(bmm(a, bt, true)); }, {a, bt}) < 1e-6);
}

TEST_CASE("convolutional ops match finite differences") {
    auto x = random_tensor({2, 3, 7, 6}, 13);
    auto w = random_tensor({4, 3, 3, 3}, 14);
    CHECK(gradcheck([&] { return probe(conv2d(x, w, 2, 1)); }, {x, w}) < 1e-6);
    CHECK(gradcheck([&] { return probe(conv2d(x, w, 1, 0)); }, {x, w}) < 1e-6);
    auto gamma = random_tensor({3}, 15);
    auto beta = random_tensor({3}, 16);
    Tensor rm({3}, 0.0), rv({3}, 1.0);
    CHECK(gradcheck([&] { return probe(batch_norm2d(x, gamma, beta, rm, rv, true)); }, {x, gamma, beta}, 60, 1e-3) < 1e-5);
    CHECK(gradcheck([&] { return probe(batch_norm2d(x, gamma, beta, rm, rv, false)); }, {x, gamma, beta}) < 1e-5);
    CHECK(gradcheck([&] { return probe(max_pool2d(x, 2, 2)); }, {x}) < 1e-6);
    CHECK(gradcheck([&] { return probe(global_avg_pool2d(x)); }, {x}) < 1e-6);
}

TEST_CASE("conv2d agrees with a direct sum") {
    auto x = random_tensor({1, 2, 5, 5}, 17, 1.0, false);
    auto w = random_tensor({3, 2, 3, 3}, 18, 1.0, false);
    auto y = conv2d(x, w, 2, 1);
    REQUIRE(y.shape() == Shape{1, 3, 3, 3});
    for (int o = 0; o < 3; ++o)
        for (int oy = 0; oy < 3; ++oy)
            for (int ox = 0; ox < 3; ++ox) {
                double s = 0.0;
                for (int c = 0; c < 2; ++c)
                    for (int ky = 0; ky < 3; ++ky)
                        for (int kx = 0; kx < 3; ++kx) {
                            const int iy = oy * 2 - 1 + ky, ix = ox * 2 - 1 + kx;
                            if (iy < 0 || iy >= 5 || ix < 0 || ix >= 5) continue;
                            s += x.data()[(c * 5 + iy) * 5 + ix] * w.data()[((o * 2 + c) * 3 + ky) * 3 + kx];
                        }
                CHECK(y.data()[(o * 3 + oy) * 3 + ox] == doctest::Approx(s).epsilon(1e-12));
            }
}

TEST_CASE("batch norm updates running statistics with unbiased variance") {
    Tensor x({2, 1, 1, 2}, {1, 2, 3, 4});
    Tensor g({1}, 1.0), b({1}, 0.0), rm({1}, 0.0), rv({1}, 1.0);
    batch_norm2d(x, g, b, rm, rv, true);
    CHECK(rm.data()[0] == doctest::Approx(0.25));
    // biased var 1.25, unbiased 5/3
    CHECK(rv.data()[0] == doctest::Approx(0.9 + 0.1 * 5.0 / 3.0));
}

TEST_CASE("normalisation and probabilities match finite differences") {
    auto x = random_tensor({2, 3, 6}, 19);
    auto g = random_tensor({6}, 20);
    auto b = random_tensor({6}, 21);
    CHECK(gradcheck([&] { return probe(layer_norm(x, g, b)); }, {x, g, b}) < 1e-5);
    CHECK(gradcheck([&] { return probe(softmax_lastdim(x)); }, {x}) < 1e-6);
    auto logits = random_tensor({4, 3}, 22);
    CHECK(gradcheck([&] { return cross_entropy(logits, {0, 2, 1, 1}); }, {logits}) < 1e-6);
}

TEST_CASE("cross entropy of uniform logits is log 3") {
    Tensor logits({2, 3}, 0.0);
    CHECK(cross_entropy(logits, {0, 1}).item() == doctest::Approx(std::log(3.0)));
}

TEST_CASE("no-grad mode records no history") {
    auto a = random_tensor({3}, 23);
    NoGradGuard guard;
    auto y = scale(a, 2.0);
    CHECK_FALSE(y.requires_grad());
}

TEST_CASE("shape errors are reported") {
    Tensor a({2, 3}), b({2, 4});
    CHECK_THROWS_AS(add(a, b), Error);
    CHECK_THROWS_AS(reshape(a, {5}), Error);
    CHECK_THROWS_AS(cross_entropy(a, {0, 5}), Error);
}
