#include "doctest.h"

#include <cmath>

#include "herdnet/metrics.hpp"
#include "herdnet/rng.hpp"

using namespace herdnet;
using namespace herdnet::metrics;

TEST_CASE("softmax examples") {
    for (double p : softmax({0, 0, 0})) CHECK(p == doctest::Approx(1.0 / 3));
    const auto p = softmax({std::log(2.0), 0, 0});
    CHECK(p[0] == doctest::Approx(0.5));
    CHECK(p[1] == doctest::Approx(0.25));
    CHECK(p[2] == doctest::Approx(0.25));
    const auto big = softmax({1000, 0, 0});
    CHECK(big[0] == doctest::Approx(1.0));
    CHECK(big[1] >= 0.0);
    CHECK(std::isfinite(big[1]));
    CHECK_THROWS_AS(softmax({}), Error);
}

TEST_CASE("softmax properties") {
    Rng rng(4);
    for (int k = 0; k < 200; ++k) {
        std::vector<double> x(3);
        for (double& v : x) v = 5 * rng.normal();
        const double c = 10 * rng.normal();
        std::vector<double> shifted = x;
        for (double& v : shifted) v += c;
        const auto p = softmax(x), q = softmax(shifted);
        double sum = 0.0;
        for (std::size_t i = 0; i < 3; ++i) {
            CHECK(std::abs(p[i] - q[i]) < 1e-12);
            CHECK(p[i] > 0.0);
            sum += p[i];
        }
        CHECK(std::abs(sum - 1.0) < 1e-12);
        CHECK(argmax(p) == argmax(x));
    }
}

TEST_CASE("F1 closed form") {
    CHECK(f1_score({20, 0, 0, 5}).value == 1.0);
    CHECK(f1_score({0, 5, 5, 0}).value == 0.0);
    CHECK(f1_score({8, 2, 2, 0}).value == doctest::Approx(0.8));
    const auto d = f1_score({0, 0, 0, 9});
    CHECK(d.degenerate);
    CHECK(d.value == 0.0);
    CHECK_FALSE(f1_score({1, 0, 0, 0}).degenerate);
    for (int fp = 0; fp < 5; ++fp)
        for (int fn = 0; fn < 5; ++fn) {
            CHECK(f1_score({3, fp, fn, 0}).value == f1_score({3, fn, fp, 0}).value);
            CHECK(f1_score({3, fp + 1, fn, 0}).value <= f1_score({3, fp, fn, 0}).value);
        }
}

TEST_CASE("confusion, accuracy and the one-vs-rest collapse") {
    std::vector<Prediction> preds;
    const int table[3][3] = {{5, 2, 1}, {0, 4, 3}, {2, 0, 6}};
    for (int t = 0; t < 3; ++t)
        for (int p = 0; p < 3; ++p)
            for (int k = 0; k < table[t][p]; ++k) {
                Prediction x;
                x.truth = label_from_index(t);
                x.predicted = label_from_index(p);
                preds.push_back(x);
            }
    const auto m = confusion(preds);
    CHECK(m.total() == 23);
    CHECK(m.trace() == 15);
    CHECK(accuracy(m) == doctest::Approx(15.0 / 23));
    const auto nf = one_vs_rest(m, Label::NF);
    CHECK(nf.tp == 5);
    CHECK(nf.fn == 3);
    CHECK(nf.fp == 2);
    CHECK(nf.tn == 13);
    CHECK(nf.total() == 23);
    CHECK(confusion_from_json(to_json(m)) == m);
    CHECK_THROWS_AS(confusion(std::vector<Prediction>{}), Error);

    std::vector<Prediction> right(preds.begin(), preds.begin() + 5);
    CHECK(accuracy(right) == 1.0);
}

TEST_CASE("reference cross-split rows") {
    struct Row {
        std::vector<double> values;
        const char* expected;
    };
    const std::vector<Row> rows{
        {{67.74, 64.52, 61.29, 59.68, 59.68, 62.90, 70.97, 66.13, 54.84, 66.13}, "63.39 ± 4.45"},
        {{56.45, 66.13, 58.06, 58.06, 58.06, 67.74, 58.06, 67.74, 56.45, 54.84}, "60.16 ± 4.73"},
        {{67.74, 62.90, 56.45, 56.45, 54.84, 59.68, 69.35, 69.35, 53.23, 64.52}, "61.45 ± 5.83"},
        {{56.45, 45.16, 59.68, 53.23, 48.39, 56.45, 56.45, 50.00, 48.39, 61.29}, "53.55 ± 5.09"},
        {{78.26, 78.26, 70.59, 70.83, 73.08, 71.43, 80.85, 71.70, 68.00, 73.17}, "73.62 ± 3.91"},
        {{72.22, 68.57, 82.93, 70.83, 68.00, 82.05, 70.27, 71.43, 63.16, 63.64}, "71.31 ± 6.29"},
        {{78.26, 73.91, 64.15, 66.67, 69.23, 69.77, 76.00, 76.00, 67.92, 76.19}, "71.81 ± 4.60"},
    };
    for (const auto& r : rows) {
        const auto s = cross_split_summary(r.values);
        CHECK(s.formatted() == r.expected);
        CHECK(s.sample_stddev > s.stddev);
    }
    const auto same = cross_split_summary(std::vector<double>(10, 61.5));
    CHECK(same.formatted() == "61.50 ± 0.00");
    CHECK_THROWS_AS(cross_split_summary({1.0}), Error);
}

TEST_CASE("metrics report") {
    std::vector<std::vector<Prediction>> splits(2);
    for (int s = 0; s < 2; ++s)
        for (int k = 0; k < 4; ++k) {
            Prediction p;
            p.split_id = s + 1;
            p.truth = label_from_index(k % 3);
            p.predicted = k < 2 + s ? p.truth : Label::NR;
            splits[static_cast<std::size_t>(s)].push_back(p);
        }
    const auto j = metrics_report(splits);
    CHECK(j.at("splits").size() == 2);
    CHECK(j.at("splits")[0].at("accuracy").get<double>() == doctest::Approx(50.0));
    CHECK(j.at("splits")[1].at("accuracy").get<double>() == doctest::Approx(75.0));
    CHECK(j.at("accuracy_summary").at("mean").get<double>() == doctest::Approx(62.5));
    Prediction p;
    p.clip_id = "x";
    p.scores = {1, 2, 3};
    p.probability = softmax(p.scores);
    CHECK(prediction_from_json(to_json(p)) == p);
}
