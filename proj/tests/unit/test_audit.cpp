#include "doctest.h"

#include "herdnet/audit.hpp"
#include "herdnet/rng.hpp"

using namespace herdnet;
using namespace herdnet::audit;
using metrics::Prediction;

namespace {

// 96 clips over the 16 views; view v holds mostly class (v - 1) % 3.
dataio::Manifest biased_manifest() {
    std::vector<dataio::ManifestRow> rows;
    for (int k = 0; k < 96; ++k) {
        const int view = 1 + k / 6;
        const int label = k % 6 == 5 ? (view % 3) : (view - 1) % 3;
        rows.push_back({"clip_" + std::to_string(k), label_from_index(label), view, k, 30, "x"});
    }
    return dataio::Manifest(rows);
}

std::vector<Prediction> predict_all(const dataio::Manifest& m, int split, auto&& predictor) {
    std::vector<Prediction> out;
    for (const auto& row : m.rows()) {
        Prediction p;
        p.clip_id = row.clip_id;
        p.capture_index = row.capture_index;
        p.view_id = row.view_id;
        p.split_id = split;
        p.truth = row.label;
        predictor(row, p);
        p.predicted = label_from_index(static_cast<int>(metrics::argmax(p.probability)));
        out.push_back(p);
    }
    return out;
}

}  // namespace

TEST_CASE("per-view matrices partition the global matrix") {
    const auto m = biased_manifest();
    Rng rng(3);
    const auto preds = predict_all(m, 1, [&](const auto&, Prediction& p) {
        p.probability = metrics::softmax({rng.normal(), rng.normal(), rng.normal()});
    });
    const auto r = per_view_confusion(preds, m);
    metrics::ConfusionMatrix sum;
    for (const auto& v : r.matrices) sum += v;
    CHECK(sum == r.global);
    CHECK(r.global == metrics::confusion(preds));
    for (int v = 1; v <= kNumViews; ++v) CHECK(index_of(r.majority(v)) == (v - 1) % 3);
}

TEST_CASE("a single view holds the whole matrix") {
    std::vector<dataio::ManifestRow> rows;
    for (int k = 0; k < 9; ++k) rows.push_back({"c" + std::to_string(k), label_from_index(k % 3), 4, k, 20, "x"});
    const dataio::Manifest m(rows);
    const auto preds = predict_all(m, 1, [](const auto&, Prediction& p) { p.probability = {0.2, 0.5, 0.3}; });
    const auto r = per_view_confusion(preds, m);
    CHECK(r.matrices[3] == r.global);
    for (int v = 1; v <= kNumViews; ++v)
        if (v != 4) CHECK(r.matrices[static_cast<std::size_t>(v - 1)].total() == 0);
    CHECK(r.modal_prediction(4) == index_of(Label::NR));
    CHECK(r.modal_prediction(1) == -1);
    // Ties in the manifest go to the lowest class index.
    CHECK(r.majority(4) == Label::NF);
}

TEST_CASE("predictions must match the manifest") {
    const auto m = biased_manifest();
    auto preds = predict_all(m, 1, [](const auto&, Prediction& p) { p.probability = {1, 0, 0}; });
    auto wrong_view = preds;
    wrong_view[0].view_id = 9;
    CHECK_THROWS_AS(per_view_confusion(wrong_view, m), Error);
    auto unknown = preds;
    unknown[0].clip_id = "nope";
    CHECK_THROWS_AS(per_view_confusion(unknown, m), Error);
    CHECK_THROWS_AS(adjacency_pp_curve(unknown, m), Error);
}

TEST_CASE("a constant model gives a flat adjacency curve") {
    const auto m = biased_manifest();
    const auto preds = predict_all(m, 1, [](const auto&, Prediction& p) { p.probability = {1.0 / 3, 1.0 / 3, 1.0 / 3}; });
    const auto curves = adjacency_pp_curve(preds, m);
    int n = 0;
    for (const auto& curve : curves.curves)
        for (const auto& point : curve) {
            CHECK(point.pp == doctest::Approx(1.0 / 3));
            CHECK(point.n_splits == 1);
            ++n;
        }
    CHECK(n == 96);
    CHECK(curves.omitted == 0);
    CHECK(curves.within_view_step == doctest::Approx(0.0));
}

TEST_CASE("adjacency curves average over splits and count omissions") {
    const auto m = biased_manifest();
    auto a = predict_all(m, 1, [](const auto&, Prediction& p) { p.probability = {0.6, 0.2, 0.2}; });
    auto b = predict_all(m, 2, [](const auto&, Prediction& p) { p.probability = {0.2, 0.6, 0.2}; });
    b.resize(50);
    a.insert(a.end(), b.begin(), b.end());
    const auto curves = adjacency_pp_curve(a, m);
    CHECK(curves.omitted == 0);
    const auto& nf = curves.curves[0];
    REQUIRE(!nf.empty());
    for (std::size_t i = 1; i < nf.size(); ++i) CHECK(nf[i - 1].capture_index < nf[i].capture_index);
    for (const auto& curve : curves.curves)
        for (const auto& point : curve) {
            const int idx = std::stoi(point.clip_id.substr(5));
            CHECK(point.n_splits == (idx < 50 ? 2 : 1));
        }
    std::vector<Prediction> few(a.begin(), a.begin() + 10);
    CHECK(adjacency_pp_curve(few, m).omitted == 86);
    const auto pred_pp = adjacency_pp_curve(few, m, true);
    for (const auto& curve : pred_pp.curves)
        for (const auto& point : curve) CHECK(point.pp == doctest::Approx(0.6));
}

TEST_CASE("a model that outputs each view's majority class agrees fully") {
    const auto m = biased_manifest();
    const auto majority = per_view_confusion({}, m);
    const auto preds = predict_all(m, 1, [&](const dataio::ManifestRow& row, Prediction& p) {
        p.probability = {0.1, 0.1, 0.1};
        p.probability[static_cast<std::size_t>(index_of(majority.majority(row.view_id)))] = 0.8;
    });
    const auto r = per_view_confusion(preds, m);
    const auto agree = majority_agreement(r, preds, 200, 4);
    CHECK(agree.agreement == 1.0);
    CHECK(agree.baseline < 0.6);
    CHECK(agree.permutations == 200);
    CHECK(r.modal_matches() == kNumViews);
    CHECK(majority_agreement(r, preds, 200, 4).baseline == agree.baseline);

    const auto report = audit_report(preds, m);
    CHECK(report.at("per_view").at("views").size() == kNumViews);
    CHECK(report.at("adjacency_pp") == "true_class");
    CHECK(report.at("majority_agreement").at("agreement") == 1.0);
}

TEST_CASE("views are recovered from mean images") {
    ViewClassifier v;
    std::vector<FloatImage> images;
    std::vector<int> ids;
    for (int k = 0; k < 4; ++k) {
        FloatImage a(4, 4, 0.0), b(4, 4, 0.0);
        a.at(0, 0) = 1.0 + 0.01 * k;
        b.at(3, 3) = 1.0 - 0.01 * k;
        images.push_back(a);
        ids.push_back(2);
        images.push_back(b);
        ids.push_back(9);
    }
    v.fit(images, ids);
    FloatImage q(4, 4, 0.0);
    q.at(3, 3) = 0.7;
    CHECK(v.predict(q) == 9);
    CHECK_THROWS_AS(v.fit(images, {1}), Error);
}

TEST_CASE("probe configurations are validated") {
    PaddingProbeConfig p;
    p.sequence_lengths = {6};
    p.clips_per_class = 10;
    CHECK_THROWS_AS(padding_probe(p), Error);
    TimestampProbeConfig t;
    t.scene.timestamp_enabled = false;
    CHECK_THROWS_AS(timestamp_probe(t), Error);
    TimestampProbeConfig low;
    low.timestamp_correlation = 0.2;
    CHECK_THROWS_AS(timestamp_probe(low), Error);
}
