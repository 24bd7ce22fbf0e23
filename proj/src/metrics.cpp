#include "herdnet/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

namespace herdnet::metrics {

std::vector<double> softmax(const std::vector<double>& logits) {
    require(!logits.empty(), "metrics", "softmax of an empty vector");
    const double mx = *std::max_element(logits.begin(), logits.end());
    require(std::isfinite(mx), "metrics", "softmax needs finite logits");
    std::vector<double> p(logits.size());
    double z = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) z += p[i] = std::exp(logits[i] - mx);
    for (double& v : p) v /= z;
    return p;
}

std::size_t argmax(const std::vector<double>& v) {
    require(!v.empty(), "metrics", "argmax of an empty vector");
    return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

F1 f1_score(const BinaryCounts& c) {
    require(c.tp >= 0 && c.fp >= 0 && c.fn >= 0 && c.tn >= 0, "metrics", "negative count");
    const int denom = 2 * c.tp + c.fp + c.fn;
    if (denom == 0) return {0.0, true};
    return {2.0 * c.tp / denom, false};
}

int ConfusionMatrix::total() const {
    int n = 0;
    for (const auto& row : counts)
        for (int v : row) n += v;
    return n;
}

int ConfusionMatrix::trace() const {
    int n = 0;
    for (int i = 0; i < kNumClasses; ++i) n += counts[i][i];
    return n;
}

ConfusionMatrix& ConfusionMatrix::operator+=(const ConfusionMatrix& o) {
    for (int i = 0; i < kNumClasses; ++i)
        for (int j = 0; j < kNumClasses; ++j) counts[i][j] += o.counts[i][j];
    return *this;
}

double accuracy(const ConfusionMatrix& m) {
    require(m.total() > 0, "metrics", "accuracy of an empty confusion matrix");
    return static_cast<double>(m.trace()) / m.total();
}

BinaryCounts one_vs_rest(const ConfusionMatrix& m, Label positive) {
    const int p = index_of(positive);
    BinaryCounts c;
    for (int i = 0; i < kNumClasses; ++i)
        for (int j = 0; j < kNumClasses; ++j) {
            const int v = m.counts[i][j];
            if (i == p && j == p) c.tp += v;
            else if (i == p) c.fn += v;
            else if (j == p) c.fp += v;
            else c.tn += v;
        }
    return c;
}

ConfusionMatrix confusion(const std::vector<Prediction>& preds) {
    require(!preds.empty(), "metrics", "no predictions");
    ConfusionMatrix m;
    for (const auto& p : preds) ++m.at(p.truth, p.predicted);
    return m;
}

double accuracy(const std::vector<Prediction>& preds) { return accuracy(confusion(preds)); }

double round2(double v) { return std::round(v * 100.0) / 100.0; }

SplitSummary cross_split_summary(const std::vector<double>& values) {
    require(values.size() >= 2, "metrics", "a cross-split summary needs at least 2 values");
    SplitSummary s;
    s.values = values;
    double sum = 0.0;
    for (double v : values) sum += v;
    s.mean = sum / static_cast<double>(values.size());
    double ss = 0.0;
    for (double v : values) ss += (v - s.mean) * (v - s.mean);
    s.stddev = std::sqrt(ss / static_cast<double>(values.size()));
    s.sample_stddev = std::sqrt(ss / static_cast<double>(values.size() - 1));
    return s;
}

std::string SplitSummary::formatted() const {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.2f ± %.2f", mean, stddev);
    return buf;
}

nlohmann::json to_json(const ConfusionMatrix& m) { return m.counts; }

ConfusionMatrix confusion_from_json(const nlohmann::json& j) {
    ConfusionMatrix m;
    j.get_to(m.counts);
    return m;
}

nlohmann::json to_json(const Prediction& p) {
    return {{"clip_id", p.clip_id},
            {"capture_index", p.capture_index},
            {"view_id", p.view_id},
            {"split_id", p.split_id},
            {"truth", std::string(to_string(p.truth))},
            {"predicted", std::string(to_string(p.predicted))},
            {"scores", p.scores},
            {"probability", p.probability},
            {"n_padding", p.n_padding}};
}

Prediction prediction_from_json(const nlohmann::json& j) {
    Prediction p;
    try {
        j.at("clip_id").get_to(p.clip_id);
        j.at("capture_index").get_to(p.capture_index);
        j.at("view_id").get_to(p.view_id);
        j.at("split_id").get_to(p.split_id);
        p.truth = parse_label(j.at("truth").get<std::string>());
        p.predicted = parse_label(j.at("predicted").get<std::string>());
        j.at("scores").get_to(p.scores);
        j.at("probability").get_to(p.probability);
        p.n_padding = j.value("n_padding", 0);
    } catch (const nlohmann::json::exception& e) {
        throw Error("metrics", std::string("bad prediction record: ") + e.what());
    }
    return p;
}

nlohmann::json to_json(const SplitSummary& s) {
    return {{"values", s.values}, {"mean", s.mean}, {"std", s.stddev}, {"sample_std", s.sample_stddev}, {"formatted", s.formatted()}};
}

nlohmann::json metrics_report(const std::vector<std::vector<Prediction>>& per_split) {
    require(!per_split.empty(), "metrics", "no splits to report");
    nlohmann::json splits = nlohmann::json::array();
    std::vector<double> acc, f1;
    ConfusionMatrix total;
    for (const auto& preds : per_split) {
        const auto m = confusion(preds);
        total += m;
        const F1 f = f1_score(one_vs_rest(m, Label::NF));
        acc.push_back(100.0 * accuracy(m));
        f1.push_back(100.0 * f.value);
        splits.push_back({{"split_id", preds.front().split_id},
                          {"n", m.total()},
                          {"accuracy", acc.back()},
                          {"f1_nf", f1.back()},
                          {"f1_degenerate", f.degenerate},
                          {"confusion", to_json(m)}});
    }
    nlohmann::json report{{"class_order", {"NF", "NR", "R"}}, {"splits", splits}, {"confusion", to_json(total)}};
    if (per_split.size() >= 2) {
        report["accuracy_summary"] = to_json(cross_split_summary(acc));
        report["f1_nf_summary"] = to_json(cross_split_summary(f1));
    }
    return report;
}

}  // namespace herdnet::metrics
