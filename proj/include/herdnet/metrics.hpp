#pragma once

#include <array>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "herdnet/labels.hpp"

namespace herdnet::metrics {

// Numerically stable softmax (the maximum is subtracted first).
std::vector<double> softmax(const std::vector<double>& logits);
std::size_t argmax(const std::vector<double>& v);

struct BinaryCounts {
    int tp = 0, fp = 0, fn = 0, tn = 0;
    int total() const { return tp + fp + fn + tn; }
};

struct F1 {
    double value = 0.0;
    bool degenerate = false;  // tp = fp = fn = 0
};

// 2 tp / (2 tp + fp + fn).
F1 f1_score(const BinaryCounts& c);

// Rows are true classes, columns predicted classes, in (NF, NR, R) order.
struct ConfusionMatrix {
    std::array<std::array<int, kNumClasses>, kNumClasses> counts{};

    int& at(Label truth, Label predicted) { return counts[index_of(truth)][index_of(predicted)]; }
    int at(Label truth, Label predicted) const { return counts[index_of(truth)][index_of(predicted)]; }
    int total() const;
    int trace() const;
    ConfusionMatrix& operator+=(const ConfusionMatrix& o);
    bool operator==(const ConfusionMatrix&) const = default;
};

double accuracy(const ConfusionMatrix& m);
// Collapses the matrix to `positive` vs the other classes.
BinaryCounts one_vs_rest(const ConfusionMatrix& m, Label positive);

// One evaluated clip.
struct Prediction {
    std::string clip_id;
    int capture_index = 0;
    int view_id = 1;
    int split_id = 0;
    Label truth = Label::NF;
    Label predicted = Label::NF;
    std::vector<double> scores;       // logits
    std::vector<double> probability;  // softmax of the scores
    int n_padding = 0;                // padding frames added by the loader

    bool operator==(const Prediction&) const = default;
};

ConfusionMatrix confusion(const std::vector<Prediction>& preds);
double accuracy(const std::vector<Prediction>& preds);

struct SplitSummary {
    std::vector<double> values;
    double mean = 0.0;
    double stddev = 0.0;         // population (divide by n); matches the reference rows
    double sample_stddev = 0.0;  // divide by n - 1

    // "mean ± std" with two decimals.
    std::string formatted() const;
};

SplitSummary cross_split_summary(const std::vector<double>& values);
double round2(double v);

nlohmann::json to_json(const ConfusionMatrix& m);
ConfusionMatrix confusion_from_json(const nlohmann::json& j);
nlohmann::json to_json(const Prediction& p);
Prediction prediction_from_json(const nlohmann::json& j);
nlohmann::json to_json(const SplitSummary& s);

// Per-split accuracy and NF F1 with their cross-split summaries.
nlohmann::json metrics_report(const std::vector<std::vector<Prediction>>& per_split);

}  // namespace herdnet::metrics
