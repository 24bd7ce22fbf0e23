#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <vector>

#include <nlohmann/json.hpp>

#include "herdnet/dataio.hpp"
#include "herdnet/scenegen.hpp"

namespace herdnet::scenegen {

// Planted correlations between class and nuisance attributes. Each rho is the
// probability that a clip's class equals the class designated for its group
// (camera view, length bin, timestamp key); 1/3 plants nothing.
struct BiasConfig {
    double view_class_correlation = 1.0 / 3.0;
    double padding_class_correlation = 1.0 / 3.0;
    double timestamp_class_correlation = 1.0 / 3.0;
    std::array<int, kNumClasses> class_length_offset{0, 0, 0};  // frames, per class (NF, NR, R)
};

void validate(const BiasConfig& bias);

// Majority class planted in a view: views cycle NF, NR, R, NF, ...
Label view_majority_class(int view_id);

// Frame-count bins [8,22], [23,38], [39,80]. R is designated the short bin,
// NR the medium one and NF the long one.
inline constexpr std::array<std::array<int, 2>, 3> kLengthBins{{{8, 22}, {23, 38}, {39, 80}}};
int designated_length_bin(Label label);

// Day digit and minute tens digit written by a timestamp keyed to `label`.
std::array<int, 2> timestamp_key(Label label);

// Expected view-by-class counts: rows are views 1..16, columns are classes;
// column sums equal `counts` and each view's majority share equals rho.
std::array<std::array<int, kNumClasses>, kNumViews> view_class_counts(const std::array<int, kNumClasses>& counts,
                                                                      double rho);

struct GeneratedDataset {
    dataio::Dataset dataset;
    std::vector<SceneSpec> specs;  // manifest order
    BiasConfig bias;
    std::uint64_t seed = 0;
};

GeneratedDataset generate_dataset(const std::array<int, kNumClasses>& counts, const BiasConfig& bias,
                                  std::uint64_t seed, const SceneOptions& options = {});

// Writes manifest.csv, clips/<id>/frame_%04d.png and clips/<id>/scene.json.
void write_dataset(const std::filesystem::path& dir, const GeneratedDataset& gen);

nlohmann::json to_json(const BiasConfig& bias);
BiasConfig bias_from_json(const nlohmann::json& j);

}  // namespace herdnet::scenegen
