#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "herdnet/clip.hpp"

namespace herdnet::dataio {

struct ManifestRow {
    std::string clip_id;
    Label label = Label::NF;
    int view_id = 1;
    int capture_index = 0;
    int frame_count = 0;
    std::string path;  // clip directory, relative to the manifest

    bool operator==(const ManifestRow&) const = default;
};

// Rows sorted by capture_index; capture indices are unique.
class Manifest {
public:
    Manifest() = default;
    explicit Manifest(std::vector<ManifestRow> rows);

    const std::vector<ManifestRow>& rows() const { return rows_; }
    std::size_t size() const { return rows_.size(); }
    const ManifestRow& at(const std::string& clip_id) const;
    std::size_t position(const std::string& clip_id) const;
    bool contains(const std::string& clip_id) const { return index_.count(clip_id) > 0; }
    std::array<int, kNumClasses> class_totals() const;

    static Manifest read_csv(const std::filesystem::path& path);
    void write_csv(const std::filesystem::path& path) const;

private:
    std::vector<ManifestRow> rows_;
    std::map<std::string, std::size_t> index_;
};

enum class Subset { Train = 0, Val = 1, Test = 2 };

// counts[class][subset]
using SplitCounts = std::array<std::array<int, 3>, kNumClasses>;

// Per-class train/val/test sizes of every split: NF 144/36/20, NR 154/39/21, R 151/38/21.
inline constexpr SplitCounts kReferenceSplitCounts{{{144, 36, 20}, {154, 39, 21}, {151, 38, 21}}};
inline constexpr std::array<int, kNumClasses> kReferenceTotals{200, 214, 210};

// Same train/val/test proportions as kReferenceSplitCounts, applied to other class totals.
SplitCounts proportional_counts(const std::array<int, kNumClasses>& class_totals);

struct SplitSpec {
    int split_id = 0;
    std::vector<std::string> train, val, test;

    const std::vector<std::string>& subset(Subset s) const;
    bool operator==(const SplitSpec&) const = default;
};

nlohmann::json to_json(const SplitSpec& split);
SplitSpec split_from_json(const nlohmann::json& j);

// Returns splits 0..n_splits; split 0 is the tuning split.
std::vector<SplitSpec> make_splits(const Manifest& manifest, int n_splits, const SplitCounts& counts,
                                   std::uint64_t seed);

// --- preprocessing ---

struct CropBox {
    int y0 = 0, x0 = 0, height = 0, width = 0;
};

// Timestamp region used by the scene generator (top-left 12% x 30%).
CropBox default_crop_box(int height, int width);

// Zeroes the crop box; the image keeps its size.
GrayImage crop_timestamp(const GrayImage& frame, const CropBox& box);
VideoClip crop_timestamp(const VideoClip& clip, const CropBox& box);

// idx_k = floor(k * T / n), k = 0..n-1.
std::vector<int> sample_indices_uniform(int frame_count, int n);
std::vector<GrayImage> sample_frames_uniform(const VideoClip& clip, int n);

// Appends (target_len - T) all-zero frames.
VideoClip pad_clip(const VideoClip& clip, int target_len);
// Keeps the first max_len frames.
VideoClip truncate_clip(const VideoClip& clip, int max_len);

GrayImage horizontal_flip(const GrayImage& frame);
std::vector<GrayImage> horizontal_flip(const std::vector<GrayImage>& frames);

// --- on-disk clips: <dir>/frame_%04d.png ---

void write_clip_frames(const std::filesystem::path& dir, const VideoClip& clip);
VideoClip read_clip(const std::filesystem::path& manifest_dir, const ManifestRow& row);

// An in-memory dataset: manifest plus decoded clips in manifest order.
struct Dataset {
    Manifest manifest;
    std::vector<VideoClip> clips;

    const VideoClip& clip(const std::string& clip_id) const;
};

Dataset load_dataset(const std::filesystem::path& manifest_path);

}  // namespace herdnet::dataio
