#include "herdnet/dataio.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "herdnet/rng.hpp"

namespace herdnet::dataio {

namespace fs = std::filesystem;

Manifest::Manifest(std::vector<ManifestRow> rows) : rows_(std::move(rows)) {
    std::sort(rows_.begin(), rows_.end(),
              [](const ManifestRow& a, const ManifestRow& b) { return a.capture_index < b.capture_index; });
    for (std::size_t i = 0; i < rows_.size(); ++i) {
        const auto& r = rows_[i];
        require(i == 0 || rows_[i - 1].capture_index != r.capture_index, "dataio",
                "duplicate capture_index " + std::to_string(r.capture_index));
        require(r.view_id >= 1 && r.view_id <= kNumViews, "dataio", "view_id out of range for " + r.clip_id);
        require(index_.emplace(r.clip_id, i).second, "dataio", "duplicate clip_id " + r.clip_id);
    }
}

std::size_t Manifest::position(const std::string& clip_id) const {
    const auto it = index_.find(clip_id);
    require(it != index_.end(), "dataio", "unknown clip_id " + clip_id);
    return it->second;
}

const ManifestRow& Manifest::at(const std::string& clip_id) const { return rows_[position(clip_id)]; }

std::array<int, kNumClasses> Manifest::class_totals() const {
    std::array<int, kNumClasses> t{};
    for (const auto& r : rows_) ++t[static_cast<std::size_t>(index_of(r.label))];
    return t;
}

Manifest Manifest::read_csv(const fs::path& path) {
    std::ifstream in(path);
    require(in.good(), "dataio", "cannot open manifest " + path.string());
    std::string line;
    std::getline(in, line);
    require(line == "clip_id,label,view_id,capture_index,frame_count,path", "dataio",
            "unexpected manifest header: " + line);
    std::vector<ManifestRow> rows;
    int lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::vector<std::string> cells;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) cells.push_back(cell);
        require(cells.size() == 6, "dataio", "manifest line " + std::to_string(lineno) + " has " +
                                                 std::to_string(cells.size()) + " fields");
        try {
            rows.push_back({cells[0], parse_label(cells[1]), std::stoi(cells[2]), std::stoi(cells[3]),
                            std::stoi(cells[4]), cells[5]});
        } catch (const std::logic_error&) {
            throw Error("dataio", "malformed number on manifest line " + std::to_string(lineno));
        }
    }
    return Manifest(std::move(rows));
}

void Manifest::write_csv(const fs::path& path) const {
    std::ofstream out(path);
    require(out.good(), "dataio", "cannot write manifest " + path.string());
    out << "clip_id,label,view_id,capture_index,frame_count,path\n";
    for (const auto& r : rows_) {
        out << r.clip_id << ',' << to_string(r.label) << ',' << r.view_id << ',' << r.capture_index << ','
            << r.frame_count << ',' << r.path << '\n';
    }
}

SplitCounts proportional_counts(const std::array<int, kNumClasses>& class_totals) {
    SplitCounts out{};
    for (int c = 0; c < kNumClasses; ++c) {
        const auto& ref = kReferenceSplitCounts[static_cast<std::size_t>(c)];
        const double total_ref = ref[0] + ref[1] + ref[2];
        const int n = class_totals[static_cast<std::size_t>(c)];
        const int test = static_cast<int>(std::round(n * ref[2] / total_ref));
        const int val = static_cast<int>(std::round(n * ref[1] / total_ref));
        out[static_cast<std::size_t>(c)] = {n - val - test, val, test};
    }
    return out;
}

const std::vector<std::string>& SplitSpec::subset(Subset s) const {
    switch (s) {
        case Subset::Train: return train;
        case Subset::Val: return val;
        case Subset::Test: return test;
    }
    return train;
}

nlohmann::json to_json(const SplitSpec& split) {
    return {{"split_id", split.split_id}, {"train", split.train}, {"val", split.val}, {"test", split.test}};
}

SplitSpec split_from_json(const nlohmann::json& j) {
    try {
        SplitSpec s;
        s.split_id = j.at("split_id").get<int>();
        s.train = j.at("train").get<std::vector<std::string>>();
        s.val = j.at("val").get<std::vector<std::string>>();
        s.test = j.at("test").get<std::vector<std::string>>();
        return s;
    } catch (const nlohmann::json::exception& e) {
        throw Error("dataio", std::string("malformed split: ") + e.what());
    }
}

std::vector<SplitSpec> make_splits(const Manifest& manifest, int n_splits, const SplitCounts& counts,
                                   std::uint64_t seed) {
    require(n_splits >= 1, "dataio", "n_splits must be at least 1");
    const auto totals = manifest.class_totals();
    std::array<std::vector<std::string>, kNumClasses> by_class;
    for (const auto& r : manifest.rows()) by_class[static_cast<std::size_t>(index_of(r.label))].push_back(r.clip_id);
    for (int c = 0; c < kNumClasses; ++c) {
        const auto& k = counts[static_cast<std::size_t>(c)];
        require(k[0] >= 0 && k[1] >= 0 && k[2] >= 0, "dataio", "negative split count");
        const int need = k[0] + k[1] + k[2];
        require(totals[static_cast<std::size_t>(c)] >= need, "dataio",
                "infeasible split counts: class " + std::string(to_string(label_from_index(c))) + " needs " +
                    std::to_string(need) + " clips but the manifest has " +
                    std::to_string(totals[static_cast<std::size_t>(c)]));
    }
    auto capture_order = [&](std::vector<std::string>& ids) {
        std::sort(ids.begin(), ids.end(), [&](const std::string& a, const std::string& b) {
            return manifest.at(a).capture_index < manifest.at(b).capture_index;
        });
    };
    std::vector<SplitSpec> splits;
    for (int s = 0; s <= n_splits; ++s) {
        Rng rng(derive_seed(seed, 0x5b117, static_cast<std::uint64_t>(s)));
        SplitSpec split;
        split.split_id = s;
        for (int c = 0; c < kNumClasses; ++c) {
            auto ids = by_class[static_cast<std::size_t>(c)];
            rng.shuffle(ids);
            const auto& k = counts[static_cast<std::size_t>(c)];
            auto it = ids.begin();
            split.train.insert(split.train.end(), it, it + k[0]);
            it += k[0];
            split.val.insert(split.val.end(), it, it + k[1]);
            it += k[1];
            split.test.insert(split.test.end(), it, it + k[2]);
        }
        capture_order(split.train);
        capture_order(split.val);
        capture_order(split.test);
        splits.push_back(std::move(split));
    }
    return splits;
}

CropBox default_crop_box(int height, int width) {
    return CropBox{0, 0, static_cast<int>(std::ceil(0.12 * height)), static_cast<int>(std::ceil(0.30 * width))};
}

GrayImage crop_timestamp(const GrayImage& frame, const CropBox& box) {
    require(box.y0 >= 0 && box.x0 >= 0 && box.height >= 0 && box.width >= 0 &&
                box.y0 + box.height <= frame.height && box.x0 + box.width <= frame.width,
            "dataio", "crop box outside frame bounds");
    GrayImage out = frame;
    for (int y = box.y0; y < box.y0 + box.height; ++y)
        for (int x = box.x0; x < box.x0 + box.width; ++x) out.at(y, x) = 0;
    return out;
}

VideoClip crop_timestamp(const VideoClip& clip, const CropBox& box) {
    VideoClip out = clip;
    for (auto& f : out.frames) f = crop_timestamp(f, box);
    return out;
}

std::vector<int> sample_indices_uniform(int frame_count, int n) {
    require(n >= 1 && frame_count >= 1, "dataio", "sampling needs n >= 1 and at least one frame");
    std::vector<int> idx(static_cast<std::size_t>(n));
    for (int k = 0; k < n; ++k) {
        idx[static_cast<std::size_t>(k)] =
            static_cast<int>((static_cast<std::int64_t>(k) * frame_count) / n);
    }
    return idx;
}

std::vector<GrayImage> sample_frames_uniform(const VideoClip& clip, int n) {
    std::vector<GrayImage> out;
    for (int i : sample_indices_uniform(clip.frame_count(), n)) out.push_back(clip.frames[static_cast<std::size_t>(i)]);
    return out;
}

VideoClip pad_clip(const VideoClip& clip, int target_len) {
    require(target_len >= clip.frame_count(), "dataio",
            "target_len " + std::to_string(target_len) + " < frame count " + std::to_string(clip.frame_count()));
    require(clip.frame_count() >= 1, "dataio", "cannot pad an empty clip");
    VideoClip out = clip;
    const int extra = target_len - clip.frame_count();
    for (int i = 0; i < extra; ++i) out.frames.emplace_back(clip.height(), clip.width(), 0);
    out.n_padding = clip.n_padding + extra;
    return out;
}

VideoClip truncate_clip(const VideoClip& clip, int max_len) {
    require(max_len >= 1, "dataio", "max_len must be positive");
    if (clip.frame_count() <= max_len) return clip;
    VideoClip out = clip;
    out.frames.resize(static_cast<std::size_t>(max_len));
    out.n_padding = std::max(0, clip.n_padding - (clip.frame_count() - max_len));
    return out;
}

GrayImage horizontal_flip(const GrayImage& frame) {
    GrayImage out(frame.height, frame.width);
    for (int y = 0; y < frame.height; ++y)
        for (int x = 0; x < frame.width; ++x) out.at(y, frame.width - 1 - x) = frame.at(y, x);
    return out;
}

std::vector<GrayImage> horizontal_flip(const std::vector<GrayImage>& frames) {
    std::vector<GrayImage> out;
    out.reserve(frames.size());
    for (const auto& f : frames) out.push_back(horizontal_flip(f));
    return out;
}

void write_clip_frames(const fs::path& dir, const VideoClip& clip) {
    fs::create_directories(dir);
    char name[32];
    for (int t = 0; t < clip.frame_count(); ++t) {
        std::snprintf(name, sizeof(name), "frame_%04d.png", t);
        write_png(dir / name, clip.frames[static_cast<std::size_t>(t)]);
    }
}

VideoClip read_clip(const fs::path& manifest_dir, const ManifestRow& row) {
    VideoClip clip;
    clip.clip_id = row.clip_id;
    clip.label = row.label;
    clip.view_id = row.view_id;
    clip.capture_index = row.capture_index;
    const fs::path dir = manifest_dir / row.path;
    char name[32];
    for (int t = 0; t < row.frame_count; ++t) {
        std::snprintf(name, sizeof(name), "frame_%04d.png", t);
        clip.frames.push_back(read_png_gray(dir / name));
        require(clip.frames.back().same_shape(clip.frames.front()), "dataio",
                "frame size mismatch in clip " + row.clip_id);
    }
    require(clip.frame_count() >= 1, "dataio", "clip " + row.clip_id + " has no frames");
    return clip;
}

const VideoClip& Dataset::clip(const std::string& clip_id) const {
    const std::size_t i = manifest.position(clip_id);
    require(i < clips.size(), "dataio", "clip not loaded: " + clip_id);
    return clips[i];
}

Dataset load_dataset(const fs::path& manifest_path) {
    Dataset ds;
    ds.manifest = Manifest::read_csv(manifest_path);
    const fs::path dir = manifest_path.parent_path();
    for (const auto& row : ds.manifest.rows()) ds.clips.push_back(read_clip(dir, row));
    return ds;
}

}  // namespace herdnet::dataio
