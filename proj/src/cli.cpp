#include "herdnet/cli.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "herdnet/audit.hpp"
#include "herdnet/explain.hpp"
#include "herdnet/report.hpp"
#include "herdnet/synthetic.hpp"
#include "herdnet/training.hpp"

namespace herdnet::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json read_json(const fs::path& path) {
    std::ifstream in(path);
    require(static_cast<bool>(in), "cli", "cannot read " + path.string());
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw Error("cli", "bad JSON in " + path.string() + ": " + e.what());
    }
}

void write_json(const fs::path& path, const json& j) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path);
    require(static_cast<bool>(out), "cli", "cannot write " + path.string());
    out << j.dump(2) << "\n";
}

// Copies the effective options of a subcommand next to its artifacts.
void write_run_config(const fs::path& dir, const CLI::App& sub) {
    fs::create_directories(dir);
    std::ofstream out(dir / "run_config.ini");
    require(static_cast<bool>(out), "cli", "cannot write run config in " + dir.string());
    out << "command=\"" << sub.get_name() << "\"\n"
        << "seed=" << sub.get_parent()->get_option("--seed")->as<std::uint64_t>() << "\n"
        << sub.config_to_str(true, false);
}

GrayImage map_image(const FloatImage& values) {
    GrayImage g(values.height, values.width);
    for (std::size_t i = 0; i < values.size(); ++i) g.pixels[i] = saturate_u8(255.0 * values.pixels[i]);
    return g;
}

fs::path split_path(const fs::path& dir, int split_id) {
    char name[32];
    std::snprintf(name, sizeof(name), "split_%02d.json", split_id);
    return dir / name;
}

dataio::SplitSpec read_split(const fs::path& dir, int split_id) {
    return dataio::split_from_json(read_json(split_path(dir, split_id)));
}

std::vector<std::string> stream_names(const fs::path& model_dir) {
    if (fs::exists(model_dir / "spatial.bin") && fs::exists(model_dir / "temporal.bin")) return {"spatial", "temporal"};
    require(fs::exists(model_dir / "model.bin"), "cli", "no trained model in " + model_dir.string());
    return {"model"};
}

std::vector<metrics::Prediction> predict(const fs::path& model_dir, const dataio::Dataset& data,
                                         const std::vector<std::string>& ids, int split_id) {
    const auto names = stream_names(model_dir);
    if (names.size() == 2) {
        auto s = training::load_trained(model_dir, "spatial");
        auto t = training::load_trained(model_dir, "temporal");
        return training::evaluate_two_stream(*s.model, s.preprocess, *t.model, t.preprocess, data, ids, split_id);
    }
    auto m = training::load_trained(model_dir, "model");
    return training::evaluate_split(*m.model, m.preprocess, data, ids, split_id);
}

// --- gen ---

struct GenOptions {
    fs::path out;
    std::string preset = "paper-counts";
    std::vector<int> counts;
    double rho_view = 1.0 / 3.0, rho_pad = 1.0 / 3.0, rho_ts = 1.0 / 3.0;
    std::vector<int> length_offset{0, 0, 0};
    int size = 64;
    bool no_timestamp = false;
};

void run_gen(const GenOptions& o, std::uint64_t seed, const CLI::App& sub, std::ostream& out) {
    std::array<int, kNumClasses> counts{};
    if (!o.counts.empty()) {
        std::copy(o.counts.begin(), o.counts.end(), counts.begin());
    } else if (o.preset == "paper-counts") {
        counts = dataio::kReferenceTotals;
    } else {
        counts = {40, 40, 40};
    }
    scenegen::BiasConfig bias;
    bias.view_class_correlation = o.rho_view;
    bias.padding_class_correlation = o.rho_pad;
    bias.timestamp_class_correlation = o.rho_ts;
    std::copy(o.length_offset.begin(), o.length_offset.end(), bias.class_length_offset.begin());
    scenegen::SceneOptions scene;
    scene.height = scene.width = o.size;
    scene.timestamp_enabled = !o.no_timestamp;
    const auto gen = scenegen::generate_dataset(counts, bias, seed, scene);
    scenegen::write_dataset(o.out, gen);
    write_run_config(o.out, sub);
    out << "generated " << gen.dataset.manifest.size() << " clips in " << o.out.string() << "\n";
}

// --- split ---

struct SplitOptions {
    fs::path data, out;
    int n_splits = 10;
};

void run_split(const SplitOptions& o, std::uint64_t seed, const CLI::App& sub, std::ostream& out) {
    const auto manifest = dataio::Manifest::read_csv(o.data / "manifest.csv");
    const auto totals = manifest.class_totals();
    const auto counts = totals == dataio::kReferenceTotals ? dataio::kReferenceSplitCounts : dataio::proportional_counts(totals);
    const fs::path dir = o.out.empty() ? o.data / "splits" : o.out;
    const auto splits = dataio::make_splits(manifest, o.n_splits, counts, seed);
    for (const auto& s : splits) write_json(split_path(dir, s.split_id), dataio::to_json(s));
    write_run_config(dir, sub);
    out << "wrote " << splits.size() << " splits to " << dir.string() << "\n";
}

// --- train ---

struct TrainOptions {
    fs::path data, splits, out, config;
    int split = 1;
    std::string arch = "two_stream";
    std::string preset = "desk";
    bool strict_paper = false;
    // Overrides; negative or empty means "keep".
    double lr = -1;
    int epochs = -1, batch_size = -1, image_size = -1, frames = -1, sequence_length = -1;
    bool no_crop = false, no_flip = false;
    fs::path init_backbone;
};

training::Hyperparams stream_hyper(const TrainOptions& o, models::Arch arch, std::uint64_t seed) {
    const bool full_scale = o.strict_paper || o.preset == "table3";
    auto h = full_scale ? training::full_scale_preset(arch) : training::desk_preset(arch);
    if (!o.config.empty()) h = training::read_ini(o.config, h);
    if (o.lr > 0) h.learning_rate = o.lr;
    if (o.epochs > 0) h.epochs = o.epochs;
    if (o.batch_size > 0) h.batch_size = o.batch_size;
    if (o.image_size > 0) h.image_size = o.image_size;
    if (o.frames > 0) h.frames_per_video = o.frames;
    if (o.sequence_length >= 0) h.sequence_length = o.sequence_length;
    if (o.no_crop) h.crop_timestamp = false;
    if (o.no_flip) h.augment_flip = false;
    if (o.strict_paper) {
        // Every clip padded or truncated to exactly the frames the model reads; no clipping.
        h.sequence_length = h.frames_per_video + (arch == models::Arch::Temporal ? 1 : 0);
        h.grad_clip = 0.0;
    }
    h.seed = seed;
    training::validate(h);
    return h;
}

void run_train(const TrainOptions& o, std::uint64_t seed, const CLI::App& sub, std::ostream& out) {
    require(!(o.strict_paper && o.preset == "desk" && sub.count("--preset") > 0), "cli",
            "--strict-paper pins the table3 preset; drop --preset desk");
    const auto arch = models::parse_arch(o.arch);
    const auto scale = o.strict_paper ? models::Scale::Full : models::Scale::Desk;
    const auto data = dataio::load_dataset(o.data / "manifest.csv");
    const auto split = read_split(o.splits.empty() ? o.data / "splits" : o.splits, o.split);

    std::vector<std::pair<std::string, models::Arch>> streams;
    if (arch == models::Arch::TwoStream)
        streams = {{"spatial", models::Arch::Spatial}, {"temporal", models::Arch::Temporal}};
    else
        streams = {{"model", arch}};

    std::unique_ptr<models::Classifier> init;
    if (!o.init_backbone.empty()) init = models::load_checkpoint(o.init_backbone);

    fs::create_directories(o.out);
    json summary{{"arch", o.arch}, {"split_id", o.split}, {"streams", json::array()}};
    for (const auto& [name, a] : streams) {
        const auto h = stream_hyper(o, a, seed);
        training::write_ini(o.out / ("hyper_" + name + ".ini"), h);
        const auto result = training::train(training::model_config(a, h, scale), data, split, h, init.get());
        training::save_trained(o.out, name, *result.model, result.preprocess);
        result.history.write_csv(o.out / ("history_" + name + ".csv"));
        const auto& sel = result.history.epochs.at(static_cast<std::size_t>(result.history.selected_epoch));
        summary["streams"].push_back({{"name", name},
                                      {"arch", models::to_string(a)},
                                      {"epochs_run", result.history.epochs.size()},
                                      {"selected_epoch", result.history.selected_epoch},
                                      {"val_loss", sel.val_loss},
                                      {"val_acc", sel.val_acc}});
        out << name << ": selected epoch " << result.history.selected_epoch << ", val acc " << sel.val_acc << "\n";
    }
    write_json(o.out / "train.json", summary);
    write_run_config(o.out, sub);
}

// --- pretrain ---

struct PretrainOptions {
    fs::path out;
    training::PretrainConfig config;
    bool strict_paper = false;
};

void run_pretrain(PretrainOptions o, std::uint64_t seed, const CLI::App& sub, std::ostream& out) {
    o.config.seed = seed;
    const auto backbone = o.strict_paper ? nn::resnet18_backbone() : nn::desk_backbone();
    const auto r = training::pretrain_backbone(backbone, o.config);
    fs::create_directories(o.out);
    models::save_checkpoint(o.out / "backbone", *r.model);
    write_json(o.out / "pretrain.json", {{"frames", o.config.frames},
                                         {"epochs", o.config.epochs},
                                         {"image_size", o.config.image_size},
                                         {"train_accuracy", r.train_accuracy}});
    write_run_config(o.out, sub);
    out << "fish/no-fish accuracy " << r.train_accuracy << " -> " << (o.out / "backbone").string() << "\n";
}

// --- eval ---

struct EvalOptions {
    fs::path data, splits, model, out;
    int split = 1;
    std::string subset = "val";
};

void run_eval(const EvalOptions& o, const CLI::App& sub, std::ostream& out) {
    const auto data = dataio::load_dataset(o.data / "manifest.csv");
    const auto split = read_split(o.splits.empty() ? o.data / "splits" : o.splits, o.split);
    const auto subset = o.subset == "train" ? dataio::Subset::Train : o.subset == "test" ? dataio::Subset::Test : dataio::Subset::Val;
    const auto preds = predict(o.model, data, split.subset(subset), o.split);
    json pj = json::array();
    for (const auto& p : preds) pj.push_back(metrics::to_json(p));
    const auto m = metrics::confusion(preds);
    const auto f1 = metrics::f1_score(metrics::one_vs_rest(m, Label::NF));
    const fs::path path = o.out.empty() ? o.model / ("eval_split" + std::to_string(o.split) + "_" + o.subset + ".json") : o.out;
    write_json(path, {{"split_id", o.split},
                      {"subset", o.subset},
                      {"class_order", {"NF", "NR", "R"}},
                      {"accuracy", metrics::accuracy(m)},
                      {"f1_nf", f1.value},
                      {"confusion", metrics::to_json(m)},
                      {"predictions", pj}});
    write_run_config(path.parent_path().empty() ? fs::path(".") : path.parent_path(), sub);
    out << "accuracy " << metrics::accuracy(m) << " over " << preds.size() << " clips -> " << path.string() << "\n";
}

// --- explain ---

struct ExplainOptions {
    fs::path data, model, out;
    std::string clip, target = "predicted", stream = "spatial", layer;
};

void run_explain(const ExplainOptions& o, const CLI::App& sub, std::ostream& out) {
    const auto data = dataio::load_dataset(o.data / "manifest.csv");
    const VideoClip& clip = data.clip(o.clip);
    const auto names = stream_names(o.model);
    const std::string name = names.size() == 2 ? o.stream : "model";
    require(name == "model" || name == "spatial" || name == "temporal", "cli", "--stream must be spatial or temporal");
    int target;
    if (o.target == "predicted") {
        target = index_of(predict(o.model, data, {o.clip}, 0).front().predicted);
    } else {
        target = index_of(parse_label(o.target));
    }
    auto m = training::load_trained(o.model, name);
    const auto maps = explain::explain_clip(*m.model, m.preprocess, clip, target, o.layer);
    fs::create_directories(o.out);
    const auto in = training::prepare_input(clip, m.model->config(), m.preprocess);
    const int S = in.size;
    const auto frame_image = [&](int k) {
        GrayImage g(S, S);
        std::copy_n(in.pixels.begin() + static_cast<std::ptrdiff_t>(k) * S * S, S * S, g.pixels.begin());
        return g;
    };
    for (const auto& map : maps) {
        const std::string stem = o.clip + (map.frame >= 0 ? "_f" + std::to_string(map.frame) : "");
        explain::save_map(o.out / stem, map);
        // Overlay on the input frame (the gray channel for flow stacks).
        const int channel = map.frame >= 0 ? (in.channels > static_cast<int>(maps.size()) ? 2 * map.frame : map.frame) : 0;
        write_png(o.out / (stem + "_overlay.png"), explain::overlay(map, frame_image(channel)));
    }
    auto mean = explain::average_maps(maps);
    mean.clip_id = o.clip;
    explain::save_map(o.out / (o.clip + "_mean"), mean);
    write_json(o.out / (o.clip + "_explain.json"), {{"clip_id", o.clip},
                                                    {"stream", name},
                                                    {"target", std::string(to_string(label_from_index(target)))},
                                                    {"layer", maps.front().layer},
                                                    {"maps", maps.size()},
                                                    {"zero_gradient", mean.zero_gradient}});
    write_run_config(o.out, sub);
    out << "wrote " << maps.size() << " maps for " << o.clip << " (target " << to_string(label_from_index(target)) << ")\n";
}

// --- audit ---

struct AuditOptions {
    fs::path data, out;
    std::vector<fs::path> predictions;
    bool predicted_class_pp = false, padding_probe = false, timestamp_probe = false;
    int probe_epochs = -1;
};

void run_audit(const AuditOptions& o, std::uint64_t seed, const CLI::App& sub, std::ostream& out) {
    const auto manifest = dataio::Manifest::read_csv(o.data / "manifest.csv");
    std::vector<metrics::Prediction> all;
    std::map<int, std::vector<metrics::Prediction>> by_split;
    for (const auto& path : o.predictions) {
        const json j = read_json(path);
        require(j.contains("predictions"), "cli", path.string() + " is not an eval output");
        for (const auto& pj : j.at("predictions")) {
            auto p = metrics::prediction_from_json(pj);
            by_split[p.split_id].push_back(p);
            all.push_back(std::move(p));
        }
    }
    fs::create_directories(o.out);
    json report = json::object();
    if (!all.empty()) {
        report = audit::audit_report(all, manifest, o.predicted_class_pp, seed);
        std::vector<std::vector<metrics::Prediction>> per_split;
        for (auto& [id, preds] : by_split) per_split.push_back(preds);
        write_json(o.out / "metrics.json", metrics::metrics_report(per_split));
    }
    if (o.padding_probe) {
        audit::PaddingProbeConfig pc;
        pc.seed = seed;
        if (o.probe_epochs > 0) pc.hyper.epochs = o.probe_epochs;
        pc.hyper.seed = seed;
        const auto r = audit::padding_probe(pc);
        pc.bias = audit::PaddingProbeConfig::control_bias();
        const auto control = audit::padding_probe(pc);
        report["padding_probe"] = {{"correlated", audit::to_json(r)}, {"control", audit::to_json(control)}};
        for (const auto& s : r.settings)
            if (s.padding_map) write_png(o.out / ("padding_map_L" + std::to_string(s.sequence_length) + ".png"), map_image(s.padding_map->values));
    }
    if (o.timestamp_probe) {
        audit::TimestampProbeConfig tc;
        tc.seed = seed;
        if (o.probe_epochs > 0) tc.hyper.epochs = o.probe_epochs;
        tc.hyper.seed = seed;
        report["timestamp_probe"] = audit::to_json(audit::timestamp_probe(tc));
    }
    require(!report.empty(), "cli", "nothing to audit: pass --predictions or a probe flag");
    write_json(o.out / "audit.json", report);
    write_run_config(o.out, sub);
    out << "audit written to " << (o.out / "audit.json").string() << "\n";
}

// --- report ---

struct ReportOptions {
    fs::path audit, out;
};

void run_report(const ReportOptions& o, const CLI::App& sub, std::ostream& out) {
    const json j = read_json(o.audit);
    require(j.contains("per_view") && j.contains("adjacency_curves"), "cli", o.audit.string() + " has no prediction audit");
    fs::create_directories(o.out);
    write_png(o.out / "adjacency_curves.png", report::plot_adjacency_curves(j.at("adjacency_curves")));
    write_png(o.out / "per_view_confusion.png", report::plot_per_view_confusion(j.at("per_view")));
    write_png(o.out / "view_distribution.png", report::plot_view_distribution(j.at("per_view")));
    write_run_config(o.out, sub);
    out << "figures written to " << o.out.string() << "\n";
}

std::string one_line(std::string s) {
    std::replace(s.begin(), s.end(), '\n', ' ');
    return s;
}

}  // namespace

int cli_main(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Video action recognition with a dataset-bias audit", "herdnet"};
    app.require_subcommand(1);
    app.fallthrough();
    std::uint64_t seed = 1;
    app.add_option("--seed", seed, "Seed for every stochastic component")->capture_default_str();

    GenOptions gen;
    auto* g = app.add_subcommand("gen", "Generate a synthetic dataset");
    g->add_option("--out", gen.out, "Output dataset directory")->required();
    g->add_option("--preset", gen.preset, "Class counts")->check(CLI::IsMember({"paper-counts", "desk"}))->capture_default_str();
    g->add_option("--counts", gen.counts, "Clips per class NF,NR,R")->delimiter(',')->expected(3);
    g->add_option("--rho-view", gen.rho_view, "View-class correlation")->check(CLI::Range(0.0, 1.0));
    g->add_option("--rho-pad", gen.rho_pad, "Length-class correlation")->check(CLI::Range(0.0, 1.0));
    g->add_option("--rho-ts", gen.rho_ts, "Timestamp-class correlation")->check(CLI::Range(0.0, 1.0));
    g->add_option("--length-offset", gen.length_offset, "Frame offset per class NF,NR,R")->delimiter(',')->expected(3);
    g->add_option("--size", gen.size, "Frame height and width")->capture_default_str();
    g->add_flag("--no-timestamp", gen.no_timestamp, "Do not draw timestamps");

    SplitOptions split;
    auto* s = app.add_subcommand("split", "Build train/val/test splits");
    s->add_option("--data", split.data, "Dataset directory")->required();
    s->add_option("--out", split.out, "Split directory (default <data>/splits)");
    s->add_option("--n-splits", split.n_splits, "Evaluation splits besides split 0")->capture_default_str();

    TrainOptions train;
    auto* t = app.add_subcommand("train", "Train a model on one split");
    t->add_option("--data", train.data, "Dataset directory")->required();
    t->add_option("--splits", train.splits, "Split directory (default <data>/splits)");
    t->add_option("--split", train.split, "Split id")->capture_default_str();
    t->add_option("--arch", train.arch, "spatial, temporal, two_stream, hybrid or timesformer")->capture_default_str();
    t->add_option("--preset", train.preset, "Hyperparameter preset")->check(CLI::IsMember({"desk", "table3"}))->capture_default_str();
    t->add_option("--config", train.config, "INI file of hyperparameters")->check(CLI::ExistingFile);
    t->add_flag("--strict-paper", train.strict_paper, "Full-scale hyperparameters, full-size models, fixed-length clips");
    t->add_option("--lr", train.lr, "Learning rate");
    t->add_option("--epochs", train.epochs, "Epochs");
    t->add_option("--batch-size", train.batch_size, "Batch size");
    t->add_option("--image-size", train.image_size, "Input size");
    t->add_option("--frames", train.frames, "Frames (flow pairs for the temporal stream)");
    t->add_option("--sequence-length", train.sequence_length, "Pad/truncate clips to this length first (0: sample whole clip)");
    t->add_flag("--no-crop", train.no_crop, "Keep the timestamp region");
    t->add_flag("--no-flip", train.no_flip, "Disable flip augmentation");
    t->add_option("--init-backbone", train.init_backbone, "Checkpoint prefix from pretrain (e.g. pre/backbone)");
    t->add_option("--out", train.out, "Model directory")->required();

    PretrainOptions pre;
    auto* p = app.add_subcommand("pretrain", "Fit the backbone on single generated frames (fish / no fish)");
    p->add_option("--frames", pre.config.frames, "Training frames")->capture_default_str();
    p->add_option("--epochs", pre.config.epochs, "Epochs")->capture_default_str();
    p->add_option("--image-size", pre.config.image_size, "Input size")->capture_default_str();
    p->add_option("--lr", pre.config.learning_rate, "Learning rate")->capture_default_str();
    p->add_flag("--strict-paper", pre.strict_paper, "18-layer backbone");
    p->add_option("--out", pre.out, "Output directory")->required();

    EvalOptions eval;
    auto* e = app.add_subcommand("eval", "Predict one split subset");
    e->add_option("--data", eval.data, "Dataset directory")->required();
    e->add_option("--splits", eval.splits, "Split directory (default <data>/splits)");
    e->add_option("--split", eval.split, "Split id")->capture_default_str();
    e->add_option("--subset", eval.subset, "Subset")->check(CLI::IsMember({"train", "val", "test"}))->capture_default_str();
    e->add_option("--model", eval.model, "Model directory")->required();
    e->add_option("--out", eval.out, "Output JSON (default <model>/eval_split<k>_<subset>.json)");

    ExplainOptions expl;
    auto* x = app.add_subcommand("explain", "Grad-CAM maps for one clip");
    x->add_option("--data", expl.data, "Dataset directory")->required();
    x->add_option("--model", expl.model, "Model directory")->required();
    x->add_option("--clip", expl.clip, "Clip id")->required();
    x->add_option("--target", expl.target, "Class (NF, NR, R) or 'predicted'")->capture_default_str();
    x->add_option("--stream", expl.stream, "Stream of a two-stream model")->capture_default_str();
    x->add_option("--layer", expl.layer, "Layer (default: the model's explain layer)");
    x->add_option("--out", expl.out, "Output directory")->required();

    AuditOptions aud;
    auto* a = app.add_subcommand("audit", "Bias audit of predictions and leakage probes");
    a->add_option("--data", aud.data, "Dataset directory")->required();
    a->add_option("--predictions", aud.predictions, "eval outputs (validation subsets of all splits)");
    a->add_flag("--predicted-class-pp", aud.predicted_class_pp, "Curves of the predicted-class PP instead of the true-class PP");
    a->add_flag("--padding-probe", aud.padding_probe, "Run the padding-leakage probe");
    a->add_flag("--timestamp-probe", aud.timestamp_probe, "Run the timestamp-leakage probe");
    a->add_option("--probe-epochs", aud.probe_epochs, "Epochs per probe model");
    a->add_option("--out", aud.out, "Output directory")->required();

    ReportOptions rep;
    auto* r = app.add_subcommand("report", "Render audit figures");
    r->add_option("--audit", rep.audit, "audit.json")->required()->check(CLI::ExistingFile);
    r->add_option("--out", rep.out, "Output directory")->required();

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::ParseError& ex) {
        if (ex.get_exit_code() == 0) {
            out << app.help();
            return 0;
        }
        err << "error: cli: " << one_line(ex.what()) << "\n" << app.help();
        return 2;
    }

    try {
        if (*g) run_gen(gen, seed, *g, out);
        else if (*s) run_split(split, seed, *s, out);
        else if (*t) run_train(train, seed, *t, out);
        else if (*p) run_pretrain(pre, seed, *p, out);
        else if (*e) run_eval(eval, *e, out);
        else if (*x) run_explain(expl, *x, out);
        else if (*a) run_audit(aud, seed, *a, out);
        else if (*r) run_report(rep, *r, out);
    } catch (const Error& ex) {
        err << "error: " << one_line(ex.what()) << "\n";
        return 1;
    } catch (const std::exception& ex) {
        err << "error: cli: " << one_line(ex.what()) << "\n";
        return 1;
    }
    return 0;
}

int cli_main(int argc, const char* const* argv) {
    std::vector<std::string> args;
    for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
    return cli_main(args, std::cout, std::cerr);
}

}  // namespace herdnet::cli
