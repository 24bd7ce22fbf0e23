#include "herdnet/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <numeric>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "herdnet/scenegen.hpp"

namespace herdnet::training {

using models::Arch;
using nn::Tensor;

namespace {

bool is_cnn_stream(Arch a) { return a == Arch::Spatial || a == Arch::Temporal || a == Arch::TwoStream; }
bool flips(Arch a) { return a == Arch::Spatial || a == Arch::TwoStream || a == Arch::TimeSformer; }

}  // namespace

Hyperparams full_scale_preset(Arch arch) {
    Hyperparams h;
    h.use_scheduler = is_cnn_stream(arch);
    h.augment_flip = flips(arch);
    switch (arch) {
        case Arch::Spatial:
        case Arch::TwoStream:
            h.learning_rate = 1e-4, h.epochs = 200, h.batch_size = 4, h.image_size = 300, h.frames_per_video = 8;
            break;
        case Arch::Temporal:
            h.learning_rate = 1e-4, h.epochs = 200, h.batch_size = 4, h.image_size = 300, h.frames_per_video = 7;
            break;
        case Arch::Hybrid:
            h.learning_rate = 1e-6, h.epochs = 100, h.batch_size = 4, h.image_size = 300, h.frames_per_video = 12;
            break;
        case Arch::TimeSformer:
            h.learning_rate = 1e-6, h.epochs = 100, h.batch_size = 3, h.image_size = 224, h.frames_per_video = 8;
            break;
    }
    return h;
}

Hyperparams desk_preset(Arch arch) {
    Hyperparams h;
    h.use_scheduler = is_cnn_stream(arch);
    h.augment_flip = flips(arch);
    h.image_size = 64;
    h.batch_size = 4;
    h.early_stop_patience = 10;
    switch (arch) {
        case Arch::Spatial:
        case Arch::TwoStream:
            h.learning_rate = 1e-3, h.epochs = 30, h.frames_per_video = 8;
            break;
        case Arch::Temporal:
            h.learning_rate = 1e-3, h.epochs = 30, h.frames_per_video = 7;
            break;
        case Arch::Hybrid:
            h.learning_rate = 3e-4, h.epochs = 40, h.frames_per_video = 12;
            break;
        case Arch::TimeSformer:
            h.learning_rate = 3e-4, h.epochs = 40, h.batch_size = 3, h.frames_per_video = 8;
            break;
    }
    return h;
}

void validate(const Hyperparams& h) {
    require(h.learning_rate > 0.0 && std::isfinite(h.learning_rate), "training", "learning_rate must be > 0");
    require(h.epochs >= 1 && h.batch_size >= 1, "training", "epochs and batch_size must be >= 1");
    require(h.scheduler_patience >= 1 && h.early_stop_patience >= 1, "training", "patience must be >= 1");
    require(h.scheduler_factor > 0.0 && h.scheduler_factor < 1.0, "training", "scheduler_factor must be in (0, 1)");
    require(h.image_size >= 8 && h.frames_per_video >= 1, "training", "invalid image_size or frames_per_video");
    require(h.grad_clip >= 0.0 && h.sequence_length >= 0, "training", "grad_clip and sequence_length must be >= 0");
}

// ------------------------------------------------------------------------ INI

void write_ini(const std::filesystem::path& path, const Hyperparams& h) {
    std::ofstream out(path);
    require(static_cast<bool>(out), "training", "cannot write " + path.string());
    out << std::setprecision(17);
    out << "learning_rate = " << h.learning_rate << "\n"
        << "epochs = " << h.epochs << "\n"
        << "batch_size = " << h.batch_size << "\n"
        << "image_size = " << h.image_size << "\n"
        << "frames_per_video = " << h.frames_per_video << "\n"
        << "use_scheduler = " << h.use_scheduler << "\n"
        << "scheduler_patience = " << h.scheduler_patience << "\n"
        << "scheduler_factor = " << h.scheduler_factor << "\n"
        << "early_stop_patience = " << h.early_stop_patience << "\n"
        << "augment_flip = " << h.augment_flip << "\n"
        << "grad_clip = " << h.grad_clip << "\n"
        << "crop_timestamp = " << h.crop_timestamp << "\n"
        << "sequence_length = " << h.sequence_length << "\n"
        << "seed = " << h.seed << "\n";
}

Hyperparams read_ini(const std::filesystem::path& path, Hyperparams h) {
    boost::property_tree::ptree tree;
    try {
        boost::property_tree::read_ini(path.string(), tree);
    } catch (const boost::property_tree::ini_parser_error& e) {
        throw Error("training", std::string("bad config file: ") + e.what());
    }
    for (const auto& [key, node] : tree) {
        require(node.empty(), "training", "sections are not supported in training config (" + key + ")");
        auto get = [&](auto& field) {
            try {
                field = node.get_value<std::remove_reference_t<decltype(field)>>();
            } catch (const boost::property_tree::ptree_error&) {
                throw Error("training", "bad value for " + key + ": '" + node.data() + "'");
            }
        };
        if (key == "learning_rate") get(h.learning_rate);
        else if (key == "epochs") get(h.epochs);
        else if (key == "batch_size") get(h.batch_size);
        else if (key == "image_size") get(h.image_size);
        else if (key == "frames_per_video") get(h.frames_per_video);
        else if (key == "use_scheduler") get(h.use_scheduler);
        else if (key == "scheduler_patience") get(h.scheduler_patience);
        else if (key == "scheduler_factor") get(h.scheduler_factor);
        else if (key == "early_stop_patience") get(h.early_stop_patience);
        else if (key == "augment_flip") get(h.augment_flip);
        else if (key == "grad_clip") get(h.grad_clip);
        else if (key == "crop_timestamp") get(h.crop_timestamp);
        else if (key == "sequence_length") get(h.sequence_length);
        else if (key == "seed") get(h.seed);
        else throw Error("training", "unknown config key '" + key + "'");
    }
    validate(h);
    return h;
}

models::ModelConfig model_config(Arch arch, const Hyperparams& h, models::Scale scale) {
    auto c = models::preset(arch, scale);
    c.image_size = h.image_size;
    c.frames_per_video = h.frames_per_video;
    c.init_seed = derive_seed(h.seed, 0x1417, static_cast<int>(arch));
    return c;
}

// --------------------------------------------------------------------- inputs

Preprocess preprocess_of(const Hyperparams& h) {
    Preprocess p;
    p.crop_timestamp = h.crop_timestamp;
    p.sequence_length = h.sequence_length;
    return p;
}

ClipInput prepare_input(const VideoClip& source, const models::ModelConfig& config, const Preprocess& pre) {
    require(source.frame_count() >= 1, "training", "clip " + source.clip_id + " has no frames");
    VideoClip clip = pre.crop_timestamp
                         ? dataio::crop_timestamp(source, dataio::default_crop_box(source.height(), source.width()))
                         : source;
    if (pre.sequence_length > 0)
        clip = clip.frame_count() < pre.sequence_length ? dataio::pad_clip(clip, pre.sequence_length)
                                                        : dataio::truncate_clip(clip, pre.sequence_length);
    std::vector<GrayImage> channels = config.arch == Arch::Temporal
                                          ? flow::temporal_stack(clip, config.frames_per_video, pre.flow)
                                          : dataio::sample_frames_uniform(clip, config.frames_per_video);
    ClipInput in;
    in.channels = static_cast<int>(channels.size());
    in.size = config.image_size;
    // Padding frames that reach the model (a flow pair counts if it touches one).
    const int real = clip.frame_count() - clip.n_padding;
    if (config.arch == Arch::Temporal) {
        for (int i : dataio::sample_indices_uniform(clip.frame_count() - 1, config.frames_per_video)) in.n_padding += i + 1 >= real;
    } else {
        for (int i : dataio::sample_indices_uniform(clip.frame_count(), config.frames_per_video)) in.n_padding += i >= real;
    }
    const std::size_t plane = static_cast<std::size_t>(in.size) * in.size;
    in.pixels.reserve(plane * channels.size());
    for (const auto& ch : channels) {
        const GrayImage img =
            ch.height == in.size && ch.width == in.size ? ch : resize_bilinear(ch, in.size, in.size);
        in.pixels.insert(in.pixels.end(), img.pixels.begin(), img.pixels.end());
    }
    return in;
}

Tensor make_batch(const std::vector<const ClipInput*>& inputs, const std::vector<bool>& flip) {
    require(!inputs.empty(), "training", "empty batch");
    require(flip.empty() || flip.size() == inputs.size(), "training", "flip mask size mismatch");
    static const auto lut = [] {
        std::array<double, 256> t{};
        for (int v = 0; v < 256; ++v) t[static_cast<std::size_t>(v)] = models::normalize_pixel(static_cast<std::uint8_t>(v));
        return t;
    }();
    const int K = inputs.front()->channels, S = inputs.front()->size;
    const std::size_t per = static_cast<std::size_t>(K) * S * S;
    std::vector<double> values(per * inputs.size());
    for (std::size_t b = 0; b < inputs.size(); ++b) {
        const ClipInput& in = *inputs[b];
        require(in.channels == K && in.size == S, "training", "batch inputs differ in shape");
        double* dst = values.data() + b * per;
        const bool mirror = !flip.empty() && flip[b];
        for (int k = 0; k < K; ++k)
            for (int y = 0; y < S; ++y)
                for (int x = 0; x < S; ++x) {
                    const std::size_t row = (static_cast<std::size_t>(k) * S + y) * S;
                    dst[row + x] = lut[in.pixels[row + (mirror ? S - 1 - x : x)]];
                }
    }
    return Tensor({static_cast<int>(inputs.size()), K, S, S}, std::move(values));
}

// -------------------------------------------------------------- optimisation

Adam::Adam(std::vector<Tensor> params, double lr, double beta1, double beta2, double eps)
    : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
    for (const auto& p : params_) {
        m_.emplace_back(p.numel(), 0.0);
        v_.emplace_back(p.numel(), 0.0);
    }
}

void Adam::step() {
    ++step_count_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(step_count_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(step_count_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
        auto g = params_[i].grad();
        if (g.empty()) continue;
        auto w = params_[i].data();
        auto& m = m_[i];
        auto& v = v_[i];
        for (std::size_t j = 0; j < w.size(); ++j) {
            m[j] = beta1_ * m[j] + (1 - beta1_) * g[j];
            v[j] = beta2_ * v[j] + (1 - beta2_) * g[j] * g[j];
            w[j] -= lr_ * (m[j] / c1) / (std::sqrt(v[j] / c2) + eps_);
        }
    }
}

double clip_grad_norm(const std::vector<Tensor>& params, double max_norm) {
    double sq = 0.0;
    for (const auto& p : params)
        for (double g : p.grad()) sq += g * g;
    const double norm = std::sqrt(sq);
    if (max_norm > 0.0 && norm > max_norm) {
        const double s = max_norm / norm;
        for (auto p : params)
            if (!p.grad().empty())
                for (double& g : p.mutable_grad()) g *= s;
    }
    return norm;
}

PlateauScheduler::PlateauScheduler(double lr, int patience, double factor)
    : lr_(lr), patience_(patience), factor_(factor), best_(std::numeric_limits<double>::infinity()) {
    require(lr > 0.0 && patience >= 1 && factor > 0.0 && factor < 1.0, "training", "invalid scheduler settings");
}

double PlateauScheduler::step(double loss) {
    if (loss < best_) {
        best_ = loss;
        bad_epochs_ = 0;
    } else if (++bad_epochs_ >= patience_) {
        lr_ *= factor_;
        ++reductions_;
        bad_epochs_ = 0;
    }
    return lr_;
}

void TrainHistory::write_csv(const std::filesystem::path& path) const {
    std::ofstream out(path);
    require(static_cast<bool>(out), "training", "cannot write " + path.string());
    out << "epoch,train_loss,val_loss,val_acc,lr\n" << std::setprecision(10);
    for (const auto& e : epochs)
        out << e.epoch << ',' << e.train_loss << ',' << e.val_loss << ',' << e.val_acc << ',' << e.lr << '\n';
}

// --------------------------------------------------------------------- train

namespace {

struct Prepared {
    std::vector<ClipInput> inputs;
    std::vector<int> labels;
};

Prepared prepare_all(const dataio::Dataset& data, const std::vector<std::string>& ids, const models::ModelConfig& config,
                     const Preprocess& pre) {
    Prepared p;
    for (const auto& id : ids) {
        const VideoClip& clip = data.clip(id);
        p.inputs.push_back(prepare_input(clip, config, pre));
        p.labels.push_back(index_of(clip.label));
    }
    return p;
}

EvalStats evaluate_prepared(models::Classifier& model, const Prepared& set, int batch_size) {
    model.eval();
    nn::NoGradGuard no_grad;
    double loss = 0.0;
    int correct = 0;
    const int n = static_cast<int>(set.inputs.size());
    for (int start = 0; start < n; start += batch_size) {
        const int end = std::min(n, start + batch_size);
        std::vector<const ClipInput*> batch;
        std::vector<int> labels;
        for (int i = start; i < end; ++i) {
            batch.push_back(&set.inputs[static_cast<std::size_t>(i)]);
            labels.push_back(set.labels[static_cast<std::size_t>(i)]);
        }
        Tensor logits = model.forward(make_batch(batch));
        loss += nn::cross_entropy(logits, labels).item() * (end - start);
        const int C = logits.dim(1);
        for (int i = 0; i < end - start; ++i) {
            auto row = logits.data().subspan(static_cast<std::size_t>(i) * C, static_cast<std::size_t>(C));
            const int pred = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
            correct += pred == labels[static_cast<std::size_t>(i)];
        }
    }
    return {loss / n, static_cast<double>(correct) / n};
}

std::vector<std::vector<double>> snapshot(const models::Classifier& model) {
    std::vector<std::vector<double>> s;
    for (const auto& [name, t] : model.state()) s.emplace_back(t.data().begin(), t.data().end());
    return s;
}

void restore(models::Classifier& model, const std::vector<std::vector<double>>& s) {
    auto state = model.state();
    for (std::size_t i = 0; i < state.size(); ++i) std::copy(s[i].begin(), s[i].end(), state[i].second.data().begin());
}

}  // namespace

TrainResult train(const models::ModelConfig& config_in, const dataio::Dataset& data, const dataio::SplitSpec& split,
                  const Hyperparams& hyper, const models::Classifier* backbone_init) {
    validate(hyper);
    require(!split.train.empty(), "training", "empty training set");
    models::ModelConfig config = config_in;
    config.image_size = hyper.image_size;
    config.frames_per_video = hyper.frames_per_video;

    TrainResult result;
    result.preprocess = preprocess_of(hyper);
    result.model = models::make_classifier(config);
    models::Classifier& model = *result.model;
    if (backbone_init) copy_backbone(*backbone_init, model);

    const Prepared train_set = prepare_all(data, split.train, config, result.preprocess);
    const Prepared val_set = prepare_all(data, split.val, config, result.preprocess);
    const bool has_val = !val_set.inputs.empty();

    Adam opt(model.parameters(), hyper.learning_rate);
    PlateauScheduler sched(hyper.learning_rate, hyper.scheduler_patience, hyper.scheduler_factor);
    Rng order_rng(derive_seed(hyper.seed, 0x0D, split.split_id));
    Rng flip_rng(derive_seed(hyper.seed, 0xF1, split.split_id));
    const auto params = model.parameters();

    std::vector<int> order(train_set.inputs.size());
    std::iota(order.begin(), order.end(), 0);
    double best = std::numeric_limits<double>::infinity();
    std::vector<std::vector<double>> best_state = snapshot(model);

    for (int epoch = 0; epoch < hyper.epochs; ++epoch) {
        model.train();
        order_rng.shuffle(order);
        double total = 0.0;
        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(hyper.batch_size)) {
            const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(hyper.batch_size));
            std::vector<const ClipInput*> batch;
            std::vector<int> labels;
            std::vector<bool> flip;
            for (std::size_t i = start; i < end; ++i) {
                const auto k = static_cast<std::size_t>(order[i]);
                batch.push_back(&train_set.inputs[k]);
                labels.push_back(train_set.labels[k]);
                flip.push_back(hyper.augment_flip && flip_rng.bernoulli(0.5));
            }
            model.zero_grad();
            Tensor loss = nn::cross_entropy(model.forward(make_batch(batch, flip)), labels);
            require(std::isfinite(loss.item()), "training",
                    "non-finite loss at epoch " + std::to_string(epoch) + " (lr " + std::to_string(opt.lr()) + ")");
            loss.backward();
            if (hyper.grad_clip > 0.0) clip_grad_norm(params, hyper.grad_clip);
            opt.step();
            total += loss.item() * static_cast<double>(end - start);
        }
        EpochRecord rec;
        rec.epoch = epoch;
        rec.train_loss = total / static_cast<double>(order.size());
        rec.lr = opt.lr();
        if (has_val) {
            const EvalStats v = evaluate_prepared(model, val_set, hyper.batch_size);
            rec.val_loss = v.loss;
            rec.val_acc = v.accuracy;
        } else {
            rec.val_loss = rec.train_loss;
        }
        result.history.epochs.push_back(rec);
        if (rec.val_loss < best) {
            best = rec.val_loss;
            best_state = snapshot(model);
            result.history.selected_epoch = epoch;
        }
        if (hyper.use_scheduler) opt.set_lr(sched.step(rec.val_loss));
        if (epoch - result.history.selected_epoch >= hyper.early_stop_patience) break;
    }
    restore(model, best_state);
    model.eval();
    return result;
}

TwoStreamResult train_two_stream(const dataio::Dataset& data, const dataio::SplitSpec& split, const Hyperparams& spatial,
                                 const Hyperparams& temporal, const models::Classifier* backbone_init) {
    TwoStreamResult r;
    r.spatial = train(model_config(Arch::Spatial, spatial), data, split, spatial, backbone_init);
    r.temporal = train(model_config(Arch::Temporal, temporal), data, split, temporal, backbone_init);
    return r;
}

// ---------------------------------------------------------------- pretraining

PretrainResult pretrain_backbone(const nn::BackboneSpec& backbone, const PretrainConfig& cfg) {
    require(cfg.frames >= 2 && cfg.epochs >= 1 && cfg.batch_size >= 1 && cfg.learning_rate > 0.0, "training",
            "invalid pretraining config");
    models::ModelConfig c;
    c.arch = Arch::Spatial;
    c.backbone = backbone;
    c.image_size = cfg.image_size;
    c.frames_per_video = 1;
    c.n_classes = 2;
    c.init_seed = derive_seed(cfg.seed, 0x9e7);

    // One random frame of a generated clip; the label is whether fish pixels are visible in it.
    const int S = cfg.image_size;
    std::vector<double> pixels;
    std::vector<int> labels;
    pixels.reserve(static_cast<std::size_t>(cfg.frames) * S * S);
    Rng rng(derive_seed(cfg.seed, 0x9e8));
    for (int i = 0; i < cfg.frames; ++i) {
        const int view = static_cast<int>(rng.uniform_int(1, kNumViews));
        const Label label = label_from_index(static_cast<int>(rng.uniform_int(0, kNumClasses - 1)));
        const auto spec = scenegen::random_scene(view, label, scenegen::kMinFrames, {}, rng.next_u64());
        const auto scene = scenegen::render_scene(spec);
        const auto t = static_cast<std::size_t>(rng.uniform_int(0, spec.frame_count - 1));
        const auto& mask = scene.masks.fish[t];
        labels.push_back(std::any_of(mask.pixels.begin(), mask.pixels.end(), [](auto v) { return v != 0; }) ? 1 : 0);
        const GrayImage frame = resize_bilinear(scene.clip.frames[t], S, S);
        for (auto v : frame.pixels) pixels.push_back(models::normalize_pixel(v));
    }

    PretrainResult r;
    r.model = models::make_classifier(c);
    models::Classifier& model = *r.model;
    Adam opt(model.parameters(), cfg.learning_rate);
    std::vector<int> order(labels.size());
    std::iota(order.begin(), order.end(), 0);
    const std::size_t plane = static_cast<std::size_t>(S) * S;
    auto batch_of = [&](std::size_t start, std::size_t end, std::vector<int>& y) {
        std::vector<double> v;
        v.reserve((end - start) * plane);
        y.clear();
        for (std::size_t i = start; i < end; ++i) {
            const auto k = static_cast<std::size_t>(order[i]);
            v.insert(v.end(), pixels.begin() + static_cast<std::ptrdiff_t>(k * plane),
                     pixels.begin() + static_cast<std::ptrdiff_t>((k + 1) * plane));
            y.push_back(labels[k]);
        }
        return Tensor({static_cast<int>(end - start), 1, S, S}, std::move(v));
    };
    std::vector<int> y;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        model.train();
        rng.shuffle(order);
        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
            const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
            const Tensor x = batch_of(start, end, y);
            model.zero_grad();
            Tensor loss = nn::cross_entropy(model.forward(x), y);
            require(std::isfinite(loss.item()), "training", "non-finite loss while pretraining");
            loss.backward();
            opt.step();
        }
    }
    model.eval();
    nn::NoGradGuard guard;
    std::iota(order.begin(), order.end(), 0);
    int correct = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
        const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
        const Tensor logits = model.forward(batch_of(start, end, y));
        for (std::size_t i = 0; i < y.size(); ++i) {
            const double a = logits.data()[2 * i], b = logits.data()[2 * i + 1];
            correct += (b > a ? 1 : 0) == y[i];
        }
    }
    r.train_accuracy = static_cast<double>(correct) / static_cast<double>(labels.size());
    return r;
}

int copy_backbone(const models::Classifier& from, models::Classifier& to) {
    std::map<std::string, Tensor> src;
    for (const auto& [name, t] : from.state())
        if (name.rfind("backbone.", 0) == 0) src.emplace(name, t);
    int copied = 0;
    for (auto& [name, t] : to.state()) {
        const auto it = src.find(name);
        if (it == src.end() || it->second.shape() != t.shape()) continue;
        const auto s = it->second.data();
        auto d = t.data();
        std::copy(s.begin(), s.end(), d.begin());
        ++copied;
    }
    return copied;
}

// ------------------------------------------------------------------ evaluate

namespace {

std::vector<std::vector<double>> logits_for(models::Classifier& model, const Preprocess& pre, const dataio::Dataset& data,
                                            const std::vector<std::string>& ids, std::vector<int>* n_padding) {
    model.eval();
    nn::NoGradGuard no_grad;
    std::vector<std::vector<double>> out;
    for (const auto& id : ids) {
        const VideoClip& clip = data.clip(id);
        const ClipInput in = prepare_input(clip, model.config(), pre);
        Tensor logits = model.forward(make_batch({&in}));
        out.emplace_back(logits.data().begin(), logits.data().end());
        if (n_padding) n_padding->push_back(in.n_padding);
    }
    return out;
}

std::vector<std::string> capture_sorted(const dataio::Dataset& data, std::vector<std::string> ids) {
    for (const auto& id : ids) require(data.manifest.contains(id), "training", "unknown clip id " + id);
    std::sort(ids.begin(), ids.end(), [&](const std::string& a, const std::string& b) {
        return data.manifest.at(a).capture_index < data.manifest.at(b).capture_index;
    });
    return ids;
}

metrics::Prediction base_prediction(const dataio::Dataset& data, const std::string& id, int split_id) {
    const auto& row = data.manifest.at(id);
    metrics::Prediction p;
    p.clip_id = id;
    p.capture_index = row.capture_index;
    p.view_id = row.view_id;
    p.split_id = split_id;
    p.truth = row.label;
    return p;
}

}  // namespace

std::vector<metrics::Prediction> evaluate_split(models::Classifier& model, const Preprocess& pre,
                                                const dataio::Dataset& data, const std::vector<std::string>& clip_ids,
                                                int split_id) {
    const auto ids = capture_sorted(data, clip_ids);
    std::vector<int> pads;
    const auto logits = logits_for(model, pre, data, ids, &pads);
    std::vector<metrics::Prediction> out;
    for (std::size_t i = 0; i < ids.size(); ++i) {
        auto p = base_prediction(data, ids[i], split_id);
        p.scores = logits[i];
        p.probability = metrics::softmax(p.scores);
        p.predicted = label_from_index(static_cast<int>(metrics::argmax(p.probability)));
        p.n_padding = pads[i];
        out.push_back(std::move(p));
    }
    return out;
}

std::vector<metrics::Prediction> evaluate_two_stream(models::Classifier& spatial, const Preprocess& spatial_pre,
                                                     models::Classifier& temporal, const Preprocess& temporal_pre,
                                                     const dataio::Dataset& data,
                                                     const std::vector<std::string>& clip_ids, int split_id) {
    const auto ids = capture_sorted(data, clip_ids);
    std::vector<int> pads;
    const auto s = logits_for(spatial, spatial_pre, data, ids, &pads);
    const auto t = logits_for(temporal, temporal_pre, data, ids, nullptr);
    std::vector<metrics::Prediction> out;
    for (std::size_t i = 0; i < ids.size(); ++i) {
        auto p = base_prediction(data, ids[i], split_id);
        p.probability = models::fuse_two_stream(s[i], t[i]);
        for (double v : p.probability) p.scores.push_back(std::log(v));
        p.predicted = label_from_index(static_cast<int>(metrics::argmax(p.probability)));
        p.n_padding = pads[i];
        out.push_back(std::move(p));
    }
    return out;
}

// ------------------------------------------------------------------- storage

nlohmann::json to_json(const Preprocess& p) {
    return {{"crop_timestamp", p.crop_timestamp},
            {"sequence_length", p.sequence_length},
            {"flow",
             {{"levels", p.flow.levels},
              {"pyr_scale", p.flow.pyr_scale},
              {"window", p.flow.window},
              {"iterations", p.flow.iterations},
              {"poly_n", p.flow.poly_n},
              {"poly_sigma", p.flow.poly_sigma}}}};
}

Preprocess preprocess_from_json(const nlohmann::json& j) {
    Preprocess p;
    try {
        j.at("crop_timestamp").get_to(p.crop_timestamp);
        j.at("sequence_length").get_to(p.sequence_length);
        const auto& f = j.at("flow");
        f.at("levels").get_to(p.flow.levels);
        f.at("pyr_scale").get_to(p.flow.pyr_scale);
        f.at("window").get_to(p.flow.window);
        f.at("iterations").get_to(p.flow.iterations);
        f.at("poly_n").get_to(p.flow.poly_n);
        f.at("poly_sigma").get_to(p.flow.poly_sigma);
    } catch (const nlohmann::json::exception& e) {
        throw Error("training", std::string("bad preprocessing record: ") + e.what());
    }
    return p;
}

void save_trained(const std::filesystem::path& dir, const std::string& name, const models::Classifier& model,
                  const Preprocess& pre) {
    std::filesystem::create_directories(dir);
    models::save_checkpoint(dir / name, model);
    std::ofstream out(dir / (name + ".pre.json"));
    out << to_json(pre).dump(2) << "\n";
}

LoadedModel load_trained(const std::filesystem::path& dir, const std::string& name) {
    LoadedModel m;
    m.model = models::load_checkpoint(dir / name);
    std::ifstream in(dir / (name + ".pre.json"));
    require(static_cast<bool>(in), "training", "missing preprocessing record for " + (dir / name).string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw Error("training", std::string("bad preprocessing record: ") + e.what());
    }
    m.preprocess = preprocess_from_json(j);
    return m;
}

}  // namespace herdnet::training
