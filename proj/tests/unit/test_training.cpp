#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <fstream>

#include "herdnet/synthetic.hpp"
#include "herdnet/training.hpp"

using namespace herdnet;
using namespace herdnet::training;
using models::Arch;

namespace {

struct TinySetup {
    scenegen::GeneratedDataset gen;
    dataio::SplitSpec split;
};

const TinySetup& tiny() {
    static const TinySetup s = [] {
        TinySetup t{scenegen::generate_dataset({4, 4, 4}, {}, 21), {}};
        const std::array<std::array<int, 3>, kNumClasses> counts{{{2, 1, 1}, {2, 1, 1}, {2, 1, 1}}};
        t.split = dataio::make_splits(t.gen.dataset.manifest, 1, counts, 2).at(1);
        return t;
    }();
    return s;
}

Hyperparams tiny_hyper(Arch arch) {
    auto h = desk_preset(arch);
    h.image_size = 32;
    h.epochs = 2;
    h.frames_per_video = arch == Arch::Temporal ? 3 : 4;
    h.seed = 5;
    return h;
}

models::ModelConfig tiny_config(Arch arch, const Hyperparams& h) {
    auto c = model_config(arch, h);
    c.backbone.widths = {4, 4, 6, 6};
    c.backbone.stem_width = 4;
    c.token_dim = 8;
    c.encoder_layers = 1;
    c.encoder_heads = 2;
    c.patch_size = 8;
    c.embed_dim = 8;
    c.depth = 1;
    c.heads = 2;
    return c;
}

std::vector<double> weights(const models::Classifier& m) {
    std::vector<double> w;
    for (const auto& [name, t] : m.state()) w.insert(w.end(), t.data().begin(), t.data().end());
    return w;
}

}  // namespace

TEST_CASE("plateau scheduler steps down after ten flat epochs") {
    PlateauScheduler s(1e-4, 10, 0.1);
    CHECK(s.step(1.0) == 1e-4);
    for (int k = 1; k <= 9; ++k) CHECK(s.step(1.0 + 0.1 * k) == 1e-4);
    CHECK(s.step(2.0) == doctest::Approx(1e-5));
    CHECK(s.reductions() == 1);
    PlateauScheduler t(1e-3, 10, 0.1);
    double prev = t.lr();
    for (int e = 0; e < 95; ++e) {
        const double lr = t.step(1.0);
        CHECK(lr <= prev);
        prev = lr;
    }
    CHECK(t.reductions() <= 95 / 10);
    CHECK(t.step(0.5) == t.lr());
}

TEST_CASE("presets follow the hyperparameter table") {
    const auto sp = full_scale_preset(Arch::Spatial);
    CHECK(sp.learning_rate == 1e-4);
    CHECK(sp.epochs == 200);
    CHECK(sp.image_size == 300);
    CHECK(sp.frames_per_video == 8);
    CHECK(sp.augment_flip);
    CHECK(sp.use_scheduler);
    const auto tp = full_scale_preset(Arch::Temporal);
    CHECK(tp.frames_per_video == 7);
    CHECK_FALSE(tp.augment_flip);
    const auto hy = full_scale_preset(Arch::Hybrid);
    CHECK(hy.learning_rate == 1e-6);
    CHECK(hy.frames_per_video == 12);
    CHECK_FALSE(hy.augment_flip);
    CHECK_FALSE(hy.use_scheduler);
    const auto ts = full_scale_preset(Arch::TimeSformer);
    CHECK(ts.batch_size == 3);
    CHECK(ts.image_size == 224);
    CHECK(ts.augment_flip);
}

TEST_CASE("training config file") {
    const auto path = std::filesystem::temp_directory_path() / "herdnet_hyper_test.ini";
    auto h = desk_preset(Arch::Hybrid);
    h.learning_rate = 2.5e-4;
    h.seed = 99;
    h.crop_timestamp = false;
    write_ini(path, h);
    CHECK(read_ini(path, desk_preset(Arch::Spatial)) == h);
    {
        std::ofstream out(path);
        out << "epochs = 7\n";
    }
    const auto partial = read_ini(path, desk_preset(Arch::Spatial));
    CHECK(partial.epochs == 7);
    CHECK(partial.learning_rate == desk_preset(Arch::Spatial).learning_rate);
    {
        std::ofstream out(path);
        out << "epochs = 7\nmomentum = 0.9\n";
    }
    CHECK_THROWS_WITH_AS(read_ini(path, {}), doctest::Contains("momentum"), Error);
    {
        std::ofstream out(path);
        out << "learning_rate = -1\n";
    }
    CHECK_THROWS_AS(read_ini(path, {}), Error);
    std::filesystem::remove(path);
}

TEST_CASE("loss decreases under small gradient steps on a linear probe") {
    Rng rng(3);
    nn::Linear lin(5, 3, rng);
    std::vector<double> xs(8 * 5);
    for (double& v : xs) v = rng.normal();
    const nn::Tensor x({8, 5}, xs);
    const std::vector<int> y{0, 1, 2, 0, 1, 2, 0, 1};
    double prev = 1e9;
    for (int step = 0; step < 30; ++step) {
        lin.zero_grad();
        auto loss = nn::cross_entropy(lin.forward(x), y);
        const double value = loss.data()[0];
        CHECK(value <= prev + 1e-12);
        prev = value;
        loss.backward();
        for (auto& p : lin.parameters())
            for (std::size_t i = 0; i < p.numel(); ++i) p.data()[i] -= 0.05 * p.grad()[i];
    }
}

TEST_CASE("training is deterministic and evaluation is well formed") {
    const auto& s = tiny();
    for (Arch arch : {Arch::Spatial, Arch::Temporal, Arch::Hybrid, Arch::TimeSformer}) {
        CAPTURE(models::to_string(arch));
        const auto h = tiny_hyper(arch);
        const auto c = tiny_config(arch, h);
        auto a = train(c, s.gen.dataset, s.split, h);
        auto b = train(c, s.gen.dataset, s.split, h);
        CHECK(weights(*a.model) == weights(*b.model));
        CHECK(a.history.epochs.size() == 2);
        CHECK(a.history.selected_epoch >= 0);
        double best = 1e9;
        for (const auto& e : a.history.epochs) best = std::min(best, e.val_loss);
        CHECK(a.history.epochs[static_cast<std::size_t>(a.history.selected_epoch)].val_loss == best);

        const auto preds = evaluate_split(*a.model, a.preprocess, s.gen.dataset, s.split.test, 1);
        CHECK(preds.size() == s.split.test.size());
        for (std::size_t i = 0; i < preds.size(); ++i) {
            double sum = 0.0;
            for (double p : preds[i].probability) sum += p;
            CHECK(std::abs(sum - 1.0) < 1e-6);
            if (i) CHECK(preds[i - 1].capture_index < preds[i].capture_index);
        }
        CHECK(evaluate_split(*a.model, a.preprocess, s.gen.dataset, s.split.test, 1) == preds);
    }
}

TEST_CASE("two-stream evaluation fuses the streams") {
    const auto& s = tiny();
    auto hs = tiny_hyper(Arch::Spatial), ht = tiny_hyper(Arch::Temporal);
    auto sp = train(tiny_config(Arch::Spatial, hs), s.gen.dataset, s.split, hs);
    auto tp = train(tiny_config(Arch::Temporal, ht), s.gen.dataset, s.split, ht);
    const auto ps = evaluate_split(*sp.model, sp.preprocess, s.gen.dataset, s.split.val);
    const auto pt = evaluate_split(*tp.model, tp.preprocess, s.gen.dataset, s.split.val);
    const auto fused = evaluate_two_stream(*sp.model, sp.preprocess, *tp.model, tp.preprocess, s.gen.dataset, s.split.val);
    REQUIRE(fused.size() == ps.size());
    for (std::size_t i = 0; i < fused.size(); ++i) {
        const auto want = models::fuse_two_stream(ps[i].scores, pt[i].scores);
        for (int k = 0; k < kNumClasses; ++k) {
            CHECK(fused[i].probability[static_cast<std::size_t>(k)] == doctest::Approx(want[static_cast<std::size_t>(k)]));
            CHECK(std::exp(fused[i].scores[static_cast<std::size_t>(k)]) == doctest::Approx(want[static_cast<std::size_t>(k)]));
        }
    }
}

TEST_CASE("trained models round trip with their preprocessing") {
    const auto& s = tiny();
    auto h = tiny_hyper(Arch::Spatial);
    h.sequence_length = 20;
    auto r = train(tiny_config(Arch::Spatial, h), s.gen.dataset, s.split, h);
    const auto dir = std::filesystem::temp_directory_path() / "herdnet_trained_test";
    save_trained(dir, "spatial", *r.model, r.preprocess);
    auto back = load_trained(dir, "spatial");
    CHECK(back.preprocess.sequence_length == 20);
    const auto a = evaluate_split(*r.model, r.preprocess, s.gen.dataset, s.split.val);
    const auto b = evaluate_split(*back.model, back.preprocess, s.gen.dataset, s.split.val);
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i].predicted == b[i].predicted);
    std::filesystem::remove_all(dir);
}

TEST_CASE("inputs count visible padding") {
    VideoClip c;
    for (int t = 0; t < 10; ++t) c.frames.emplace_back(32, 32, static_cast<std::uint8_t>(100 + t));
    auto cfg = tiny_config(Arch::Spatial, tiny_hyper(Arch::Spatial));
    Preprocess pre;
    pre.crop_timestamp = false;
    pre.sequence_length = 20;
    const auto in = prepare_input(c, cfg, pre);
    CHECK(in.channels == 4);
    // Samples 0, 5, 10, 15 of the padded clip: two are padding.
    CHECK(in.n_padding == 2);
    pre.sequence_length = 0;
    CHECK(prepare_input(c, cfg, pre).n_padding == 0);
    pre.sequence_length = 6;
    CHECK(prepare_input(c, cfg, pre).n_padding == 0);
}

TEST_CASE("empty training set is rejected") {
    const auto& s = tiny();
    auto split = s.split;
    split.train.clear();
    const auto h = tiny_hyper(Arch::Spatial);
    CHECK_THROWS_AS(train(tiny_config(Arch::Spatial, h), s.gen.dataset, split, h), Error);
}

TEST_CASE("pretrained backbones seed the streams") {
    PretrainConfig cfg;
    cfg.frames = 40;
    cfg.epochs = 1;
    cfg.image_size = 32;
    const auto pre = pretrain_backbone(nn::desk_backbone(), cfg);
    CHECK(pre.model->config().n_classes == 2);
    CHECK(pre.train_accuracy >= 0.0);
    CHECK(pre.train_accuracy <= 1.0);

    auto h = tiny_hyper(Arch::Spatial);
    auto spatial = models::make_classifier(model_config(Arch::Spatial, h));
    const int n_spatial = copy_backbone(*pre.model, *spatial);
    std::size_t backbone_tensors = 0;
    for (const auto& [name, t] : spatial->state()) {
        if (name.rfind("backbone.", 0) != 0) continue;
        ++backbone_tensors;
        const auto& src = [&]() -> const nn::Tensor& {
            for (const auto& [n, s] : pre.model->state())
                if (n == name) return s;
            throw Error("test", name);
        }();
        CHECK(std::equal(t.data().begin(), t.data().end(), src.data().begin()));
    }
    CHECK(n_spatial == static_cast<int>(backbone_tensors));

    auto temporal = models::make_classifier(model_config(Arch::Temporal, tiny_hyper(Arch::Temporal)));
    CHECK(copy_backbone(*pre.model, *temporal) == n_spatial - 1);
}
