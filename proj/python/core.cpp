#include <sstream>

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "herdnet/audit.hpp"
#include "herdnet/cli.hpp"
#include "herdnet/flow.hpp"
#include "herdnet/metrics.hpp"
#include "herdnet/synthetic.hpp"

namespace py = pybind11;
using namespace herdnet;

namespace {

using U8Array = py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>;

GrayImage gray_from(const U8Array& a) {
    require(a.ndim() == 2, "python", "expected a 2-D uint8 array");
    GrayImage g(static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)));
    std::copy(a.data(), a.data() + a.size(), g.pixels.begin());
    return g;
}

py::array_t<double> dense_flow(const U8Array& a, const U8Array& b) {
    const auto f = flow::dense_flow(gray_from(a), gray_from(b));
    py::array_t<double> out({f.height, f.width, 2});
    auto v = out.mutable_unchecked<3>();
    for (int y = 0; y < f.height; ++y)
        for (int x = 0; x < f.width; ++x) {
            v(y, x, 0) = f.dx(y, x);
            v(y, x, 1) = f.dy(y, x);
        }
    return out;
}

py::tuple run_cli(const std::vector<std::string>& args) {
    std::ostringstream out, err;
    const int code = cli::cli_main(args, out, err);
    return py::make_tuple(code, out.str(), err.str());
}

std::string generate(const std::filesystem::path& out, const std::array<int, kNumClasses>& counts, double rho_view,
                     double rho_pad, double rho_ts, std::uint64_t seed, int size) {
    scenegen::BiasConfig bias;
    bias.view_class_correlation = rho_view;
    bias.padding_class_correlation = rho_pad;
    bias.timestamp_class_correlation = rho_ts;
    scenegen::SceneOptions options;
    options.height = options.width = size;
    const auto gen = scenegen::generate_dataset(counts, bias, seed, options);
    scenegen::write_dataset(out, gen);
    return (out / "manifest.csv").string();
}

std::string audit_json(const std::string& predictions_json, const std::filesystem::path& manifest_csv,
                       bool predicted_class_pp, std::uint64_t seed) {
    const auto manifest = dataio::Manifest::read_csv(manifest_csv);
    std::vector<metrics::Prediction> preds;
    for (const auto& p : nlohmann::json::parse(predictions_json)) preds.push_back(metrics::prediction_from_json(p));
    return audit::audit_report(preds, manifest, predicted_class_pp, seed).dump();
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Video clip classifiers and dataset-bias audit";
    py::register_exception<Error>(m, "HerdnetError", PyExc_RuntimeError);

    m.attr("CLASS_ORDER") = py::make_tuple("NF", "NR", "R");
    m.def("softmax", &metrics::softmax, py::arg("logits"));
    m.def("f1_score", [](int tp, int fp, int fn, int tn) {
        const auto f = metrics::f1_score({tp, fp, fn, tn});
        return py::make_tuple(f.value, f.degenerate);
    }, py::arg("tp"), py::arg("fp"), py::arg("fn"), py::arg("tn") = 0, "Returns (value, degenerate).");
    m.def("cross_split_summary", [](const std::vector<double>& values) {
        return metrics::to_json(metrics::cross_split_summary(values)).dump();
    }, py::arg("values"), "JSON with mean, std (population), sample_std and formatted.");
    m.def("sample_indices_uniform", &dataio::sample_indices_uniform, py::arg("frame_count"), py::arg("n"));
    m.def("dense_flow", &dense_flow, py::arg("first"), py::arg("second"),
          "Dense flow between two uint8 frames as an (H, W, 2) array of (dx, dy).");
    m.def("generate_dataset", &generate, py::arg("out"), py::arg("counts"), py::arg("rho_view") = 1.0 / 3,
          py::arg("rho_pad") = 1.0 / 3, py::arg("rho_ts") = 1.0 / 3, py::arg("seed") = 1, py::arg("size") = 64,
          "Writes a synthetic dataset; returns the manifest path.");
    m.def("audit_report", &audit_json, py::arg("predictions_json"), py::arg("manifest_csv"),
          py::arg("predicted_class_pp") = false, py::arg("seed") = 0, "Audit report of a JSON list of predictions.");
    m.def("cli", &run_cli, py::arg("args"), "Runs the command-line tool; returns (exit_code, stdout, stderr).");
}
