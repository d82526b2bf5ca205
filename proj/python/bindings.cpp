// Python bindings: configs, benchmarks, losses, pseudo labels and the full pipeline.

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "cpga/experiments.hpp"
#include "cpga/io.hpp"

namespace py = pybind11;
using namespace cpga;

namespace {

py::dict dataset_dict(const Dataset& d) {
    py::dict out;
    out["features"] = d.features();
    out["labels"] = d.eval_labels();
    out["domain"] = to_string(d.domain());
    out["num_classes"] = d.num_classes();
    return out;
}

py::dict run(const RunConfig& cfg) {
    auto [source, target] = make_domains(cfg);
    const PipelineResult r = [&] {
        py::gil_scoped_release release;
        return run_pipeline(source, target, cfg.train);
    }();
    py::dict out;
    out["source_accuracy"] = r.source_accuracy;
    out["source_only_accuracy"] = r.source_only_accuracy;
    out["adapted_accuracy"] = r.adapted_accuracy;
    out["inter_distance"] = r.geometry.inter;
    out["intra_distance"] = r.geometry.intra;
    out["pseudo_labels"] = r.adapted.pseudo.labels;
    out["weights"] = r.adapted.pseudo.weights;
    out["metrics_csv"] = r.log.to_csv();
    out["classifier_hash"] = checkpoint_hash(r.source.classifier.params);
    out["generator_hash"] = checkpoint_hash(r.generator.params);
    return out;
}

}  // namespace

PYBIND11_MODULE(_cpga, m) {
    m.doc() = "Contrastive prototype generation and adaptation on synthetic domain shift";

    py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
    py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);
    py::register_exception<ContractError>(m, "ContractError", PyExc_RuntimeError);
    py::register_exception<DivergenceError>(m, "DivergenceError", PyExc_ArithmeticError);

    py::class_<LossToggles>(m, "LossToggles")
        .def(py::init<>())
        .def_readwrite("use_contrastive", &LossToggles::use_contrastive)
        .def_readwrite("use_weights", &LossToggles::use_weights)
        .def_readwrite("use_elr", &LossToggles::use_elr)
        .def_readwrite("use_nc", &LossToggles::use_nc)
        .def_readwrite("stage1_contrastive", &LossToggles::stage1_contrastive);

    py::class_<ShiftConfig>(m, "ShiftConfig")
        .def(py::init<>())
        .def_readwrite("num_classes", &ShiftConfig::num_classes)
        .def_readwrite("input_dim", &ShiftConfig::input_dim)
        .def_readwrite("samples_per_class", &ShiftConfig::samples_per_class)
        .def_readwrite("rotation_angle", &ShiftConfig::rotation_angle)
        .def_readwrite("translation", &ShiftConfig::translation)
        .def_readwrite("scale", &ShiftConfig::scale)
        .def_readwrite("noise_std", &ShiftConfig::noise_std)
        .def_readwrite("seed", &ShiftConfig::seed)
        .def("validate", &ShiftConfig::validate);

    py::class_<TrainConfig>(m, "TrainConfig")
        .def(py::init<>())
        .def_readwrite("pretrain_epochs", &TrainConfig::pretrain_epochs)
        .def_readwrite("stage1_epochs", &TrainConfig::stage1_epochs)
        .def_readwrite("stage2_epochs", &TrainConfig::stage2_epochs)
        .def_readwrite("learning_rate", &TrainConfig::learning_rate)
        .def_readwrite("batch_size", &TrainConfig::batch_size)
        .def_readwrite("lambda_", &TrainConfig::lambda)
        .def_readwrite("eta", &TrainConfig::eta)
        .def_readwrite("beta", &TrainConfig::beta)
        .def_readwrite("tau", &TrainConfig::tau)
        .def_readwrite("pseudo_label_noise", &TrainConfig::pseudo_label_noise)
        .def_readwrite("seed", &TrainConfig::seed)
        .def_readwrite("feature_dim", &TrainConfig::feature_dim)
        .def_readwrite("noise_dim", &TrainConfig::noise_dim)
        .def_readwrite("toggles", &TrainConfig::toggles)
        .def("validate", &TrainConfig::validate);

    py::class_<RunConfig>(m, "RunConfig")
        .def(py::init<>())
        .def_readwrite("shift", &RunConfig::shift)
        .def_readwrite("train", &RunConfig::train)
        .def("to_json", [](const RunConfig& c) { return dump_run_config(c); });

    m.def("parse_run_config", &parse_run_config, py::arg("json_text"));
    m.def("rotated_gaussians_benchmark", &rotated_gaussians_benchmark, py::arg("seed") = 0);

    m.def(
        "make_gaussian_domains",
        [](const ShiftConfig& cfg) {
            auto [s, t] = make_gaussian_domains(cfg);
            return py::make_tuple(dataset_dict(s), dataset_dict(t));
        },
        py::arg("config"));
    m.def(
        "inject_label_noise",
        [](const Labels& labels, int k, double rate, std::uint64_t seed) {
            return inject_label_noise(labels, k, rate, seed);
        },
        py::arg("labels"), py::arg("num_classes"), py::arg("rate"), py::arg("seed"));

    m.def(
        "weighted_contrastive",
        [](const Mat& u, const Mat& v, const Labels& y, const std::vector<double>& w, double tau) {
            return losses::weighted_contrastive(u, v, y, w, Temperature(tau), static_cast<int>(v.rows()));
        },
        py::arg("u"), py::arg("v"), py::arg("labels"), py::arg("weights"), py::arg("tau") = 0.07);
    m.def(
        "elr", [](const Mat& o, const Mat& h) { return losses::elr(o, h); }, py::arg("predictions"),
        py::arg("bank_rows"));
    m.def(
        "neighborhood_clustering", [](const Mat& s) { return losses::neighborhood_clustering(s); },
        py::arg("similarities"));
    m.def(
        "nonparametric_predict", [](const Mat& u, const Mat& v, double tau) {
            return nonparametric_predict(u, v, Temperature(tau));
        },
        py::arg("u"), py::arg("v"), py::arg("tau") = 0.07);

    m.def(
        "assign_labels", [](const Mat& q, const Mat& c) { return assign_labels(q, CentroidSet{c, 0}); },
        py::arg("features"), py::arg("centroids"));
    m.def(
        "refresh_centroids",
        [](const Mat& q, const Labels& y, const Mat& previous) {
            return refresh_centroids(q, y, CentroidSet{previous, 0}).centroids;
        },
        py::arg("features"), py::arg("labels"), py::arg("previous"));

    m.def("run", &run, py::arg("config"),
          "Pretrain, train the generator and adapt; returns accuracies, pseudo labels and the metrics CSV.");
}
