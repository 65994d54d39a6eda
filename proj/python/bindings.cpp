#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "ito/checkpoint.hpp"
#include "ito/data.hpp"
#include "ito/errors.hpp"
#include "ito/eval.hpp"
#include "ito/experiment.hpp"
#include "ito/trainer.hpp"
#include "ito/verify.hpp"

namespace py = pybind11;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

ito::Tensor to_tensor(const Array& a) {
    ito::Dims dims(a.shape(), a.shape() + a.ndim());
    return ito::Tensor(dims, std::vector<double>(a.data(), a.data() + a.size()));
}

Array to_array(const ito::Tensor& t) {
    std::vector<py::ssize_t> shape(t.dims().begin(), t.dims().end());
    Array out(shape);
    std::copy(t.ptr(), t.ptr() + t.size(), out.mutable_data());
    return out;
}

ito::TrainConfig config_from(const py::dict& overrides) {
    ito::TrainConfig cfg;
    for (const auto& [k, v] : overrides) ito::apply_setting(cfg, py::str(k), py::str(v));
    cfg.validate();
    return cfg;
}

py::object json_loads(const std::string& text) { return py::module_::import("json").attr("loads")(text); }

py::dict dataset_dict(const ito::Dataset& d) {
    Array images(std::vector<py::ssize_t>{static_cast<py::ssize_t>(d.size()), ito::kChannels, ito::kImageSize, ito::kImageSize});
    std::copy(d.images.begin(), d.images.end(), images.mutable_data());
    py::array_t<std::int32_t> ids(std::vector<py::ssize_t>{static_cast<py::ssize_t>(d.size()), ito::kTextLen});
    std::vector<std::size_t> labels;
    for (std::size_t n = 0; n < d.size(); ++n) {
        const auto clauses = ito::scene_clauses(d.scenes[n]);
        const auto tv = ito::tokenize_clauses(clauses, (1u << clauses.size()) - 1);
        std::copy(tv.ids.begin(), tv.ids.end(), ids.mutable_data() + n * ito::kTextLen);
        labels.push_back(d.scenes[n].label);
    }
    py::dict out;
    out["seed"] = d.seed;
    out["images"] = images;
    out["token_ids"] = ids;
    out["labels"] = labels;
    return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Image-text training laboratory: data, training, evaluation and verification";

    py::register_exception<ito::ConfigError>(m, "ConfigError", PyExc_ValueError);
    py::register_exception<ito::ContractError>(m, "ContractError", PyExc_ValueError);
    py::register_exception<ito::UsageError>(m, "UsageError", PyExc_ValueError);
    py::register_exception<ito::DataError>(m, "DataError", PyExc_ValueError);
    py::register_exception<ito::NumericError>(m, "NumericError", PyExc_ArithmeticError);
    py::register_exception<ito::IoError>(m, "IoError", PyExc_OSError);

    m.def("config_keys", &ito::config_keys);
    m.def(
        "format_config", [](const py::dict& overrides) { return ito::format_config(config_from(overrides)); },
        py::arg("overrides") = py::dict(), "Full key=value config text with the given overrides applied.");
    m.def("lr_at", &ito::lr_at, py::arg("step"), py::arg("base_lr"), py::arg("warmup"), py::arg("total"));

    m.def(
        "generate_dataset", [](std::uint64_t seed, std::size_t n) { return dataset_dict(ito::generate_dataset(seed, n)); },
        py::arg("seed"), py::arg("n"), "Images [N, 3, 32, 32], full-caption token ids [N, 16] and labels.");
    m.def("vocabulary", [] { return ito::vocabulary().words(); });
    m.def("class_prompt", &ito::class_prompt);

    m.def(
        "train",
        [](const py::dict& overrides, const std::filesystem::path& out_dir) {
            const ito::TrainConfig cfg = config_from(overrides);
            ito::RunOutcome o;
            {
                py::gil_scoped_release release;
                o = ito::run_experiment(cfg, out_dir);
            }
            py::dict r;
            r["report"] = json_loads(ito::to_json(o.report));
            py::list evals;
            for (const auto& e : o.evals) evals.append(py::dict(py::arg("epoch") = e.epoch, py::arg("step") = e.step,
                                                                 py::arg("zero_shot_acc") = e.zero_shot_acc));
            r["evals"] = evals;
            r["fusion_forward_calls"] = o.fusion_forward_calls;
            return r;
        },
        py::arg("overrides") = py::dict(), py::arg("out_dir") = std::filesystem::path(),
        "Train with config overrides, evaluate the exported dual encoder, and return the report.");

    m.def("read_metrics", [](const std::filesystem::path& p) {
        py::list out;
        for (const auto& r : ito::read_metrics(p)) out.append(json_loads(ito::to_json_line(r)));
        return out;
    });

    m.def(
        "gradcheck",
        [] {
            const auto r = ito::run_gradcheck_suite();
            py::dict cases;
            for (const auto& e : r.entries) cases[py::str(e.name)] = e.report.max_rel_error;
            py::dict out;
            out["max_rel_error"] = r.max_rel_error;
            out["seconds"] = r.seconds;
            out["cases"] = cases;
            return out;
        },
        "Finite-difference check of every op, loss and the full objective.");

    m.def(
        "bench",
        [](std::size_t steps, const py::dict& overrides) {
            const ito::TrainConfig cfg = config_from(overrides);
            py::gil_scoped_release release;
            const auto r = ito::overhead_benchmark(cfg, steps);
            py::gil_scoped_acquire acquire;
            py::dict out;
            out["clip_ms"] = r.clip_ms;
            out["ito_ms"] = r.ito_ms;
            out["sub2_ms"] = r.sub2_ms;
            out["ito_ratio"] = r.ito_ratio();
            out["sub2_ratio"] = r.sub2_ratio();
            return out;
        },
        py::arg("steps") = 100, py::arg("overrides") = py::dict());

    py::class_<ito::DualEncoder>(m, "DualEncoder")
        .def_static("load", &ito::DualEncoder::load, py::arg("path"))
        .def("embed_images", [](const ito::DualEncoder& e, const Array& images) { return to_array(e.embed_images(to_tensor(images))); })
        .def("embed_texts",
             [](const ito::DualEncoder& e, const py::array_t<std::int32_t, py::array::c_style | py::array::forcecast>& ids) {
                 if (ids.ndim() != 2) throw ito::ConfigError("token ids must be [n, length]");
                 return to_array(e.embed_texts({ids.data(), static_cast<std::size_t>(ids.size())},
                                               static_cast<std::size_t>(ids.shape(0))));
             })
        .def("param_names", &ito::DualEncoder::param_names)
        .def("fusion_param_count", &ito::DualEncoder::fusion_param_count)
        .def(
            "evaluate",
            [](const ito::DualEncoder& e, std::uint64_t data_seed, std::size_t n, std::uint64_t seed) {
                return json_loads(ito::to_json(ito::evaluate(e, ito::generate_dataset(data_seed, n), seed)));
            },
            py::arg("data_seed"), py::arg("n"), py::arg("seed") = 0);

    m.def("read_checkpoint", [](const std::filesystem::path& p) {
        py::dict out;
        for (const auto& e : ito::read_checkpoint(p)) out[py::str(e.name)] = to_array(e.value);
        return out;
    });

    m.def("retrieval_recall", [](const Array& y, const Array& z) {
        const auto r = ito::retrieval_recall(to_tensor(y), to_tensor(z));
        py::dict out;
        out["image_to_text"] = std::vector<double>(r.image_to_text.begin(), r.image_to_text.end());
        out["text_to_image"] = std::vector<double>(r.text_to_image.begin(), r.text_to_image.end());
        return out;
    });
    m.def(
        "geometry",
        [](const Array& y, const Array& z, std::uint64_t seed) {
            const auto g = ito::geometry(to_tensor(y), to_tensor(z), seed);
            py::dict out;
            out["centroid_gap"] = g.centroid_gap;
            out["modality_probe_acc"] = g.modality_probe_acc;
            out["knn_mix"] = g.knn_mix;
            return out;
        },
        py::arg("y"), py::arg("z"), py::arg("seed") = 0);
}
