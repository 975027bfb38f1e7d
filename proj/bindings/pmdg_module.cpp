#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cstring>

#include "pmdg/algorithms.hpp"
#include "pmdg/harness.hpp"
#include "pmdg/trainer.hpp"
#include "pmdg/transforms.hpp"

namespace py = pybind11;
using namespace pmdg;
using nlohmann::json;

namespace {

Tensor tensor_from_array(const py::array_t<double, py::array::c_style | py::array::forcecast>& arr) {
    std::vector<int> shape;
    for (py::ssize_t i = 0; i < arr.ndim(); ++i) shape.push_back(static_cast<int>(arr.shape(i)));
    std::vector<double> data(arr.data(), arr.data() + arr.size());
    return Tensor(std::move(shape), std::move(data));
}

py::array_t<double> array_from_tensor(const Tensor& t) {
    std::vector<py::ssize_t> shape;
    for (int d : t.shape()) shape.push_back(d);
    py::array_t<double> arr(shape);
    std::copy(t.data(), t.data() + t.size(), arr.mutable_data());
    return arr;
}

json json_from_py(const py::object& obj) {
    py::module_ pyjson = py::module_::import("json");
    std::string dumped = py::cast<std::string>(pyjson.attr("dumps")(obj));
    return json::parse(dumped);
}

py::object py_from_json(const json& j) {
    py::module_ pyjson = py::module_::import("json");
    return pyjson.attr("loads")(j.dump());
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "PMDG: pseudo multi-source domain generalization (C++ core)";

    // ---- penalties -------------------------------------------------------
    m.def(
        "coral_penalty",
        [](py::array_t<double> a, py::array_t<double> b) {
            return coral_penalty(tensor_from_array(a), tensor_from_array(b));
        },
        py::arg("features_a"), py::arg("features_b"),
        "Mean + covariance alignment penalty between two feature matrices.");
    m.def(
        "mmd_penalty",
        [](py::array_t<double> a, py::array_t<double> b, std::vector<double> gammas) {
            return mmd_penalty(tensor_from_array(a), tensor_from_array(b), gammas);
        },
        py::arg("features_a"), py::arg("features_b"),
        py::arg("bandwidth_gammas") = std::vector<double>{0.001, 0.01, 0.1, 1.0, 10.0, 100.0, 1000.0});
    m.def(
        "irm_penalty",
        [](py::array_t<double> logits, py::array_t<double> targets, bool split_half) {
            return irm_penalty(tensor_from_array(logits), tensor_from_array(targets), split_half);
        },
        py::arg("logits"), py::arg("targets"), py::arg("split_half") = false);
    m.def("vrex_penalty", [](std::vector<double> risks) { return vrex_penalty(risks); },
          py::arg("per_domain_risks"));
    m.def(
        "sd_penalty",
        [](py::array_t<double> logits) { return sd_penalty(tensor_from_array(logits)); },
        py::arg("logits"));
    m.def("groupdro_reweight", &groupdro_reweight, py::arg("q"), py::arg("losses"), py::arg("eta"));
    m.def(
        "soft_cross_entropy",
        [](py::array_t<double> logits, py::array_t<double> targets) {
            return soft_cross_entropy(tensor_from_array(logits), tensor_from_array(targets));
        },
        py::arg("logits"), py::arg("targets"));

    // ---- correlation / aggregation ----------------------------------------
    m.def("pearson_correlation", &pearson_correlation, py::arg("x"), py::arg("y"));
    m.def("spearman_correlation", &spearman_correlation, py::arg("x"), py::arg("y"));
    m.def(
        "aggregate",
        [](std::vector<double> accuracies) {
            AggregateCell cell = aggregate(accuracies);
            py::dict d;
            d["mean_pct"] = cell.mean_pct;
            d["stderr_pct"] = cell.stderr_pct;
            d["trials"] = cell.trials;
            d["single_trial"] = cell.single_trial;
            d["formatted"] = cell.formatted;
            return d;
        },
        py::arg("accuracies"), "Mean ± standard error of raw accuracies, percent-formatted.");

    // ---- transforms --------------------------------------------------------
    m.def("registered_transforms", [] { return registered_transform_names(); });
    m.def(
        "apply_transform",
        [](const std::string& name, py::array_t<double> images_raw, std::uint64_t seed) {
            Tensor raw = tensor_from_array(images_raw);
            if (raw.ndim() != 4 || raw.dim(1) != 3) {
                throw std::invalid_argument("images must be [b,3,h,w] in [0,1]");
            }
            MiniBatch mb;
            mb.num_classes = 2;
            mb.labels.assign(static_cast<std::size_t>(raw.dim(0)), 0);
            mb.images = normalize_images(raw, mb.norm);
            TransformSet set = make_transform_set({name}, seed);
            MiniBatch out = apply_set(set, mb).front();
            return array_from_tensor(out.denormalized_images());
        },
        py::arg("name"), py::arg("images_raw"), py::arg("seed") = 0,
        "Runs one registered pseudo-domain transform over a raw [b,3,h,w] batch.");

    // ---- datasets ---------------------------------------------------------
    auto dataset_to_dict = [](const DomainDataset& ds) {
        py::dict d;
        py::ssize_t n = static_cast<py::ssize_t>(ds.size());
        int h = n > 0 ? ds.examples.front().image.dim(1) : 0;
        int w = n > 0 ? ds.examples.front().image.dim(2) : 0;
        py::array_t<double> images({n, static_cast<py::ssize_t>(3), static_cast<py::ssize_t>(h),
                                    static_cast<py::ssize_t>(w)});
        std::vector<int> labels(static_cast<std::size_t>(n));
        py::list domains_of;
        for (py::ssize_t i = 0; i < n; ++i) {
            const auto& ex = ds.examples[static_cast<std::size_t>(i)];
            std::copy(ex.image.data(), ex.image.data() + ex.image.size(),
                      images.mutable_data() + i * ex.image.size());
            labels[static_cast<std::size_t>(i)] = ex.label;
            domains_of.append(ex.domain);
        }
        py::array_t<int> labels_arr(n);
        std::memcpy(labels_arr.mutable_data(), labels.data(), labels.size() * sizeof(int));
        d["name"] = ds.name;
        d["images"] = images;
        d["labels"] = labels_arr;
        d["example_domains"] = domains_of;
        d["domains"] = ds.domains;
        d["class_names"] = ds.class_names;
        return d;
    };
    m.def(
        "generate_synthetic",
        [dataset_to_dict](const py::dict& spec) {
            json j = json_from_py(spec);
            j["type"] = "synthetic";
            return dataset_to_dict(DatasetConfig::from_json(j).load());
        },
        py::arg("spec"), "Renders the synthetic shape/color dataset described by a spec dict.");
    m.def(
        "load_image_folder",
        [dataset_to_dict](const std::string& root, int image_size) {
            return dataset_to_dict(load_image_folder(root, image_size));
        },
        py::arg("root"), py::arg("image_size") = 64);

    // ---- experiments -------------------------------------------------------
    m.def(
        "run_experiment",
        [](const py::dict& config, const std::string& log_dir) {
            ExperimentConfig cfg = ExperimentConfig::from_json(json_from_py(config));
            auto records = run_experiment(cfg, log_dir);
            py::list out;
            for (const auto& r : records) out.append(py_from_json(r.to_json()));
            return out;
        },
        py::arg("config"), py::arg("log_dir") = std::string(),
        "Runs one experiment config (dict with the same schema as the CLI) and returns records.");

    m.attr("__version__") = "1.0.0";
}
