#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "retfuse/backbones.hpp"
#include "retfuse/cli.hpp"
#include "retfuse/dataset.hpp"
#include "retfuse/error.hpp"
#include "retfuse/evaluation.hpp"
#include "retfuse/preprocess.hpp"
#include "retfuse/stacking.hpp"
#include "retfuse/training.hpp"

namespace py = pybind11;
using namespace retfuse;

namespace {

py::dict record_dict(const PatientRecord& r) {
    py::dict d;
    d["patient_id"] = r.patient_id;
    d["left_image"] = r.left_image.string();
    d["right_image"] = r.right_image.string();
    d["age_years"] = r.age_years;
    d["gender"] = gender_name(r.gender);
    d["diabetes_label"] = r.diabetes_label;
    return d;
}

EyePairTensor pair_from_array(const py::array_t<float, py::array::c_style | py::array::forcecast>& a) {
    if (a.ndim() != 3 || a.shape(0) != 6) throw Error("expected an array of shape (6, H, W)");
    EyePairTensor t;
    t.height = static_cast<int>(a.shape(1));
    t.width = static_cast<int>(a.shape(2));
    t.data.assign(a.data(), a.data() + a.size());
    return t;
}

py::array_t<float> pair_to_array(const EyePairTensor& t) {
    py::array_t<float> out({6, t.height, t.width});
    std::copy(t.data.begin(), t.data.end(), out.mutable_data());
    return out;
}

CommandOptions options(const std::string& config, std::optional<std::uint64_t> seed, std::optional<std::string> out,
                       std::optional<std::string> mode) {
    CommandOptions o{config, seed, std::nullopt, mode};
    if (out) o.out = *out;
    return o;
}

}  // namespace

PYBIND11_MODULE(_retfuse, m) {
    m.doc() = "Two-stage stacked retinal image classifier with metadata fusion";
    py::register_exception<Error>(m, "RetfuseError", PyExc_RuntimeError);

    m.def("backbone_registry", &backbone_registry);

    m.def(
        "generate_synthetic",
        [](const std::string& out_dir, int n_patients, int image_side, std::uint64_t seed, double signal_intensity) {
            SyntheticConfig cfg;
            cfg.n_patients = n_patients;
            cfg.image_side = image_side;
            cfg.seed = seed;
            cfg.signal_intensity = signal_intensity;
            py::list out;
            for (const auto& r : generate_synthetic(cfg, out_dir)) out.append(record_dict(r));
            return out;
        },
        py::arg("out_dir"), py::arg("n_patients") = 1000, py::arg("image_side") = 32, py::arg("seed") = 0,
        py::arg("signal_intensity") = SyntheticConfig{}.signal_intensity);

    m.def("load_manifest", [](const std::string& path) {
        py::list out;
        for (const auto& r : load_manifest(path)) out.append(record_dict(r));
        return out;
    });

    m.def("minmax_normalize", [](double x, double lo, double hi) { return minmax_normalize(x, NormalizationSpec{lo, hi}); });
    m.def("expand_metadata", [](const std::string& mode, double age_n, double gender_n) -> std::optional<std::array<double, 2>> {
        const auto v = expand_metadata(parse_metadata_mode(mode), age_n, gender_n);
        if (!v) return std::nullopt;
        return v->components;
    });
    m.def("augment", [](const py::array_t<float, py::array::c_style | py::array::forcecast>& a, int op) {
        return pair_to_array(augment(pair_from_array(a), op));
    });
    m.def("inverse_augment_op", &inverse_augment_op);

    m.def("cross_entropy", [](double z0, double z1, int label) {
        const std::array<double, 2> z = {z0, z1};
        return cross_entropy(z, label);
    });

    m.def("row_average", [](const std::vector<double>& v) { return row_average(v); });
    m.def("stage_diff", &stage_diff);
    m.def("format4", &format4);
    m.def("render_tables", [](const std::string& results_csv_path) {
        const auto t = render_tables(parse_results_csv(results_csv_path));
        py::dict d;
        d["table1"] = t.table1_csv;
        d["table2"] = t.table2_csv;
        d["markdown"] = t.markdown;
        return d;
    });

    m.def(
        "predict",
        [](const std::string& bundle_dir, const std::string& left, const std::string& right, double age_years, const std::string& gender) {
            const EnsembleBundle bundle = load_bundle(bundle_dir);
            PatientRecord r;
            r.patient_id = "query";
            r.left_image = left;
            r.right_image = right;
            r.age_years = age_years;
            r.gender = parse_gender(gender);
            const Prediction p = predict(bundle, r);
            return py::make_tuple(p.predicted, p.scores);
        },
        py::arg("bundle_dir"), py::arg("left"), py::arg("right"), py::arg("age_years"), py::arg("gender"));

    m.def(
        "synth", [](const std::string& config, std::optional<std::uint64_t> seed, std::optional<std::string> out) {
            return run_synth(options(config, seed, out, std::nullopt)).string();
        },
        py::arg("config"), py::arg("seed") = py::none(), py::arg("out") = py::none());
    m.def(
        "train",
        [](const std::string& config, std::optional<std::uint64_t> seed, std::optional<std::string> out, std::optional<std::string> mode) {
            return run_train(options(config, seed, out, mode)).string();
        },
        py::arg("config"), py::arg("seed") = py::none(), py::arg("out") = py::none(), py::arg("mode") = py::none());
    m.def(
        "ablate", [](const std::string& config, std::optional<std::uint64_t> seed, std::optional<std::string> out) {
            return run_ablate(options(config, seed, out, std::nullopt)).string();
        },
        py::arg("config"), py::arg("seed") = py::none(), py::arg("out") = py::none());
    m.def(
        "report",
        [](const std::string& run_dir, std::optional<std::string> out) {
            run_report(run_dir, out ? std::optional<std::filesystem::path>(*out) : std::nullopt);
        },
        py::arg("run_dir"), py::arg("out") = py::none());
}
