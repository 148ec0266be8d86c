#include "retfuse/config.hpp"

#include <cmath>
#include <fstream>
#include <set>

#include "retfuse/backbones.hpp"
#include "retfuse/error.hpp"
#include "retfuse/preprocess.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace retfuse {

namespace {

void reject_unknown(const json& j, const std::string& section, const std::set<std::string>& known) {
    if (!j.is_object()) throw Error("config: " + (section.empty() ? std::string("top level") : section) + " must be an object");
    for (const auto& [key, value] : j.items())
        if (!known.count(key)) throw Error("config: unknown key " + (section.empty() ? key : section + "." + key));
}

template <typename T>
T get(const json& j, const std::string& section, const std::string& key) {
    const std::string name = section.empty() ? key : section + "." + key;
    if (!j.contains(key)) throw Error("config: missing required field " + name);
    try {
        return j.at(key).get<T>();
    } catch (const json::exception&) {
        throw Error("config: field " + name + " has the wrong type");
    }
}

template <typename T>
T get_or(const json& j, const std::string& section, const std::string& key, T fallback) {
    return j.contains(key) ? get<T>(j, section, key) : fallback;
}

AgeRange parse_range(const json& j, const std::string& name) {
    if (!j.is_array() || j.size() != 2) throw Error("config: field " + name + " must be a [low, high] pair");
    try {
        return {j[0].get<double>(), j[1].get<double>()};
    } catch (const json::exception&) {
        throw Error("config: field " + name + " must hold numbers");
    }
}

fs::path resolve(const fs::path& p, const fs::path& base) {
    if (p.is_absolute() || base.empty()) return p.lexically_normal();
    return (base / p).lexically_normal();
}

}  // namespace

TrainConfig default_head_training() {
    TrainConfig t;
    t.initial_lr = 0.01;
    t.max_epochs = 100;
    t.batch_size = 16;
    return t;
}

SyntheticConfig parse_synthetic_config(const json& j) {
    const std::string s = "dataset.synthetic";
    reject_unknown(j, s,
                   {"n_patients", "image_side", "noise_sigma", "signal_intensity", "background_level", "square_side", "age_class1_range",
                    "age_class0_range", "class_balance", "seed"});
    SyntheticConfig c;
    c.seed = get<std::uint64_t>(j, s, "seed");
    c.n_patients = get_or(j, s, "n_patients", c.n_patients);
    c.image_side = get_or(j, s, "image_side", c.image_side);
    c.noise_sigma = get_or(j, s, "noise_sigma", c.noise_sigma);
    c.signal_intensity = get_or(j, s, "signal_intensity", c.signal_intensity);
    c.background_level = get_or(j, s, "background_level", c.background_level);
    c.square_side = get_or(j, s, "square_side", c.square_side);
    c.class_balance = get_or(j, s, "class_balance", c.class_balance);
    if (j.contains("age_class1_range")) c.age_class1_range = parse_range(j["age_class1_range"], s + ".age_class1_range");
    if (j.contains("age_class0_range")) c.age_class0_range = parse_range(j["age_class0_range"], s + ".age_class0_range");
    return c;
}

json to_json(const SyntheticConfig& c) {
    return {{"n_patients", c.n_patients},
            {"image_side", c.image_side},
            {"noise_sigma", c.noise_sigma},
            {"signal_intensity", c.signal_intensity},
            {"background_level", c.background_level},
            {"square_side", c.square_side},
            {"age_class1_range", {c.age_class1_range.lo, c.age_class1_range.hi}},
            {"age_class0_range", {c.age_class0_range.lo, c.age_class0_range.hi}},
            {"class_balance", c.class_balance},
            {"seed", c.seed}};
}

TrainConfig parse_train_config(const json& j, const TrainConfig& d, const std::string& s) {
    reject_unknown(j, s,
                   {"initial_lr", "plateau_factor", "plateau_patience", "plateau_threshold", "min_lr", "early_stop_patience", "max_epochs",
                    "batch_size", "weight_decay"});
    TrainConfig t = d;
    t.initial_lr = get_or(j, s, "initial_lr", t.initial_lr);
    t.plateau_factor = get_or(j, s, "plateau_factor", t.plateau_factor);
    t.plateau_patience = get_or(j, s, "plateau_patience", t.plateau_patience);
    t.plateau_threshold = get_or(j, s, "plateau_threshold", t.plateau_threshold);
    t.min_lr = get_or(j, s, "min_lr", t.min_lr);
    t.early_stop_patience = get_or(j, s, "early_stop_patience", t.early_stop_patience);
    t.max_epochs = get_or(j, s, "max_epochs", t.max_epochs);
    t.batch_size = get_or(j, s, "batch_size", t.batch_size);
    t.weight_decay = get_or(j, s, "weight_decay", t.weight_decay);
    return t;
}

TrainConfig parse_train_config(const json& j, const TrainConfig& defaults) { return parse_train_config(j, defaults, "training"); }

json to_json(const TrainConfig& t) {
    return {{"initial_lr", t.initial_lr},
            {"plateau_factor", t.plateau_factor},
            {"plateau_patience", t.plateau_patience},
            {"plateau_threshold", t.plateau_threshold},
            {"min_lr", t.min_lr},
            {"early_stop_patience", t.early_stop_patience},
            {"max_epochs", t.max_epochs},
            {"batch_size", t.batch_size},
            {"weight_decay", t.weight_decay}};
}

RunConfig parse_run_config(const json& j, const fs::path& base_dir) {
    reject_unknown(j, "",
                   {"schema_version", "dataset", "exclusions", "splits", "backbones", "mode", "image_side", "augment", "seed", "threads",
                    "backbone_training", "head_training", "output_root"});
    if (j.contains("schema_version") && get<int>(j, "", "schema_version") != kRunSchemaVersion)
        throw Error("config: unsupported schema_version (expected " + std::to_string(kRunSchemaVersion) + ")");

    RunConfig c;
    if (!j.contains("dataset")) throw Error("config: missing required field dataset");
    const json& ds = j["dataset"];
    reject_unknown(ds, "dataset", {"synthetic", "manifest"});
    if (ds.contains("synthetic") == ds.contains("manifest"))
        throw Error("config: dataset needs exactly one of dataset.synthetic or dataset.manifest");
    if (ds.contains("synthetic")) c.synthetic = parse_synthetic_config(ds["synthetic"]);
    if (ds.contains("manifest")) c.manifest = resolve(get<std::string>(ds, "dataset", "manifest"), base_dir);
    if (j.contains("exclusions")) c.exclusions = resolve(get<std::string>(j, "", "exclusions"), base_dir);

    if (j.contains("splits")) {
        const json& sp = j["splits"];
        reject_unknown(sp, "splits", {"train1", "train2", "test", "seed"});
        c.split_ratios.train1 = get_or(sp, "splits", "train1", c.split_ratios.train1);
        c.split_ratios.train2 = get_or(sp, "splits", "train2", c.split_ratios.train2);
        c.split_ratios.test = get_or(sp, "splits", "test", c.split_ratios.test);
        c.split_seed = get_or(sp, "splits", "seed", c.split_seed);
    }
    c.backbones = get<std::vector<std::string>>(j, "", "backbones");
    c.mode = get_or<std::string>(j, "", "mode", c.mode);
    c.image_side = get_or(j, "", "image_side", c.image_side);
    c.augment = get_or(j, "", "augment", c.augment);
    c.seed = get_or(j, "", "seed", c.seed);
    c.threads = get_or(j, "", "threads", c.threads);
    if (j.contains("backbone_training")) c.backbone_training = parse_train_config(j["backbone_training"], c.backbone_training, "backbone_training");
    c.head_training = default_head_training();
    if (j.contains("head_training")) c.head_training = parse_train_config(j["head_training"], c.head_training, "head_training");
    if (j.contains("output_root")) c.output_root = fs::path(get<std::string>(j, "", "output_root"));
    return c;
}

RunConfig load_run_config(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("config file not found: " + path.string());
    json j;
    try {
        j = json::parse(in);
    } catch (const json::parse_error& e) {
        throw Error(path.string() + ": invalid JSON: " + e.what());
    }
    return parse_run_config(j, fs::absolute(path).parent_path());
}

json to_json(const RunConfig& c) {
    json j;
    j["schema_version"] = kRunSchemaVersion;
    j["dataset"] = json::object();
    if (c.synthetic) j["dataset"]["synthetic"] = to_json(*c.synthetic);
    if (c.manifest) j["dataset"]["manifest"] = c.manifest->string();
    if (c.exclusions) j["exclusions"] = c.exclusions->string();
    j["splits"] = {{"train1", c.split_ratios.train1}, {"train2", c.split_ratios.train2}, {"test", c.split_ratios.test}, {"seed", c.split_seed}};
    j["backbones"] = c.backbones;
    j["mode"] = c.mode;
    j["image_side"] = c.image_side;
    j["augment"] = c.augment;
    j["seed"] = c.seed;
    j["threads"] = c.threads;
    j["backbone_training"] = to_json(c.backbone_training);
    j["head_training"] = to_json(c.head_training);
    if (c.output_root) j["output_root"] = c.output_root->string();
    return j;
}

bool RunConfig::operator==(const RunConfig& o) const { return to_json(*this) == to_json(o); }

void validate(const RunConfig& c) {
    if (c.synthetic.has_value() == c.manifest.has_value()) throw Error("config: exactly one dataset source is required");
    if (c.synthetic) validate(*c.synthetic);
    if (c.backbones.empty()) throw Error("config: backbone list is empty");
    for (const auto& b : c.backbones) {
        if (!is_registered_backbone(b)) {
            std::string known;
            for (const auto& name : backbone_registry()) known += (known.empty() ? "" : ", ") + name;
            throw Error("config: unknown backbone '" + b + "' (registered: " + known + ")");
        }
        if (c.image_side < min_input_side(b))
            throw Error("config: image_side " + std::to_string(c.image_side) + " is below the minimum " + std::to_string(min_input_side(b)) +
                        " for backbone " + b);
    }
    if (c.mode != "ablation") parse_metadata_mode(c.mode);
    if (c.threads < 1) throw Error("config: threads must be >= 1");
    const double sum = c.split_ratios.train1 + c.split_ratios.train2 + c.split_ratios.test;
    if (std::abs(sum - 1.0) > 1e-9) throw Error("config: split ratios must sum to 1");
    validate(c.backbone_training);
    validate(c.head_training);
}

}  // namespace retfuse
