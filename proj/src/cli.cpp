#include "retfuse/cli.hpp"

#include <spdlog/spdlog.h>

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <iostream>

#include "retfuse/error.hpp"
#include "retfuse/evaluation.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace retfuse {

namespace {

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + path.string());
    out << text;
    if (!out) throw Error("failed writing " + path.string());
}

std::string read_text(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("missing file: " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::string timestamp() {
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y%m%dT%H%M%SZ", &tm);
    return buf;
}

struct LoadedData {
    std::vector<PatientRecord> records;
    std::size_t excluded = 0;
};

LoadedData load_records(const RunConfig& cfg, const fs::path& run_dir) {
    LoadedData data;
    if (cfg.synthetic) {
        data.records = generate_synthetic(*cfg.synthetic, run_dir / "dataset");
    } else {
        data.records = load_manifest(*cfg.manifest);
    }
    if (cfg.exclusions) {
        auto outcome = apply_exclusions(data.records, *cfg.exclusions);
        data.records = std::move(outcome.kept);
        data.excluded = outcome.removed;
    }
    return data;
}

ExperimentConfig experiment_config(const RunConfig& cfg) {
    ExperimentConfig e;
    e.stacking.backbones = cfg.backbones;
    e.stacking.backbone_training = cfg.backbone_training;
    e.stacking.head_training = cfg.head_training;
    e.stacking.run_seed = cfg.seed;
    e.stacking.augment = cfg.augment;
    e.stacking.threads = cfg.threads;
    e.image_side = cfg.image_side;
    return e;
}

json seeds_json(const RunConfig& cfg) {
    json s;
    s["run_seed"] = cfg.seed;
    s["split_seed"] = cfg.split_seed;
    if (cfg.synthetic) s["synthetic_seed"] = cfg.synthetic->seed;
    json bases = json::array();
    for (std::size_t i = 0; i < cfg.backbones.size(); ++i) bases.push_back(base_seed(cfg.seed, i));
    s["base_seeds"] = bases;
    s["stacker_seed"] = stacker_seed(cfg.seed, cfg.backbones.size());
    return s;
}

void write_outputs(const fs::path& run_dir, const AblationRun& run) {
    fs::create_directories(run_dir / "traces");
    for (const auto& [name, trace] : run.traces) write_trace_jsonl(run_dir / "traces" / (name + ".jsonl"), trace);
    write_text(run_dir / "results.csv", results_csv(run.result));
    run_report(run_dir);
}

void write_run_marker(const fs::path& run_dir, const std::string& command, const RunConfig& cfg, const json& extra) {
    json marker = {{"schema_version", kRunSchemaVersion}, {"command", command}, {"status", "complete"}, {"seeds", seeds_json(cfg)}};
    marker.update(extra);
    write_text(run_dir / "run.json", marker.dump(2) + "\n");
}

template <typename F>
int guarded(F&& f) {
    try {
        f();
        return 0;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}

}  // namespace

RunConfig resolve_config(const CommandOptions& opts) {
    if (opts.config.empty()) throw Error("no --config given");
    RunConfig cfg = load_run_config(opts.config);
    if (opts.seed) {
        cfg.seed = *opts.seed;
        if (cfg.synthetic) cfg.synthetic->seed = *opts.seed;
    }
    if (opts.mode) cfg.mode = *opts.mode;
    validate(cfg);
    return cfg;
}

fs::path prepare_run_dir(const RunConfig& cfg, const std::optional<fs::path>& out, const std::string& command) {
    fs::path dir;
    if (out) {
        dir = *out;
        if (fs::exists(dir) && !(fs::is_directory(dir) && fs::is_empty(dir)))
            throw Error("output directory " + dir.string() + " already exists and is not empty; choose a new directory");
    } else {
        fs::path root = "runs";
        if (cfg.output_root) root = *cfg.output_root;
        if (const char* env = std::getenv(kOutputRootEnv); env && *env) root = env;
        const std::string stem = command + "-" + timestamp();
        dir = root / stem;
        for (int k = 1; fs::exists(dir); ++k) dir = root / (stem + "-" + std::to_string(k));
    }
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw Error("cannot create output directory " + dir.string() + ": " + ec.message());
    return dir;
}

fs::path run_synth(const CommandOptions& opts) {
    if (opts.config.empty()) throw Error("no --config given");
    RunConfig cfg = load_run_config(opts.config);
    if (!cfg.synthetic) throw Error("config has no dataset.synthetic section");
    if (opts.seed) cfg.synthetic->seed = *opts.seed;
    validate(*cfg.synthetic);
    const fs::path dir = prepare_run_dir(cfg, opts.out, "synth");
    const auto records = generate_synthetic(*cfg.synthetic, dir);
    std::size_t positives = 0;
    for (const auto& r : records) positives += r.diabetes_label == 1;
    write_text(dir / "config.resolved", to_json(cfg).dump(2) + "\n");
    std::cout << "wrote " << records.size() << " patients to " << (dir / "manifest.csv").string() << "\n"
              << "  diabetic (1): " << positives << "\n  non-diabetic (0): " << records.size() - positives << "\n";
    return dir;
}

fs::path run_train(const CommandOptions& opts) {
    const RunConfig cfg = resolve_config(opts);
    if (cfg.mode == "ablation") throw Error("train needs a single metadata mode; use ablate for the four-condition run");
    const fs::path dir = prepare_run_dir(cfg, opts.out, "train");
    write_text(dir / "config.resolved", to_json(cfg).dump(2) + "\n");

    const auto data = load_records(cfg, dir);
    const auto splits = make_splits(data.records, cfg.split_ratios, cfg.split_seed);
    SplitAudit audit;
    const auto run = run_conditions(splits, experiment_config(cfg), {parse_metadata_mode(cfg.mode)}, &audit);
    save_bundle(run.bundles.front(), dir / "bundle");
    write_outputs(dir, run);

    const auto& m = *run.result.conditions.front().stage2->metrics;
    json metrics = {{"accuracy", m.accuracy}, {"tp", m.tp}, {"fp", m.fp}, {"tn", m.tn}, {"fn", m.fn}};
    metrics["precision"] = m.precision ? json(*m.precision) : json(nullptr);
    metrics["recall"] = m.recall ? json(*m.recall) : json(nullptr);
    write_text(dir / "metrics.json", metrics.dump(2) + "\n");
    write_run_marker(dir, "train", cfg, {{"excluded", data.excluded}, {"patients", data.records.size()}});
    std::cout << "test accuracy " << format4(m.accuracy) << "; run directory " << dir.string() << "\n";
    return dir;
}

fs::path run_ablate(const CommandOptions& opts) {
    const RunConfig cfg = resolve_config(opts);
    if (cfg.mode != "ablation") throw Error("ablate needs mode \"ablation\" (got \"" + cfg.mode + "\")");
    const fs::path dir = prepare_run_dir(cfg, opts.out, "ablate");
    write_text(dir / "config.resolved", to_json(cfg).dump(2) + "\n");

    const auto data = load_records(cfg, dir);
    const auto splits = make_splits(data.records, cfg.split_ratios, cfg.split_seed);
    SplitAudit audit;
    const auto run = run_ablation(splits, experiment_config(cfg), &audit);
    for (const auto& bundle : run.bundles) save_bundle(bundle, dir / "bundle" / mode_name(bundle.mode));
    write_outputs(dir, run);
    write_run_marker(dir, "ablate", cfg, {{"excluded", data.excluded}, {"patients", data.records.size()}});
    std::cout << read_text(dir / "table2.csv") << "run directory " << dir.string() << "\n";
    return dir;
}

void run_report(const fs::path& run_dir, const std::optional<fs::path>& out_dir) {
    const fs::path results = run_dir / "results.csv";
    if (!fs::exists(results)) throw Error("missing results file: " + results.string());
    const AblationResult result = parse_results_csv(results);
    const fs::path out = out_dir.value_or(run_dir);
    std::error_code ec;
    fs::create_directories(out, ec);
    if (ec) throw Error("cannot create " + out.string() + ": " + ec.message());

    const auto tables = render_tables(result);
    write_text(out / "table1.csv", tables.table1_csv);
    write_text(out / "table2.csv", tables.table2_csv);
    write_text(out / "report.md", tables.markdown);

    TraceMap traces;
    if (fs::is_directory(run_dir / "traces")) {
        for (const auto& entry : fs::directory_iterator(run_dir / "traces"))
            if (entry.path().extension() == ".jsonl") traces[entry.path().stem().string()] = read_trace_jsonl(entry.path());
    }
    emit_curves(traces, result, out / "curves");
}

int cmd_synth(const CommandOptions& opts) { return guarded([&] { run_synth(opts); }); }
int cmd_train(const CommandOptions& opts) { return guarded([&] { run_train(opts); }); }
int cmd_ablate(const CommandOptions& opts) { return guarded([&] { run_ablate(opts); }); }
int cmd_report(const fs::path& run_dir, const std::optional<fs::path>& out_dir) {
    return guarded([&] { run_report(run_dir, out_dir); });
}

}  // namespace retfuse
