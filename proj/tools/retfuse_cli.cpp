#include <spdlog/spdlog.h>

#include <CLI11.hpp>
#include <optional>
#include <string>

#include "retfuse/cli.hpp"

int main(int argc, char** argv) {
    CLI::App app{"Stacked ensemble training and ablation for paired-eye fundus classification"};
    app.require_subcommand(1);
    bool verbose = false;
    app.add_flag("-v,--verbose", verbose, "Log progress at debug level");

    retfuse::CommandOptions opts;
    std::uint64_t seed = 0;
    std::string out, mode;
    auto add_common = [&](CLI::App* sub, bool with_mode) {
        sub->add_option("--config", opts.config, "Run configuration (JSON)")->required()->check(CLI::ExistingFile);
        sub->add_option("--seed", seed, "Override the run seed");
        sub->add_option("--out", out, "Output directory (must be new or empty)");
        if (with_mode)
            sub->add_option("--mode", mode, "Metadata mode override")->check(CLI::IsMember({"none", "gender", "age", "both", "ablation"}));
    };
    auto* synth = app.add_subcommand("synth", "Generate a synthetic dataset and manifest");
    add_common(synth, false);
    auto* train = app.add_subcommand("train", "Train one stacked ensemble for a single metadata mode");
    add_common(train, true);
    auto* ablate = app.add_subcommand("ablate", "Run the four-condition metadata ablation");
    add_common(ablate, true);
    auto* report = app.add_subcommand("report", "Re-render tables and curves from a run directory");
    std::string run_dir, report_out;
    report->add_option("run_dir", run_dir, "Run directory holding results.csv")->required();
    report->add_option("--out", report_out, "Write rendered files here instead of the run directory");

    CLI11_PARSE(app, argc, argv);
    spdlog::set_level(verbose ? spdlog::level::debug : spdlog::level::info);

    for (auto* sub : {synth, train, ablate}) {
        if (!sub->parsed()) continue;
        if (sub->count("--seed")) opts.seed = seed;
        if (!out.empty()) opts.out = out;
        if (!mode.empty()) opts.mode = mode;
    }
    if (synth->parsed()) return retfuse::cmd_synth(opts);
    if (train->parsed()) return retfuse::cmd_train(opts);
    if (ablate->parsed()) return retfuse::cmd_ablate(opts);
    return retfuse::cmd_report(run_dir, report_out.empty() ? std::nullopt : std::optional<std::filesystem::path>(report_out));
}
