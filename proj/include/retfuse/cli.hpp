#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include "retfuse/config.hpp"

namespace retfuse {

struct CommandOptions {
    std::filesystem::path config;
    std::optional<std::uint64_t> seed;
    std::optional<std::filesystem::path> out;
    std::optional<std::string> mode;
};

/// Applies --seed/--mode overrides. --seed sets the run seed and, for a
/// synthetic source, the generator seed.
RunConfig resolve_config(const CommandOptions& opts);

/// Picks the run directory: --out if given (must be absent or empty), else a
/// fresh timestamped directory under the output root ($RETFUSE_OUTPUT_ROOT,
/// then the config's output_root, then ./runs).
std::filesystem::path prepare_run_dir(const RunConfig& cfg, const std::optional<std::filesystem::path>& out, const std::string& command);

/// Throwing forms; each returns the directory it wrote.
std::filesystem::path run_synth(const CommandOptions& opts);
std::filesystem::path run_train(const CommandOptions& opts);
std::filesystem::path run_ablate(const CommandOptions& opts);
/// Rebuilds tables, report and curves from results.csv (and traces/ when
/// present) in `run_dir`, writing into `out_dir` (defaults to `run_dir`).
void run_report(const std::filesystem::path& run_dir, const std::optional<std::filesystem::path>& out_dir = std::nullopt);

/// Exit-code forms: 0 on success, 1 with a message on stderr otherwise.
int cmd_synth(const CommandOptions& opts);
int cmd_train(const CommandOptions& opts);
int cmd_ablate(const CommandOptions& opts);
int cmd_report(const std::filesystem::path& run_dir, const std::optional<std::filesystem::path>& out_dir = std::nullopt);

}  // namespace retfuse
