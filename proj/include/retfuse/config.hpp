#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "retfuse/dataset.hpp"
#include "retfuse/training.hpp"

namespace retfuse {

inline constexpr int kRunSchemaVersion = 1;
inline constexpr const char* kOutputRootEnv = "RETFUSE_OUTPUT_ROOT";

struct RunConfig {
    std::optional<SyntheticConfig> synthetic;
    std::optional<std::filesystem::path> manifest;
    std::optional<std::filesystem::path> exclusions;
    SplitRatios split_ratios;
    std::uint64_t split_seed = 0;
    std::vector<std::string> backbones;
    std::string mode = "ablation";  // none, gender, age, both or ablation
    int image_side = 224;
    bool augment = true;
    std::uint64_t seed = 0;
    int threads = 1;
    TrainConfig backbone_training;
    TrainConfig head_training;
    std::optional<std::filesystem::path> output_root;

    bool operator==(const RunConfig&) const;
};

/// Parses a JSON run configuration. Relative dataset paths resolve against
/// `base_dir`. Unknown keys and missing required fields are errors naming
/// the key.
RunConfig parse_run_config(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
RunConfig load_run_config(const std::filesystem::path& path);

/// Fully resolved form (every default spelled out, absolute paths).
nlohmann::json to_json(const RunConfig& cfg);

/// Checks cross-field invariants: exactly one dataset source, non-empty
/// registered backbone list, valid mode and training settings.
void validate(const RunConfig& cfg);

SyntheticConfig parse_synthetic_config(const nlohmann::json& j);
nlohmann::json to_json(const SyntheticConfig& cfg);
TrainConfig parse_train_config(const nlohmann::json& j, const TrainConfig& defaults);
nlohmann::json to_json(const TrainConfig& cfg);

/// Training defaults used for fusion heads and the stacker.
TrainConfig default_head_training();

}  // namespace retfuse
