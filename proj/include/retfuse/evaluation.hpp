#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "retfuse/metrics.hpp"
#include "retfuse/stacking.hpp"

namespace retfuse {

/// Accuracy plus whatever else is known about one model's test performance.
/// Results loaded from a table fixture may carry accuracy only.
struct ModelScore {
    double accuracy = 0.0;
    std::optional<double> precision;
    std::optional<double> recall;
    std::optional<MetricsReport> metrics;

    static ModelScore from(const MetricsReport& m) { return {m.accuracy, m.precision, m.recall, m}; }
};

struct ConditionResult {
    MetadataMode mode = MetadataMode::none;
    std::vector<ModelScore> stage1;  // one per backbone, in backbone order
    std::optional<ModelScore> stage2;

    double stage1_average() const;
    double diff() const;
};

struct AblationResult {
    std::vector<std::string> backbones;
    std::vector<ConditionResult> conditions;

    const ConditionResult* find(MetadataMode mode) const;
    const ConditionResult& at(MetadataMode mode) const;
};

double row_average(std::span<const double> accuracies);
double stage_diff(double stage1_average, double stage2_accuracy);

/// Table-row label in the published layout, e.g. "w/i Age & Gender".
std::string condition_label(MetadataMode mode);

/// Formats at 4 decimals, the precision of the rendered tables.
std::string format4(double value);

struct RenderedTables {
    std::string table1_csv;  // condition,<backbones...>,average
    std::string table2_csv;  // condition,training1,training2,diff
    std::string markdown;
};

/// Pure function of the result; byte-identical output for identical input.
RenderedTables render_tables(const AblationResult& result);

/// Machine-readable results at full precision (one row per model and stage).
std::string results_csv(const AblationResult& result);
AblationResult parse_results_csv(const std::filesystem::path& path);

using TraceMap = std::map<std::string, EpochTrace>;

/// Writes one `epoch,loss,accuracy,lr` file per trace and the final
/// accuracy-by-condition series `final_accuracy.csv`.
void emit_curves(const TraceMap& traces, const AblationResult& result, const std::filesystem::path& out_dir);

/// Per-condition protocol facts checked for ablation fairness.
struct FairnessRecord {
    MetadataMode mode = MetadataMode::none;
    std::vector<std::uint64_t> model_seeds;
    std::vector<std::string> train1_ids, train2_ids, test_ids;
};

struct AblationRun {
    AblationResult result;
    TraceMap traces;
    std::vector<EnsembleBundle> bundles;  // one per condition, same order as result.conditions
    std::vector<FairnessRecord> fairness;
};

struct ExperimentConfig {
    StackingConfig stacking;
    int image_side = 224;
    NormalizationSpec norm;
};

/// Runs the stacking pipeline once per listed condition on identical splits
/// and seeds. Stage-1 backbones are image-only, so one trained set is shared
/// by every condition; only fusion heads and the stacker differ.
AblationRun run_conditions(const DatasetSplits& splits, const ExperimentConfig& cfg, const std::vector<MetadataMode>& modes,
                           SplitAudit* audit = nullptr);

/// The four-condition ablation {none, gender, both, age}.
AblationRun run_ablation(const DatasetSplits& splits, const ExperimentConfig& cfg, SplitAudit* audit = nullptr);

}  // namespace retfuse
