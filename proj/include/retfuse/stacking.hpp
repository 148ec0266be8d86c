#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "retfuse/backbones.hpp"
#include "retfuse/dataset.hpp"
#include "retfuse/fusion_head.hpp"
#include "retfuse/metrics.hpp"
#include "retfuse/preprocess.hpp"
#include "retfuse/training.hpp"

namespace retfuse {

/// Preprocessed split held in memory: 6-channel pixels plus normalized metadata.
struct PreparedSplit {
    int side = 0;
    std::vector<std::string> ids;
    std::vector<int> labels;
    std::vector<NormalizedMetadata> meta;
    std::vector<float> pixels;  // size() x 6 x side x side

    std::size_t size() const { return ids.size(); }
    std::size_t sample_floats() const { return static_cast<std::size_t>(6) * side * side; }
    /// Gathers the listed samples; `ops` (optional) gives one augmentation op per sample.
    Tensor<float> batch(std::span<const std::size_t> indices, std::span<const int> ops = {}) const;
};

PreparedSplit prepare_split(const std::vector<PatientRecord>& records, int side, const NormalizationSpec& norm,
                            const MetadataBounds& bounds);

struct StackingConfig {
    std::vector<std::string> backbones;
    MetadataMode mode = MetadataMode::none;
    TrainConfig backbone_training;
    TrainConfig head_training;  // fusion heads and the stacker
    std::uint64_t run_seed = 0;
    bool augment = true;
    int threads = 1;
};

/// Patient ids observed at each protocol step of an instrumented run.
struct SplitAudit {
    std::set<std::string> stage1_batches;
    std::set<std::string> fusion_head_training;
    std::set<std::string> stage2_features;
    std::set<std::string> stage2_training;
    std::set<std::string> evaluation;
};

/// Throws unless the three splits are pairwise disjoint by patient id.
void check_disjoint(const DatasetSplits& splits);
/// Throws unless every audited step touched only its permitted split:
/// stage-1 training and fusion heads train1, stacker features and training train2.
void verify_split_hygiene(const SplitAudit& audit, const DatasetSplits& splits);

struct TrainedBase {
    std::shared_ptr<BackboneModel<float>> backbone;
    std::optional<FusionHeadParams> head;
    EpochTrace backbone_trace;
    EpochTrace head_trace;
};

struct StackerParams {
    LinearSoftmax layer;
    bool operator==(const StackerParams&) const = default;
};

/// Seed of the i-th stage-1 model.
inline std::uint64_t base_seed(std::uint64_t run_seed, std::size_t index) { return run_seed + index; }
inline std::uint64_t stacker_seed(std::uint64_t run_seed, std::size_t k) { return run_seed + k; }

/// Image-only training of every configured backbone on train1 (may run the
/// K trainings on `cfg.threads` threads; results do not depend on it).
std::vector<TrainedBase> train_backbones(const PreparedSplit& train1, const StackingConfig& cfg, SplitAudit* audit = nullptr);

/// Trains a fusion head per base on its frozen train1 outputs. No-op for mode none.
void train_fusion_heads(std::vector<TrainedBase>& bases, const PreparedSplit& train1, MetadataMode mode, const StackingConfig& cfg,
                        SplitAudit* audit = nullptr);

/// Stage 1: backbones, then fusion heads when the mode carries metadata.
std::vector<TrainedBase> train_stage1(const PreparedSplit& train1, const StackingConfig& cfg, SplitAudit* audit = nullptr);

std::vector<BaseModelOutput> base_outputs(BackboneModel<float>& model, const PreparedSplit& split);

/// Per-sample 2-class scores of one base: fused when mode != none.
std::vector<std::array<double, 2>> base_scores(const TrainedBase& base, const PreparedSplit& split, MetadataMode mode);

/// Concatenates the K base scores per sample in `ordering`.
FeatureSet extract_features(const std::vector<TrainedBase>& bases, const std::vector<std::string>& ordering,
                            const PreparedSplit& split, MetadataMode mode);

StackerParams train_stage2(const FeatureSet& features, const TrainConfig& cfg, EpochTrace* trace = nullptr);

struct EnsembleBundle {
    std::vector<std::string> ordering;
    std::vector<TrainedBase> bases;
    StackerParams stacker;
    EpochTrace stacker_trace;
    NormalizationSpec norm;
    MetadataBounds bounds;
    MetadataMode mode = MetadataMode::none;
    int image_side = 32;
    std::uint64_t run_seed = 0;
};

struct Prediction {
    int predicted = 0;
    std::array<double, 2> scores{};
};

/// argmax with ties going to class 0.
inline int decide(const std::array<double, 2>& scores) { return scores[1] > scores[0] ? 1 : 0; }

/// Trains fusion heads (if any) and the stacker on top of already trained
/// backbones. `bases` is copied; the backbones themselves are shared.
EnsembleBundle fit_ensemble(const std::vector<TrainedBase>& backbones, const PreparedSplit& train1, const PreparedSplit& train2,
                            MetadataMode mode, const StackingConfig& cfg, const NormalizationSpec& norm, const MetadataBounds& bounds,
                            SplitAudit* audit = nullptr);

std::vector<Prediction> predict_split(const EnsembleBundle& bundle, const PreparedSplit& split);
/// Full path from image files: preprocess, bases (+fusion), stacker, argmax.
Prediction predict(const EnsembleBundle& bundle, const PatientRecord& record);

void save_bundle(const EnsembleBundle& bundle, const std::filesystem::path& dir);
EnsembleBundle load_bundle(const std::filesystem::path& dir);

}  // namespace retfuse
