#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "retfuse/backbones.hpp"
#include "retfuse/checkpoint.hpp"
#include "retfuse/preprocess.hpp"
#include "retfuse/training.hpp"

namespace retfuse {

/// One fully connected layer with 2 outputs followed by softmax. Shared by the
/// stage-1 fusion head (4 inputs) and the stage-2 stacker (2K inputs).
struct LinearSoftmax {
    int inputs = 0;
    std::vector<double> weights;  // 2 x inputs, row-major
    std::array<double, 2> bias{};

    static LinearSoftmax initialize(int inputs, std::uint64_t seed);

    std::array<double, 2> logits(std::span<const double> x) const;
    std::array<double, 2> scores(std::span<const double> x) const;

    /// Cross-entropy of one sample and its gradients. `grad` (same layout)
    /// and `grad_input` are accumulated into, not overwritten.
    double loss_and_gradient(std::span<const double> x, int label, LinearSoftmax* grad, std::span<double> grad_input = {}) const;

    bool operator==(const LinearSoftmax&) const = default;
};

/// Row-major sample matrix with one label per row.
struct FeatureSet {
    int dim = 0;
    std::vector<double> values;
    std::vector<int> labels;

    std::size_t size() const { return labels.size(); }
    std::span<const double> row(std::size_t i) const {
        return std::span<const double>(values).subspan(i * static_cast<std::size_t>(dim), static_cast<std::size_t>(dim));
    }
    void push(std::span<const double> x, int label);
};

/// Trains a LinearSoftmax with the shared epoch loop. With max_epochs == 0
/// the seeded initialization is returned unchanged.
LinearSoftmax train_linear_softmax(const FeatureSet& data, const TrainConfig& cfg, EpochTrace* trace = nullptr);

/// Mean cross-entropy over a feature set.
double mean_loss(const LinearSoftmax& layer, const FeatureSet& data);

// ---------------------------------------------------------------------------
// Stage-1 late fusion

/// Weights over concat(base scores, metadata components): 2 x 4.
struct FusionHeadParams {
    LinearSoftmax layer;

    static FusionHeadParams initialize(std::uint64_t seed) { return {LinearSoftmax::initialize(4, seed)}; }
    bool operator==(const FusionHeadParams&) const = default;
};

std::array<double, 4> fusion_input(const BaseModelOutput& base, const MetadataVector& meta);

/// softmax(W * concat(base.scores, meta.components) + b)
std::array<double, 2> fuse_forward(const BaseModelOutput& base, const MetadataVector& meta, const FusionHeadParams& params);

/// Trains the head on frozen base outputs.
FusionHeadParams train_fusion_head(const std::vector<BaseModelOutput>& base_outputs, const std::vector<MetadataVector>& metas,
                                   const std::vector<int>& labels, const TrainConfig& cfg, EpochTrace* trace = nullptr);

void append_linear(Checkpoint& ckpt, const std::string& prefix, const LinearSoftmax& layer);
LinearSoftmax read_linear(const Checkpoint& ckpt, const std::string& prefix);

}  // namespace retfuse
