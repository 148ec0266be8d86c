#include "retfuse/fusion_head.hpp"

#include <cmath>
#include <random>

#include "retfuse/error.hpp"

namespace retfuse {

LinearSoftmax LinearSoftmax::initialize(int inputs, std::uint64_t seed) {
    if (inputs < 1) throw Error("linear layer needs at least one input");
    LinearSoftmax layer;
    layer.inputs = inputs;
    layer.weights.resize(2 * static_cast<std::size_t>(inputs));
    std::mt19937_64 rng(seed);
    const double bound = 1.0 / std::sqrt(static_cast<double>(inputs));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (auto& w : layer.weights) w = dist(rng);
    for (auto& b : layer.bias) b = dist(rng);
    return layer;
}

std::array<double, 2> LinearSoftmax::logits(std::span<const double> x) const {
    if (static_cast<int>(x.size()) != inputs)
        throw Error("linear layer expects " + std::to_string(inputs) + " inputs, got " + std::to_string(x.size()));
    std::array<double, 2> z = bias;
    for (int o = 0; o < 2; ++o)
        for (int j = 0; j < inputs; ++j) z[o] += weights[static_cast<std::size_t>(o) * inputs + j] * x[j];
    return z;
}

std::array<double, 2> LinearSoftmax::scores(std::span<const double> x) const {
    const auto z = logits(x);
    const double mx = std::max(z[0], z[1]);
    const double e0 = std::exp(z[0] - mx), e1 = std::exp(z[1] - mx);
    return {e0 / (e0 + e1), e1 / (e0 + e1)};
}

double LinearSoftmax::loss_and_gradient(std::span<const double> x, int label, LinearSoftmax* grad, std::span<double> grad_input) const {
    const auto z = logits(x);
    const double loss = cross_entropy(z, label);
    const auto p = scores(x);
    const std::array<double, 2> dz = {p[0] - (label == 0 ? 1.0 : 0.0), p[1] - (label == 1 ? 1.0 : 0.0)};
    if (grad) {
        for (int o = 0; o < 2; ++o) {
            for (int j = 0; j < inputs; ++j) grad->weights[static_cast<std::size_t>(o) * inputs + j] += dz[o] * x[j];
            grad->bias[o] += dz[o];
        }
    }
    if (!grad_input.empty()) {
        for (int j = 0; j < inputs; ++j) grad_input[j] += dz[0] * weights[j] + dz[1] * weights[static_cast<std::size_t>(inputs) + j];
    }
    return loss;
}

void FeatureSet::push(std::span<const double> x, int label) {
    if (dim == 0 && values.empty()) dim = static_cast<int>(x.size());
    if (static_cast<int>(x.size()) != dim) throw Error("feature set: inconsistent feature width");
    values.insert(values.end(), x.begin(), x.end());
    labels.push_back(label);
}

double mean_loss(const LinearSoftmax& layer, const FeatureSet& data) {
    double total = 0.0;
    for (std::size_t i = 0; i < data.size(); ++i) total += layer.loss_and_gradient(data.row(i), data.labels[i], nullptr);
    return total / static_cast<double>(data.size());
}

namespace {

/// Parameters live in nn::Parameter tensors so the generic loop can update
/// them; they are copied back into a LinearSoftmax at the end.
class LinearObjective final : public Objective<double> {
public:
    LinearObjective(const FeatureSet& data, const LinearSoftmax& init)
        : data_(data), weight_(Tensor<double>(2, init.inputs, 1, 1)), bias_(Tensor<double>(1, 2, 1, 1)) {
        weight_.value.data = init.weights;
        bias_.value.data = {init.bias[0], init.bias[1]};
    }

    std::size_t size() const override { return data_.size(); }
    int label(std::size_t i) const override { return data_.labels[i]; }
    std::vector<nn::ParamRef<double>> parameters() override { return {{"weight", &weight_}, {"bias", &bias_}}; }

    BatchResult run_batch(std::span<const std::size_t> batch, std::mt19937_64&) override {
        const LinearSoftmax layer = current();
        LinearSoftmax grad;
        grad.inputs = layer.inputs;
        grad.weights.assign(layer.weights.size(), 0.0);
        BatchResult r;
        for (std::size_t i : batch) {
            r.loss_sum += layer.loss_and_gradient(data_.row(i), data_.labels[i], &grad);
            const auto z = layer.logits(data_.row(i));
            r.correct += static_cast<int>(z[1] > z[0]) == data_.labels[i];
        }
        const double inv = 1.0 / static_cast<double>(batch.size());
        for (std::size_t k = 0; k < grad.weights.size(); ++k) weight_.grad.data[k] += grad.weights[k] * inv;
        for (int o = 0; o < 2; ++o) bias_.grad.data[o] += grad.bias[o] * inv;
        return r;
    }

    LinearSoftmax current() const {
        LinearSoftmax layer;
        layer.inputs = weight_.value.c;
        layer.weights = weight_.value.data;
        layer.bias = {bias_.value.data[0], bias_.value.data[1]};
        return layer;
    }

private:
    const FeatureSet& data_;
    nn::Parameter<double> weight_, bias_;
};

}  // namespace

LinearSoftmax train_linear_softmax(const FeatureSet& data, const TrainConfig& cfg, EpochTrace* trace) {
    if (data.size() == 0) throw Error("linear layer training: empty feature set");
    const LinearSoftmax init = LinearSoftmax::initialize(data.dim, cfg.seed);
    LinearObjective objective(data, init);
    auto t = train_loop<double>(objective, cfg);
    if (trace) *trace = std::move(t);
    return objective.current();
}

std::array<double, 4> fusion_input(const BaseModelOutput& base, const MetadataVector& meta) {
    if (meta.mode == MetadataMode::none) throw Error("fusion head needs metadata; mode 'none' uses the image-only path");
    return {base.scores[0], base.scores[1], meta.components[0], meta.components[1]};
}

std::array<double, 2> fuse_forward(const BaseModelOutput& base, const MetadataVector& meta, const FusionHeadParams& params) {
    const auto x = fusion_input(base, meta);
    return params.layer.scores(x);
}

FusionHeadParams train_fusion_head(const std::vector<BaseModelOutput>& base_outputs, const std::vector<MetadataVector>& metas,
                                   const std::vector<int>& labels, const TrainConfig& cfg, EpochTrace* trace) {
    if (base_outputs.size() != metas.size() || metas.size() != labels.size())
        throw Error("train_fusion_head: input lists differ in length");
    FeatureSet data;
    data.dim = 4;
    bool seen[2] = {false, false};
    for (std::size_t i = 0; i < labels.size(); ++i) {
        data.push(fusion_input(base_outputs[i], metas[i]), labels[i]);
        seen[labels[i] == 1] = true;
    }
    if (!seen[0] || !seen[1]) throw Error("degenerate training set: fusion head needs both classes");
    return {train_linear_softmax(data, cfg, trace)};
}

void append_linear(Checkpoint& ckpt, const std::string& prefix, const LinearSoftmax& layer) {
    ckpt.tensors.push_back(pack_values(prefix + ".weight", layer.weights, {2, layer.inputs}));
    ckpt.tensors.push_back(pack_values(prefix + ".bias", {layer.bias[0], layer.bias[1]}, {2}));
}

LinearSoftmax read_linear(const Checkpoint& ckpt, const std::string& prefix) {
    const auto* w = ckpt.find(prefix + ".weight");
    const auto* b = ckpt.find(prefix + ".bias");
    if (!w || !b) throw Error("checkpoint missing linear layer " + prefix);
    LinearSoftmax layer;
    if (w->shape.size() != 2 || w->shape[0] != 2) throw Error("checkpoint layer " + prefix + " has wrong weight shape");
    layer.inputs = static_cast<int>(w->shape[1]);
    layer.weights = unpack_values(*w);
    const auto bias = unpack_values(*b);
    if (bias.size() != 2) throw Error("checkpoint layer " + prefix + " has wrong bias shape");
    layer.bias = {bias[0], bias[1]};
    return layer;
}

}  // namespace retfuse
