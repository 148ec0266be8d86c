#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "retfuse/checkpoint.hpp"
#include "retfuse/nn.hpp"

namespace retfuse {

/// Registered architecture names, in registry order: the five full-size
/// ResNet/DenseNet variants followed by the desk-scale tiny_a..tiny_e.
const std::vector<std::string>& backbone_registry();
bool is_registered_backbone(const std::string& name);
/// Smallest input side the architecture accepts.
int min_input_side(const std::string& name);

struct BackboneSpec {
    std::string name;
    int in_channels = 6;
    int out_dim = 2;
    std::size_t parameter_count = 0;
};

/// Post-softmax class probabilities of one sample.
struct BaseModelOutput {
    std::array<double, 2> scores{};
};

template <typename T>
class BackboneModel {
public:
    BackboneModel(BackboneSpec spec, std::uint64_t seed, std::unique_ptr<nn::Sequential<T>> net);

    const BackboneSpec& spec() const { return spec_; }
    const std::string& name() const { return spec_.name; }
    std::uint64_t seed() const { return seed_; }

    /// Raw (N, 2, 1, 1) logits. Training mode caches activations for backward.
    Tensor<T> logits(const Tensor<T>& batch, bool training);
    Tensor<T> backward(const Tensor<T>& grad_logits) { return net_->backward(grad_logits); }

    /// Inference-mode class probabilities, one row per sample.
    std::vector<BaseModelOutput> forward(const Tensor<T>& batch);

    std::vector<nn::ParamRef<T>> parameters();
    std::vector<nn::BufferRef<T>> buffers();
    void zero_grad();

    nn::Sequential<T>& network() { return *net_; }

private:
    BackboneSpec spec_;
    std::uint64_t seed_;
    std::unique_ptr<nn::Sequential<T>> net_;
};

/// Called with the named parameters of the 3-channel network before its first
/// convolution is widened to 6 channels; use it to load pretrained weights.
template <typename T>
using PretrainedHook = std::function<void(std::vector<nn::ParamRef<T>>& params)>;

/// Builds a registered backbone with deterministic initialization. The first
/// convolution is created for 3 channels and then widened to 6 by duplicating
/// its kernel at half weight; the classifier emits 2 logits.
template <typename T>
std::unique_ptr<BackboneModel<T>> build_backbone(const std::string& name, std::uint64_t seed, const PretrainedHook<T>& hook = {});

template <typename T>
Checkpoint backbone_checkpoint(BackboneModel<T>& model);
/// Rebuilds the architecture recorded in the archive and restores every
/// parameter and buffer. Tensors outside the backbone namespace are ignored.
template <typename T>
std::unique_ptr<BackboneModel<T>> backbone_from_checkpoint(const Checkpoint& ckpt);

}  // namespace retfuse
