#pragma once

#include <cstdint>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "retfuse/tensor.hpp"

namespace retfuse::nn {

template <typename T>
struct Parameter {
    Tensor<T> value;
    Tensor<T> grad;

    explicit Parameter(Tensor<T> v) : value(std::move(v)), grad(value.n, value.c, value.h, value.w) {}
};

template <typename T>
struct ParamRef {
    std::string name;
    Parameter<T>* param;
};

template <typename T>
struct BufferRef {
    std::string name;
    Tensor<T>* tensor;
};

/// A layer with a cached forward pass. `backward` consumes the cache of the
/// most recent training-mode `forward`, accumulates parameter gradients and
/// returns the gradient with respect to the layer input.
template <typename T>
class Module {
public:
    virtual ~Module() = default;
    virtual Tensor<T> forward(const Tensor<T>& x, bool training) = 0;
    virtual Tensor<T> backward(const Tensor<T>& grad_out) = 0;
    virtual void collect(const std::string& prefix, std::vector<ParamRef<T>>& params, std::vector<BufferRef<T>>& buffers) {
        (void)prefix;
        (void)params;
        (void)buffers;
    }
};

template <typename T>
using ModulePtr = std::unique_ptr<Module<T>>;

template <typename T>
class Conv2d final : public Module<T> {
public:
    Conv2d(int in_channels, int out_channels, int kernel, int stride, int padding, bool bias, std::mt19937_64& rng);

    Tensor<T> forward(const Tensor<T>& x, bool training) override;
    Tensor<T> backward(const Tensor<T>& grad_out) override;
    void collect(const std::string& prefix, std::vector<ParamRef<T>>& params, std::vector<BufferRef<T>>& buffers) override;

    int in_channels() const { return in_; }
    int out_channels() const { return out_; }
    int kernel() const { return k_; }
    int stride() const { return stride_; }
    int padding() const { return pad_; }
    bool has_bias() const { return bias_ != nullptr; }
    Parameter<T>& weight() { return weight_; }
    const Parameter<T>& weight() const { return weight_; }
    Parameter<T>* bias() { return bias_.get(); }

    /// Builds a convolution over twice the input channels whose kernel repeats
    /// this one's weights scaled by 0.5, so an input made of two identical
    /// halves produces this layer's original response.
    std::unique_ptr<Conv2d> duplicated_input_channels() const;

private:
    Conv2d(int in_channels, int out_channels, int kernel, int stride, int padding, bool bias);
    int out_size(int in) const { return (in + 2 * pad_ - k_) / stride_ + 1; }
    void im2col(const T* x, int height, int width, T* col) const;
    void col2im(const T* col, int height, int width, T* x) const;

    int in_, out_, k_, stride_, pad_;
    Parameter<T> weight_;
    std::unique_ptr<Parameter<T>> bias_;
    Tensor<T> input_;
};

template <typename T>
class BatchNorm2d final : public Module<T> {
public:
    explicit BatchNorm2d(int channels, double momentum = 0.1, double eps = 1e-5);

    Tensor<T> forward(const Tensor<T>& x, bool training) override;
    Tensor<T> backward(const Tensor<T>& grad_out) override;
    void collect(const std::string& prefix, std::vector<ParamRef<T>>& params, std::vector<BufferRef<T>>& buffers) override;

private:
    int channels_;
    double momentum_, eps_;
    Parameter<T> gamma_, beta_;
    Tensor<T> running_mean_, running_var_;
    Tensor<T> xhat_;
    std::vector<T> inv_std_;
};

template <typename T>
class ReLU final : public Module<T> {
public:
    Tensor<T> forward(const Tensor<T>& x, bool training) override;
    Tensor<T> backward(const Tensor<T>& grad_out) override;

private:
    std::vector<unsigned char> mask_;
};

template <typename T>
class MaxPool2d final : public Module<T> {
public:
    MaxPool2d(int kernel, int stride, int padding) : k_(kernel), stride_(stride), pad_(padding) {}
    Tensor<T> forward(const Tensor<T>& x, bool training) override;
    Tensor<T> backward(const Tensor<T>& grad_out) override;

private:
    int k_, stride_, pad_;
    int in_h_ = 0, in_w_ = 0, in_c_ = 0;
    std::vector<std::size_t> argmax_;
};

template <typename T>
class AvgPool2d final : public Module<T> {
public:
    AvgPool2d(int kernel, int stride) : k_(kernel), stride_(stride) {}
    Tensor<T> forward(const Tensor<T>& x, bool training) override;
    Tensor<T> backward(const Tensor<T>& grad_out) override;

private:
    int k_, stride_;
    int in_h_ = 0, in_w_ = 0;
};

template <typename T>
class GlobalAvgPool final : public Module<T> {
public:
    Tensor<T> forward(const Tensor<T>& x, bool training) override;
    Tensor<T> backward(const Tensor<T>& grad_out) override;

private:
    int in_h_ = 0, in_w_ = 0;
};

template <typename T>
class Linear final : public Module<T> {
public:
    Linear(int in_features, int out_features, std::mt19937_64& rng);
    Tensor<T> forward(const Tensor<T>& x, bool training) override;
    Tensor<T> backward(const Tensor<T>& grad_out) override;
    void collect(const std::string& prefix, std::vector<ParamRef<T>>& params, std::vector<BufferRef<T>>& buffers) override;

private:
    int in_, out_;
    Parameter<T> weight_, bias_;
    Tensor<T> input_;
};

template <typename T>
class Sequential final : public Module<T> {
public:
    Sequential() = default;
    Sequential& add(ModulePtr<T> m) {
        layers_.push_back(std::move(m));
        return *this;
    }
    template <typename M, typename... Args>
    M& emplace(Args&&... args) {
        auto m = std::make_unique<M>(std::forward<Args>(args)...);
        M& ref = *m;
        layers_.push_back(std::move(m));
        return ref;
    }
    std::size_t size() const { return layers_.size(); }
    Module<T>& at(std::size_t i) { return *layers_[i]; }
    void replace(std::size_t i, ModulePtr<T> m) { layers_[i] = std::move(m); }

    Tensor<T> forward(const Tensor<T>& x, bool training) override;
    Tensor<T> backward(const Tensor<T>& grad_out) override;
    void collect(const std::string& prefix, std::vector<ParamRef<T>>& params, std::vector<BufferRef<T>>& buffers) override;

private:
    std::vector<ModulePtr<T>> layers_;
};

/// relu(main(x) + shortcut(x)); an absent shortcut is the identity.
template <typename T>
class Residual final : public Module<T> {
public:
    Residual(std::unique_ptr<Sequential<T>> main, std::unique_ptr<Sequential<T>> shortcut)
        : main_(std::move(main)), shortcut_(std::move(shortcut)) {}
    Tensor<T> forward(const Tensor<T>& x, bool training) override;
    Tensor<T> backward(const Tensor<T>& grad_out) override;
    void collect(const std::string& prefix, std::vector<ParamRef<T>>& params, std::vector<BufferRef<T>>& buffers) override;

private:
    std::unique_ptr<Sequential<T>> main_, shortcut_;
    std::vector<unsigned char> mask_;
};

/// concat(x, branch(x)) along channels.
template <typename T>
class DenseConcat final : public Module<T> {
public:
    explicit DenseConcat(std::unique_ptr<Sequential<T>> branch) : branch_(std::move(branch)) {}
    Tensor<T> forward(const Tensor<T>& x, bool training) override;
    Tensor<T> backward(const Tensor<T>& grad_out) override;
    void collect(const std::string& prefix, std::vector<ParamRef<T>>& params, std::vector<BufferRef<T>>& buffers) override;

private:
    std::unique_ptr<Sequential<T>> branch_;
    int in_c_ = 0;
};

/// Numerically stable row softmax over the 2-or-more logits of each sample.
template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& logits);

}  // namespace retfuse::nn
