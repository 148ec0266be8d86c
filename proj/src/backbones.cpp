#include "retfuse/backbones.hpp"

#include <algorithm>
#include <map>

#include "retfuse/error.hpp"

namespace retfuse {

namespace {

template <typename T>
using Seq = nn::Sequential<T>;

template <typename T>
void conv_bn(Seq<T>& s, int in, int out, int k, int stride, int pad, std::mt19937_64& rng, bool relu = true) {
    s.template emplace<nn::Conv2d<T>>(in, out, k, stride, pad, false, rng);
    s.template emplace<nn::BatchNorm2d<T>>(out);
    if (relu) s.template emplace<nn::ReLU<T>>();
}

template <typename T>
std::unique_ptr<Seq<T>> projection(int in, int out, int stride, std::mt19937_64& rng) {
    if (in == out && stride == 1) return nullptr;
    auto sc = std::make_unique<Seq<T>>();
    conv_bn(*sc, in, out, 1, stride, 0, rng, false);
    return sc;
}

template <typename T>
void basic_block(Seq<T>& s, int in, int out, int stride, std::mt19937_64& rng) {
    auto main = std::make_unique<Seq<T>>();
    conv_bn(*main, in, out, 3, stride, 1, rng);
    conv_bn(*main, out, out, 3, 1, 1, rng, false);
    auto sc = projection<T>(in, out, stride, rng);
    s.template emplace<nn::Residual<T>>(std::move(main), std::move(sc));
}

template <typename T>
void bottleneck_block(Seq<T>& s, int in, int width, int stride, std::mt19937_64& rng) {
    const int out = width * 4;
    auto main = std::make_unique<Seq<T>>();
    conv_bn(*main, in, width, 1, 1, 0, rng);
    conv_bn(*main, width, width, 3, stride, 1, rng);
    conv_bn(*main, width, out, 1, 1, 0, rng, false);
    auto sc = projection<T>(in, out, stride, rng);
    s.template emplace<nn::Residual<T>>(std::move(main), std::move(sc));
}

/// BN-ReLU-[1x1 bottleneck]-BN-ReLU-3x3, concatenated onto its input.
template <typename T>
void dense_layer(Seq<T>& s, int in, int growth, int bn_size, std::mt19937_64& rng) {
    auto branch = std::make_unique<Seq<T>>();
    int c = in;
    if (bn_size > 0) {
        branch->template emplace<nn::BatchNorm2d<T>>(c);
        branch->template emplace<nn::ReLU<T>>();
        branch->template emplace<nn::Conv2d<T>>(c, bn_size * growth, 1, 1, 0, false, rng);
        c = bn_size * growth;
    }
    branch->template emplace<nn::BatchNorm2d<T>>(c);
    branch->template emplace<nn::ReLU<T>>();
    branch->template emplace<nn::Conv2d<T>>(c, growth, 3, 1, 1, false, rng);
    s.template emplace<nn::DenseConcat<T>>(std::move(branch));
}

template <typename T>
int dense_block(Seq<T>& s, int in, int layers, int growth, int bn_size, std::mt19937_64& rng) {
    for (int l = 0; l < layers; ++l) {
        dense_layer(s, in, growth, bn_size, rng);
        in += growth;
    }
    return in;
}

template <typename T>
void transition(Seq<T>& s, int in, int out, std::mt19937_64& rng) {
    s.template emplace<nn::BatchNorm2d<T>>(in);
    s.template emplace<nn::ReLU<T>>();
    s.template emplace<nn::Conv2d<T>>(in, out, 1, 1, 0, false, rng);
    s.template emplace<nn::AvgPool2d<T>>(2, 2);
}

template <typename T>
void classifier(Seq<T>& s, int features, std::mt19937_64& rng) {
    s.template emplace<nn::GlobalAvgPool<T>>();
    s.template emplace<nn::Linear<T>>(features, 2, rng);
}

template <typename T>
std::unique_ptr<Seq<T>> resnet(const std::array<int, 4>& depths, std::mt19937_64& rng) {
    auto s = std::make_unique<Seq<T>>();
    conv_bn(*s, 3, 64, 7, 2, 3, rng);
    s->template emplace<nn::MaxPool2d<T>>(3, 2, 1);
    int in = 64;
    for (int stage = 0; stage < 4; ++stage) {
        const int width = 64 << stage;
        for (int b = 0; b < depths[stage]; ++b) {
            bottleneck_block(*s, in, width, (b == 0 && stage > 0) ? 2 : 1, rng);
            in = width * 4;
        }
    }
    classifier(*s, in, rng);
    return s;
}

template <typename T>
std::unique_ptr<Seq<T>> densenet(int growth, const std::array<int, 4>& blocks, int init_features, std::mt19937_64& rng) {
    auto s = std::make_unique<Seq<T>>();
    conv_bn(*s, 3, init_features, 7, 2, 3, rng);
    s->template emplace<nn::MaxPool2d<T>>(3, 2, 1);
    int c = init_features;
    for (std::size_t b = 0; b < blocks.size(); ++b) {
        c = dense_block(*s, c, blocks[b], growth, 4, rng);
        if (b + 1 < blocks.size()) {
            transition(*s, c, c / 2, rng);
            c /= 2;
        }
    }
    s->template emplace<nn::BatchNorm2d<T>>(c);
    s->template emplace<nn::ReLU<T>>();
    classifier(*s, c, rng);
    return s;
}

// Desk-scale variants for 32x32 inputs: two residual and three dense designs
// of different depth and width.

template <typename T>
std::unique_ptr<Seq<T>> tiny_a(std::mt19937_64& rng) {
    auto s = std::make_unique<Seq<T>>();
    conv_bn(*s, 3, 16, 3, 2, 1, rng);
    s->template emplace<nn::MaxPool2d<T>>(3, 2, 1);
    basic_block(*s, 16, 16, 1, rng);
    basic_block(*s, 16, 32, 2, rng);
    classifier(*s, 32, rng);
    return s;
}

template <typename T>
std::unique_ptr<Seq<T>> tiny_b(std::mt19937_64& rng) {
    auto s = std::make_unique<Seq<T>>();
    conv_bn(*s, 3, 24, 3, 2, 1, rng);
    s->template emplace<nn::MaxPool2d<T>>(2, 2, 0);
    basic_block(*s, 24, 48, 1, rng);
    classifier(*s, 48, rng);
    return s;
}

template <typename T>
std::unique_ptr<Seq<T>> tiny_c(std::mt19937_64& rng) {
    auto s = std::make_unique<Seq<T>>();
    conv_bn(*s, 3, 16, 3, 2, 1, rng);
    s->template emplace<nn::MaxPool2d<T>>(3, 2, 1);
    int c = dense_block(*s, 16, 3, 8, 0, rng);
    transition(*s, c, c / 2, rng);
    c = dense_block(*s, c / 2, 3, 8, 0, rng);
    s->template emplace<nn::BatchNorm2d<T>>(c);
    s->template emplace<nn::ReLU<T>>();
    classifier(*s, c, rng);
    return s;
}

template <typename T>
std::unique_ptr<Seq<T>> tiny_d(std::mt19937_64& rng) {
    auto s = std::make_unique<Seq<T>>();
    conv_bn(*s, 3, 12, 3, 2, 1, rng);
    s->template emplace<nn::MaxPool2d<T>>(3, 2, 1);
    int c = dense_block(*s, 12, 4, 6, 2, rng);
    transition(*s, c, c / 2, rng);
    c = dense_block(*s, c / 2, 4, 6, 2, rng);
    s->template emplace<nn::BatchNorm2d<T>>(c);
    s->template emplace<nn::ReLU<T>>();
    classifier(*s, c, rng);
    return s;
}

template <typename T>
std::unique_ptr<Seq<T>> tiny_e(std::mt19937_64& rng) {
    auto s = std::make_unique<Seq<T>>();
    conv_bn(*s, 3, 8, 3, 2, 1, rng);
    s->template emplace<nn::MaxPool2d<T>>(3, 2, 1);
    basic_block(*s, 8, 8, 1, rng);
    basic_block(*s, 8, 8, 1, rng);
    basic_block(*s, 8, 16, 2, rng);
    basic_block(*s, 16, 16, 1, rng);
    classifier(*s, 16, rng);
    return s;
}

template <typename T>
std::unique_ptr<Seq<T>> build_rgb_network(const std::string& name, std::mt19937_64& rng) {
    if (name == "resnet50") return resnet<T>({3, 4, 6, 3}, rng);
    if (name == "resnet101") return resnet<T>({3, 4, 23, 3}, rng);
    if (name == "densenet121") return densenet<T>(32, {6, 12, 24, 16}, 64, rng);
    if (name == "densenet161") return densenet<T>(48, {6, 12, 36, 24}, 96, rng);
    if (name == "densenet169") return densenet<T>(32, {6, 12, 32, 32}, 64, rng);
    if (name == "tiny_a") return tiny_a<T>(rng);
    if (name == "tiny_b") return tiny_b<T>(rng);
    if (name == "tiny_c") return tiny_c<T>(rng);
    if (name == "tiny_d") return tiny_d<T>(rng);
    if (name == "tiny_e") return tiny_e<T>(rng);
    std::string known;
    for (const auto& n : backbone_registry()) known += (known.empty() ? "" : ", ") + n;
    throw Error("unknown backbone '" + name + "'; registered: " + known);
}

template <typename T>
std::size_t count_parameters(std::vector<nn::ParamRef<T>>& params) {
    std::size_t total = 0;
    for (auto& p : params) total += p.param->value.size();
    return total;
}

}  // namespace

const std::vector<std::string>& backbone_registry() {
    static const std::vector<std::string> names = {"resnet50", "resnet101", "densenet121", "densenet161", "densenet169",
                                                   "tiny_a",   "tiny_b",    "tiny_c",      "tiny_d",      "tiny_e"};
    return names;
}

bool is_registered_backbone(const std::string& name) {
    const auto& r = backbone_registry();
    return std::find(r.begin(), r.end(), name) != r.end();
}

int min_input_side(const std::string& name) { return name.rfind("tiny_", 0) == 0 ? 32 : 64; }

template <typename T>
BackboneModel<T>::BackboneModel(BackboneSpec spec, std::uint64_t seed, std::unique_ptr<nn::Sequential<T>> net)
    : spec_(std::move(spec)), seed_(seed), net_(std::move(net)) {}

template <typename T>
Tensor<T> BackboneModel<T>::logits(const Tensor<T>& batch, bool training) {
    if (batch.c != spec_.in_channels)
        throw Error(spec_.name + ": expected " + std::to_string(spec_.in_channels) + " input channels, got " + std::to_string(batch.c));
    const int side = min_input_side(spec_.name);
    if (batch.h < side || batch.w < side)
        throw Error(spec_.name + ": input " + std::to_string(batch.h) + "x" + std::to_string(batch.w) + " below minimum side " +
                    std::to_string(side));
    return net_->forward(batch, training);
}

template <typename T>
std::vector<BaseModelOutput> BackboneModel<T>::forward(const Tensor<T>& batch) {
    const Tensor<T> p = nn::softmax_rows(logits(batch, false));
    std::vector<BaseModelOutput> out(static_cast<std::size_t>(batch.n));
    for (int i = 0; i < batch.n; ++i) out[i].scores = {static_cast<double>(p(i, 0, 0, 0)), static_cast<double>(p(i, 1, 0, 0))};
    return out;
}

template <typename T>
std::vector<nn::ParamRef<T>> BackboneModel<T>::parameters() {
    std::vector<nn::ParamRef<T>> params;
    std::vector<nn::BufferRef<T>> buffers;
    net_->collect("", params, buffers);
    return params;
}

template <typename T>
std::vector<nn::BufferRef<T>> BackboneModel<T>::buffers() {
    std::vector<nn::ParamRef<T>> params;
    std::vector<nn::BufferRef<T>> buffers;
    net_->collect("", params, buffers);
    return buffers;
}

template <typename T>
void BackboneModel<T>::zero_grad() {
    for (auto& p : parameters()) std::fill(p.param->grad.data.begin(), p.param->grad.data.end(), T(0));
}

template <typename T>
std::unique_ptr<BackboneModel<T>> build_backbone(const std::string& name, std::uint64_t seed, const PretrainedHook<T>& hook) {
    std::mt19937_64 rng(seed);
    auto net = build_rgb_network<T>(name, rng);
    if (hook) {
        std::vector<nn::ParamRef<T>> params;
        std::vector<nn::BufferRef<T>> buffers;
        net->collect("", params, buffers);
        hook(params);
    }
    auto* stem = dynamic_cast<nn::Conv2d<T>*>(&net->at(0));
    if (!stem || stem->in_channels() != 3) throw Error(name + ": first layer is not a 3-channel convolution");
    net->replace(0, stem->duplicated_input_channels());

    std::vector<nn::ParamRef<T>> params;
    std::vector<nn::BufferRef<T>> buffers;
    net->collect("", params, buffers);
    BackboneSpec spec{name, 6, 2, count_parameters(params)};
    return std::make_unique<BackboneModel<T>>(spec, seed, std::move(net));
}

template <typename T>
Checkpoint backbone_checkpoint(BackboneModel<T>& model) {
    Checkpoint ckpt;
    ckpt.meta = {{"kind", "backbone"},
                 {"backbone", model.name()},
                 {"seed", model.seed()},
                 {"in_channels", model.spec().in_channels},
                 {"out_dim", model.spec().out_dim},
                 {"parameter_count", model.spec().parameter_count}};
    for (auto& p : model.parameters()) ckpt.tensors.push_back(pack_tensor("backbone.param." + p.name, p.param->value));
    for (auto& b : model.buffers()) ckpt.tensors.push_back(pack_tensor("backbone.buffer." + b.name, *b.tensor));
    return ckpt;
}

template <typename T>
std::unique_ptr<BackboneModel<T>> backbone_from_checkpoint(const Checkpoint& ckpt) {
    if (ckpt.meta.value("kind", "") != "backbone") throw Error("checkpoint does not hold a backbone");
    auto model = build_backbone<T>(ckpt.meta.at("backbone").get<std::string>(), ckpt.meta.at("seed").get<std::uint64_t>());
    auto restore = [&](const std::string& name, Tensor<T>& dst) {
        const auto* src = ckpt.find(name);
        if (!src) throw Error("checkpoint missing tensor " + name);
        unpack_tensor(*src, dst);
    };
    for (auto& p : model->parameters()) restore("backbone.param." + p.name, p.param->value);
    for (auto& b : model->buffers()) restore("backbone.buffer." + b.name, *b.tensor);
    return model;
}

template class BackboneModel<float>;
template class BackboneModel<double>;
template std::unique_ptr<BackboneModel<float>> build_backbone(const std::string&, std::uint64_t, const PretrainedHook<float>&);
template std::unique_ptr<BackboneModel<double>> build_backbone(const std::string&, std::uint64_t, const PretrainedHook<double>&);
template Checkpoint backbone_checkpoint(BackboneModel<float>&);
template Checkpoint backbone_checkpoint(BackboneModel<double>&);
template std::unique_ptr<BackboneModel<float>> backbone_from_checkpoint(const Checkpoint&);
template std::unique_ptr<BackboneModel<double>> backbone_from_checkpoint(const Checkpoint&);

}  // namespace retfuse
