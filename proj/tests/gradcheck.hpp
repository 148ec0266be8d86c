#pragma once

// Finite-difference gradient checks shared by the unit tests and the
// acceptance binary.

#include <algorithm>
#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "oracles.hpp"
#include "retfuse/backbones.hpp"
#include "retfuse/fusion_head.hpp"
#include "retfuse/training.hpp"

namespace retfuse::gradcheck {

/// Norm floor for the per-tensor relative error. Tensors whose gradient is
/// pure roundoff (a channel scale that a later BatchNorm normalizes away) are
/// then judged by absolute error against an O(1) loss.
inline constexpr double kNormFloor = 1e-6;

struct Outcome {
    double max_error = 0.0;  // worst per-tensor relative L2 error
    std::string worst;
    double global_error = 0.0;  // relative L2 error over every probed coordinate
};

inline void note(Outcome& o, double err, const std::string& what) {
    if (err > o.max_error || o.worst.empty()) {
        o.max_error = std::max(o.max_error, err);
        o.worst = what;
    }
}

/// Elementwise max relative error of LinearSoftmax gradients (weights, bias
/// and inputs) against central differences, summed over a small batch.
inline Outcome linear_softmax(const LinearSoftmax& layer, const std::vector<std::vector<double>>& xs, const std::vector<int>& labels,
                              double eps = 1e-5) {
    LinearSoftmax grad = layer;
    std::fill(grad.weights.begin(), grad.weights.end(), 0.0);
    grad.bias = {0.0, 0.0};
    std::vector<std::vector<double>> grad_x;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        grad_x.emplace_back(xs[i].size(), 0.0);
        layer.loss_and_gradient(xs[i], labels[i], &grad, grad_x.back());
    }
    auto total = [&](const LinearSoftmax& l, const std::vector<std::vector<double>>& in) {
        double s = 0;
        for (std::size_t i = 0; i < in.size(); ++i) s += l.loss_and_gradient(in[i], labels[i], nullptr);
        return s;
    };
    Outcome out;
    for (std::size_t j = 0; j < layer.weights.size(); ++j) {
        auto f = [&](const std::vector<double>& w) {
            LinearSoftmax l = layer;
            l.weights = w;
            return total(l, xs);
        };
        note(out, oracle::relative_error(grad.weights[j], oracle::central_difference(f, layer.weights, j, eps), 1e-6), "weight " + std::to_string(j));
    }
    for (std::size_t j = 0; j < 2; ++j) {
        auto f = [&](const std::vector<double>& b) {
            LinearSoftmax l = layer;
            l.bias = {b[0], b[1]};
            return total(l, xs);
        };
        note(out, oracle::relative_error(grad.bias[j], oracle::central_difference(f, {layer.bias[0], layer.bias[1]}, j, eps), 1e-6),
             "bias " + std::to_string(j));
    }
    for (std::size_t i = 0; i < xs.size(); ++i)
        for (std::size_t j = 0; j < xs[i].size(); ++j) {
            auto f = [&](const std::vector<double>& x) { return layer.loss_and_gradient(x, labels[i], nullptr); };
            note(out, oracle::relative_error(grad_x[i][j], oracle::central_difference(f, xs[i], j, eps), 1e-6),
                 "input " + std::to_string(i) + "," + std::to_string(j));
        }
    return out;
}

/// Random inputs and labels for a layer with `dim` inputs.
inline void random_batch(int dim, int n, std::uint64_t seed, std::vector<std::vector<double>>& xs, std::vector<int>& labels) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> d(0.0, 1.0);
    xs.assign(n, std::vector<double>(dim));
    labels.resize(n);
    for (int i = 0; i < n; ++i) {
        for (auto& v : xs[i]) v = d(rng);
        labels[i] = static_cast<int>(rng() % 2);
    }
}

struct CompositeCase {
    Tensor<double> x;
    std::vector<MetadataVector> meta;
    std::vector<int> labels;
};

inline CompositeCase composite_case(int n, int side, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    CompositeCase c{Tensor<double>(n, 6, side, side), {}, {}};
    for (auto& v : c.x.data) v = u(rng);
    for (int i = 0; i < n; ++i) {
        c.meta.push_back({MetadataMode::both, {u(rng), static_cast<double>(rng() % 2)}});
        c.labels.push_back(i % 2);
    }
    return c;
}

/// Mean loss of backbone -> softmax -> fusion head -> cross-entropy, with
/// optional backprop into the backbone and head.
template <typename T>
double composite_loss(BackboneModel<T>& model, const LinearSoftmax& head, const CompositeCase& c, LinearSoftmax* head_grad, bool backprop) {
    Tensor<T> x(c.x.n, c.x.c, c.x.h, c.x.w);
    for (std::size_t i = 0; i < x.size(); ++i) x.data[i] = static_cast<T>(c.x.data[i]);
    const Tensor<T> z = model.logits(x, true);
    Tensor<T> gz(z.n, 2, 1, 1);
    double loss = 0.0;
    const double inv = 1.0 / z.n;
    for (int i = 0; i < z.n; ++i) {
        const double z0 = z(i, 0, 0, 0), z1 = z(i, 1, 0, 0);
        const double mx = std::max(z0, z1);
        const double e0 = std::exp(z0 - mx), e1 = std::exp(z1 - mx);
        const std::array<double, 2> p = {e0 / (e0 + e1), e1 / (e0 + e1)};
        const std::array<double, 4> in = {p[0], p[1], c.meta[i].components[0], c.meta[i].components[1]};
        std::array<double, 4> gin{};
        LinearSoftmax sample_grad = head;
        std::fill(sample_grad.weights.begin(), sample_grad.weights.end(), 0.0);
        sample_grad.bias = {0.0, 0.0};
        loss += head.loss_and_gradient(in, c.labels[i], &sample_grad, gin) * inv;
        if (head_grad) {
            for (std::size_t j = 0; j < head.weights.size(); ++j) head_grad->weights[j] += sample_grad.weights[j] * inv;
            for (int j = 0; j < 2; ++j) head_grad->bias[j] += sample_grad.bias[j] * inv;
        }
        const double dot = p[0] * gin[0] + p[1] * gin[1];
        gz(i, 0, 0, 0) = static_cast<T>(p[0] * (gin[0] - dot) * inv);
        gz(i, 1, 0, 0) = static_cast<T>(p[1] * (gin[1] - dot) * inv);
    }
    if (backprop) model.backward(gz);
    return loss;
}

/// Analytic gradients from a backbone in precision T are compared, tensor by
/// tensor in relative L2 norm, against central differences of a double
/// precision copy. `samples_per_tensor` coordinates are probed per tensor.
template <typename T>
Outcome composite(const std::string& backbone, std::uint64_t seed, int batch, int samples_per_tensor, double eps = 1e-5) {
    auto model = build_backbone<T>(backbone, seed);
    auto ref = build_backbone<double>(backbone, seed);
    auto mp = model->parameters();
    auto rp = ref->parameters();
    for (std::size_t t = 0; t < mp.size(); ++t)
        for (std::size_t i = 0; i < mp[t].param->value.size(); ++i) rp[t].param->value.data[i] = static_cast<double>(mp[t].param->value.data[i]);

    const auto c = composite_case(batch, min_input_side(backbone), seed + 1);
    const auto head = LinearSoftmax::initialize(4, seed + 2);
    LinearSoftmax head_grad = head;
    std::fill(head_grad.weights.begin(), head_grad.weights.end(), 0.0);
    head_grad.bias = {0.0, 0.0};
    model->zero_grad();
    composite_loss(*model, head, c, &head_grad, true);

    Outcome out;
    std::vector<double> all_a, all_n;
    std::mt19937_64 rng(seed + 3);
    auto rel_l2 = [](const std::vector<double>& a, const std::vector<double>& n) {
        double d = 0, na = 0, nn = 0;
        for (std::size_t i = 0; i < a.size(); ++i) {
            d += (a[i] - n[i]) * (a[i] - n[i]);
            na += a[i] * a[i];
            nn += n[i] * n[i];
        }
        return std::sqrt(d) / std::max({std::sqrt(na), std::sqrt(nn), kNormFloor});
    };
    for (std::size_t t = 0; t < mp.size(); ++t) {
        const std::size_t size = mp[t].param->value.size();
        std::vector<std::size_t> idx;
        if (static_cast<int>(size) <= samples_per_tensor) {
            for (std::size_t i = 0; i < size; ++i) idx.push_back(i);
        } else {
            for (int k = 0; k < samples_per_tensor; ++k) idx.push_back(rng() % size);
        }
        std::vector<double> analytic, numeric;
        for (std::size_t i : idx) {
            double& v = rp[t].param->value.data[i];
            const double keep = v;
            v = keep + eps;
            const double up = composite_loss(*ref, head, c, nullptr, false);
            v = keep - eps;
            const double down = composite_loss(*ref, head, c, nullptr, false);
            v = keep;
            analytic.push_back(static_cast<double>(mp[t].param->grad.data[i]));
            numeric.push_back((up - down) / (2 * eps));
        }
        note(out, rel_l2(analytic, numeric), backbone + "." + mp[t].name);
        all_a.insert(all_a.end(), analytic.begin(), analytic.end());
        all_n.insert(all_n.end(), numeric.begin(), numeric.end());
    }
    std::vector<double> ha, hn;
    for (std::size_t j = 0; j < head.weights.size(); ++j) {
        auto f = [&](const std::vector<double>& w) {
            LinearSoftmax l = head;
            l.weights = w;
            return composite_loss(*ref, l, c, nullptr, false);
        };
        ha.push_back(head_grad.weights[j]);
        hn.push_back(oracle::central_difference(f, head.weights, j, eps));
    }
    note(out, rel_l2(ha, hn), backbone + ".head.weight");
    all_a.insert(all_a.end(), ha.begin(), ha.end());
    all_n.insert(all_n.end(), hn.begin(), hn.end());
    out.global_error = rel_l2(all_a, all_n);
    return out;
}

}  // namespace retfuse::gradcheck
