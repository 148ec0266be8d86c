#pragma once

#include <cstdint>
#include <filesystem>
#include <limits>
#include <random>
#include <span>
#include <vector>

#include "retfuse/nn.hpp"

namespace retfuse {

struct TrainConfig {
    double initial_lr = 0.01;
    double plateau_factor = 0.1;
    int plateau_patience = 3;
    double plateau_threshold = 1e-3;  // relative improvement that counts as progress
    double min_lr = 1e-5;
    int early_stop_patience = 10;
    int max_epochs = 100;
    int batch_size = 16;
    double weight_decay = 1e-4;
    std::uint64_t seed = 0;
};

void validate(const TrainConfig& cfg);

/// -log softmax(logits)[label] via log-sum-exp.
double cross_entropy(std::span<const double> logits, int label);

/// p <- p - lr * (g + weight_decay * p)
template <typename T>
void sgd_update(std::span<T> params, std::span<const T> grads, double lr, double weight_decay);

/// Reduce-on-plateau. The rate is always initial_lr * factor^k clamped to
/// min_lr, where k counts reductions so far.
class PlateauScheduler {
public:
    explicit PlateauScheduler(const TrainConfig& cfg);

    double lr() const { return lr_; }
    int reductions() const { return reductions_; }
    int stalled_epochs() const { return stalled_; }
    /// Feeds one epoch's loss and returns the rate for the next epoch.
    double step(double epoch_loss);

private:
    double initial_, factor_, threshold_, min_lr_;
    int patience_;
    double best_ = std::numeric_limits<double>::infinity();
    int stalled_ = 0;
    int reductions_ = 0;
    double lr_;
};

/// Early stopping on the same relative-improvement rule, with its own counter.
class EarlyStopping {
public:
    EarlyStopping(int patience, double threshold) : patience_(patience), threshold_(threshold) {}
    explicit EarlyStopping(const TrainConfig& cfg) : EarlyStopping(cfg.early_stop_patience, cfg.plateau_threshold) {}

    /// True once `patience` consecutive epochs brought no improvement.
    bool step(double epoch_loss);
    int stalled_epochs() const { return stalled_; }

private:
    int patience_;
    double threshold_;
    double best_ = std::numeric_limits<double>::infinity();
    int stalled_ = 0;
};

struct EpochRecord {
    int epoch = 0;
    double loss = 0.0;
    double accuracy = 0.0;
    double lr = 0.0;
    double seconds = 0.0;
};

using EpochTrace = std::vector<EpochRecord>;

struct BatchResult {
    double loss_sum = 0.0;
    std::size_t correct = 0;
};

/// A model bound to its training data. `run_batch` performs forward and
/// backward for the listed samples and leaves the gradient of the batch-mean
/// loss in the parameter grads (which the loop zeroes beforehand).
template <typename T>
class Objective {
public:
    virtual ~Objective() = default;
    virtual std::size_t size() const = 0;
    virtual int label(std::size_t index) const = 0;
    virtual std::vector<nn::ParamRef<T>> parameters() = 0;
    virtual std::vector<nn::BufferRef<T>> buffers() { return {}; }
    virtual BatchResult run_batch(std::span<const std::size_t> batch, std::mt19937_64& rng) = 0;
};

/// Seeded epoch loop: shuffle, minibatch SGD with weight decay, then the
/// plateau scheduler and early stopping on the mean training loss. On return
/// the objective's parameters (and buffers) hold the lowest-loss epoch's state.
template <typename T>
EpochTrace train_loop(Objective<T>& objective, const TrainConfig& cfg);

void write_trace_jsonl(const std::filesystem::path& path, const EpochTrace& trace);
EpochTrace read_trace_jsonl(const std::filesystem::path& path);

}  // namespace retfuse
