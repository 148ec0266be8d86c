#include "retfuse/training.hpp"

#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>

#include "retfuse/error.hpp"

namespace retfuse {

void validate(const TrainConfig& cfg) {
    if (!(cfg.plateau_factor > 0.0 && cfg.plateau_factor < 1.0)) throw Error("train config: plateau_factor must be in (0,1)");
    if (cfg.plateau_patience < 1 || cfg.early_stop_patience < 1) throw Error("train config: patience values must be >= 1");
    if (!(cfg.min_lr > 0.0 && cfg.initial_lr > cfg.min_lr)) throw Error("train config: need initial_lr > min_lr > 0");
    if (cfg.max_epochs < 0) throw Error("train config: max_epochs must be >= 0");
    if (cfg.batch_size < 1) throw Error("train config: batch_size must be >= 1");
    if (!(cfg.weight_decay >= 0.0)) throw Error("train config: weight_decay must be >= 0");
    if (!(cfg.plateau_threshold >= 0.0 && cfg.plateau_threshold < 1.0)) throw Error("train config: plateau_threshold must be in [0,1)");
}

double cross_entropy(std::span<const double> logits, int label) {
    if (label < 0 || static_cast<std::size_t>(label) >= logits.size()) throw Error("cross_entropy: label out of range");
    for (double z : logits)
        if (!std::isfinite(z)) throw Error("cross_entropy: non-finite logits");
    const double mx = *std::max_element(logits.begin(), logits.end());
    double sum = 0.0;
    for (double z : logits) sum += std::exp(z - mx);
    return mx + std::log(sum) - logits[static_cast<std::size_t>(label)];
}

template <typename T>
void sgd_update(std::span<T> params, std::span<const T> grads, double lr, double weight_decay) {
    if (params.size() != grads.size()) throw Error("sgd_update: parameter/gradient shape mismatch");
    const T step = static_cast<T>(lr);
    const T wd = static_cast<T>(weight_decay);
    for (std::size_t i = 0; i < params.size(); ++i) params[i] -= step * (grads[i] + wd * params[i]);
}

template void sgd_update(std::span<float>, std::span<const float>, double, double);
template void sgd_update(std::span<double>, std::span<const double>, double, double);

PlateauScheduler::PlateauScheduler(const TrainConfig& cfg)
    : initial_(cfg.initial_lr),
      factor_(cfg.plateau_factor),
      threshold_(cfg.plateau_threshold),
      min_lr_(cfg.min_lr),
      patience_(cfg.plateau_patience),
      lr_(cfg.initial_lr) {}

double PlateauScheduler::step(double epoch_loss) {
    if (epoch_loss < best_ * (1.0 - threshold_)) {
        best_ = epoch_loss;
        stalled_ = 0;
        return lr_;
    }
    if (++stalled_ >= patience_) {
        stalled_ = 0;
        if (lr_ > min_lr_) {
            ++reductions_;
            lr_ = std::max(initial_ * std::pow(factor_, reductions_), min_lr_);
        }
    }
    return lr_;
}

bool EarlyStopping::step(double epoch_loss) {
    if (epoch_loss < best_ * (1.0 - threshold_)) {
        best_ = epoch_loss;
        stalled_ = 0;
        return false;
    }
    return ++stalled_ >= patience_;
}

template <typename T>
EpochTrace train_loop(Objective<T>& objective, const TrainConfig& cfg) {
    validate(cfg);
    const std::size_t n = objective.size();
    if (n == 0) throw Error("train_loop: empty dataset");
    bool seen[2] = {false, false};
    for (std::size_t i = 0; i < n; ++i) seen[objective.label(i) == 1] = true;
    if (!seen[0] || !seen[1]) throw Error("degenerate training set: only one class present");

    EpochTrace trace;
    if (cfg.max_epochs == 0) return trace;

    auto params = objective.parameters();
    auto buffers = objective.buffers();
    auto snapshot = [&] {
        std::vector<std::vector<T>> state;
        for (auto& p : params) state.push_back(p.param->value.data);
        for (auto& b : buffers) state.push_back(b.tensor->data);
        return state;
    };

    std::mt19937_64 rng(cfg.seed);
    PlateauScheduler scheduler(cfg);
    EarlyStopping stopper(cfg);
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    double best_loss = std::numeric_limits<double>::infinity();
    std::vector<std::vector<T>> best_state = snapshot();

    for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        const double lr = scheduler.lr();
        std::shuffle(order.begin(), order.end(), rng);
        double loss_sum = 0.0;
        std::size_t correct = 0;
        for (std::size_t start = 0; start < n; start += static_cast<std::size_t>(cfg.batch_size)) {
            const std::size_t stop = std::min(n, start + static_cast<std::size_t>(cfg.batch_size));
            for (auto& p : params) std::fill(p.param->grad.data.begin(), p.param->grad.data.end(), T(0));
            const auto r = objective.run_batch(std::span<const std::size_t>(order).subspan(start, stop - start), rng);
            loss_sum += r.loss_sum;
            correct += r.correct;
            for (auto& p : params)
                sgd_update<T>(std::span<T>(p.param->value.data), std::span<const T>(p.param->grad.data), lr, cfg.weight_decay);
        }
        const double epoch_loss = loss_sum / static_cast<double>(n);
        if (!std::isfinite(epoch_loss)) throw Error("train_loop: loss diverged at epoch " + std::to_string(epoch));
        const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        trace.push_back({epoch, epoch_loss, static_cast<double>(correct) / static_cast<double>(n), lr, seconds});

        if (epoch_loss < best_loss) {
            best_loss = epoch_loss;
            best_state = snapshot();
        }
        scheduler.step(epoch_loss);
        if (stopper.step(epoch_loss)) break;
    }

    std::size_t k = 0;
    for (auto& p : params) p.param->value.data = best_state[k++];
    for (auto& b : buffers) b.tensor->data = best_state[k++];
    return trace;
}

template EpochTrace train_loop(Objective<float>&, const TrainConfig&);
template EpochTrace train_loop(Objective<double>&, const TrainConfig&);

void write_trace_jsonl(const std::filesystem::path& path, const EpochTrace& trace) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write trace " + path.string());
    for (const auto& r : trace) {
        const nlohmann::json j = {{"epoch", r.epoch}, {"loss", r.loss}, {"acc", r.accuracy}, {"lr", r.lr}, {"seconds", r.seconds}};
        out << j.dump() << '\n';
    }
}

EpochTrace read_trace_jsonl(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot read trace " + path.string());
    EpochTrace trace;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto j = nlohmann::json::parse(line);
        trace.push_back({j.at("epoch").get<int>(), j.at("loss").get<double>(), j.at("acc").get<double>(), j.at("lr").get<double>(),
                         j.value("seconds", 0.0)});
    }
    return trace;
}

}  // namespace retfuse
