#include "retfuse/metrics.hpp"

#include "retfuse/error.hpp"

namespace retfuse {

MetricsReport metrics_from_counts(std::size_t tp, std::size_t fp, std::size_t tn, std::size_t fn) {
    MetricsReport m{tp, fp, tn, fn, 0.0, std::nullopt, std::nullopt};
    if (m.total() == 0) throw Error("metrics: no samples");
    m.accuracy = static_cast<double>(tp + tn) / static_cast<double>(m.total());
    if (tp + fp > 0) m.precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
    if (tp + fn > 0) m.recall = static_cast<double>(tp) / static_cast<double>(tp + fn);
    return m;
}

MetricsReport compute_metrics(const std::vector<int>& predictions, const std::vector<int>& labels) {
    if (predictions.size() != labels.size()) throw Error("compute_metrics: predictions and labels differ in length");
    if (labels.empty()) throw Error("compute_metrics: no samples");
    std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const bool pred = predictions[i] == 1, truth = labels[i] == 1;
        if (pred && truth) ++tp;
        else if (pred) ++fp;
        else if (truth) ++fn;
        else ++tn;
    }
    return metrics_from_counts(tp, fp, tn, fn);
}

}  // namespace retfuse
