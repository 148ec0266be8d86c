#pragma once

#include <cstddef>
#include <optional>
#include <vector>

namespace retfuse {

/// Binary confusion counts with diabetic (label 1) as the positive class.
struct MetricsReport {
    std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
    double accuracy = 0.0;
    std::optional<double> precision;  // absent when tp + fp == 0
    std::optional<double> recall;     // absent when tp + fn == 0

    std::size_t total() const { return tp + fp + tn + fn; }
};

MetricsReport metrics_from_counts(std::size_t tp, std::size_t fp, std::size_t tn, std::size_t fn);
MetricsReport compute_metrics(const std::vector<int>& predictions, const std::vector<int>& labels);

}  // namespace retfuse
