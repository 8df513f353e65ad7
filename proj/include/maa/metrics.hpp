#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "maa/matrix.hpp"

namespace maa {

struct MetricsReport {
    std::vector<double> per_class_ap;   // NaN for classes with no positives
    std::vector<int> excluded_classes;  // classes with zero positives
    double map = 0.0;
    double accuracy = 0.0;
    double mean_loss = 0.0;
    std::int64_t n_samples = 0;

    // Canonical key-sorted text document; extra entries (e.g. the resolved
    // config) may be merged in by the caller before sorting.
    std::string to_text(const std::vector<std::pair<std::string, std::string>>& extra = {}) const;
};

// Non-interpolated average precision over the full ranking. Sorting is by
// descending score with ties broken by the original index (stable).
// AP = (1/P) * sum over positive ranks k of precision@k.
double average_precision(std::span<const double> scores, std::span<const std::uint8_t> positives);

// Per-class AP from softmax probability columns, accuracy from argmax
// (ties to the lowest class index), mAP over classes with >= 1 positive.
template <typename T>
MetricsReport map_from_logits(const Matrix<T>& logits, std::span<const std::int32_t> labels);

void append_metrics_csv(const std::string& path, int epoch, const std::string& split,
                        double loss, double accuracy, double map);

}  // namespace maa
