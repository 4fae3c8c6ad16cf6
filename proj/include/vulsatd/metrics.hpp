#pragma once

#include <cstdint>
#include <vector>

namespace vulsatd {

/// Binary-classification counts and the derived precision/recall/F1.
/// Degenerate denominators: precision = 0 when TP+FP = 0, recall = 0 when
/// TP+FN = 0, F1 = 0 when P+R = 0.
struct Metrics {
    std::uint64_t tp = 0;
    std::uint64_t fp = 0;
    std::uint64_t fn = 0;
    std::uint64_t tn = 0;
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
};

Metrics metrics_from_counts(std::uint64_t tp, std::uint64_t fp, std::uint64_t fn,
                            std::uint64_t tn);

/// F1 as the harmonic mean of precision and recall (0 when both are 0).
double f1_score(double precision, double recall);

Metrics compute_metrics(const std::vector<bool>& predictions, const std::vector<bool>& labels);

}  // namespace vulsatd
