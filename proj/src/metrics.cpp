#include "vulsatd/metrics.hpp"

#include "vulsatd/error.hpp"

namespace vulsatd {

double f1_score(double precision, double recall) {
    const double denom = precision + recall;
    if (denom <= 0.0) return 0.0;
    return 2.0 * precision * recall / denom;
}

Metrics metrics_from_counts(std::uint64_t tp, std::uint64_t fp, std::uint64_t fn,
                            std::uint64_t tn) {
    Metrics m;
    m.tp = tp;
    m.fp = fp;
    m.fn = fn;
    m.tn = tn;
    m.precision = (tp + fp) ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
    m.recall = (tp + fn) ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0;
    m.f1 = f1_score(m.precision, m.recall);
    return m;
}

Metrics compute_metrics(const std::vector<bool>& predictions, const std::vector<bool>& labels) {
    if (predictions.size() != labels.size())
        throw InputError("compute_metrics: " + std::to_string(predictions.size()) +
                         " predictions vs " + std::to_string(labels.size()) + " labels");
    if (predictions.empty()) throw InputError("compute_metrics: empty input");
    std::uint64_t tp = 0, fp = 0, fn = 0, tn = 0;
    for (std::size_t i = 0; i < predictions.size(); ++i) {
        if (predictions[i] && labels[i]) ++tp;
        else if (predictions[i] && !labels[i]) ++fp;
        else if (!predictions[i] && labels[i]) ++fn;
        else ++tn;
    }
    return metrics_from_counts(tp, fp, fn, tn);
}

}  // namespace vulsatd
