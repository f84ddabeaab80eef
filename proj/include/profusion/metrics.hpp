#pragma once

#include <string>
#include <utility>
#include <vector>

namespace profusion {

enum class MetricKind { Accuracy, Mse };

inline bool higher_is_better(MetricKind k) { return k == MetricKind::Accuracy; }

std::string metric_name(MetricKind k);

// Performance as a function of test-time noise level.
struct RobustnessCurve {
    std::vector<double> sigma;
    std::vector<double> value;
    MetricKind metric = MetricKind::Accuracy;
};

// Normalized area between two performance-noise curves. Positive means f is
// more robust than b regardless of metric direction.
double robust_auc(const RobustnessCurve& f, const RobustnessCurve& b);

std::vector<double> minmax_scale(const std::vector<double>& scores);

struct TrialResult {
    std::string model_tag;
    std::uint64_t seed = 0;
    MetricKind metric = MetricKind::Accuracy;
    double train_metric = 0.0;
    double val_metric = 0.0;
    double test_metric = 0.0;
    std::vector<double> per_sigma; // aligned with the noise grid
    double tau = 0.0;
    double wall_ms = 0.0;
};

// Paired comparison over trials with matching seeds: fraction of pairs where
// pro strictly beats base, and mean percent improvement relative to base.
std::pair<double, double> improvement_stats(const std::vector<TrialResult>& base,
                                            const std::vector<TrialResult>& pro);

} // namespace profusion
