#include "profusion/metrics.hpp"
#include "profusion/errors.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>

namespace profusion {

std::string metric_name(MetricKind k) {
    return k == MetricKind::Accuracy ? "accuracy" : "mse";
}

double robust_auc(const RobustnessCurve& f, const RobustnessCurve& b) {
    if (f.metric != b.metric)
        throw InputError("robust_auc: metric kinds differ");
    if (f.sigma.size() != b.sigma.size() || f.sigma != b.sigma)
        throw InputError("robust_auc: sigma grids differ");
    size_t n = f.sigma.size();
    if (n < 2) throw InputError("robust_auc: need at least two grid points");
    if (f.value.size() != n || b.value.size() != n)
        throw InputError("robust_auc: curve length does not match grid");
    for (size_t i = 1; i < n; ++i)
        if (!(f.sigma[i] > f.sigma[i - 1]))
            throw InputError("robust_auc: grid must be strictly ascending");

    // integrate the advantage of f over b; flip for lower-better metrics so
    // positive always means f more robust
    double area = 0.0;
    for (size_t i = 0; i + 1 < n; ++i) {
        double g0 = f.value[i] - b.value[i];
        double g1 = f.value[i + 1] - b.value[i + 1];
        area += 0.5 * (g0 + g1) * (f.sigma[i + 1] - f.sigma[i]);
    }
    double tau = area / (f.sigma[n - 1] - f.sigma[0]);
    return higher_is_better(f.metric) ? tau : -tau;
}

std::vector<double> minmax_scale(const std::vector<double>& scores) {
    if (scores.size() < 2)
        throw InputError("minmax_scale: need at least two scores");
    double lo = *std::min_element(scores.begin(), scores.end());
    double hi = *std::max_element(scores.begin(), scores.end());
    std::vector<double> out(scores.size());
    if (lo == hi) {
        std::fprintf(stderr,
                     "warning: minmax_scale on all-equal scores, returning 0.5\n");
        std::fill(out.begin(), out.end(), 0.5);
        return out;
    }
    for (size_t i = 0; i < scores.size(); ++i)
        out[i] = (scores[i] - lo) / (hi - lo);
    return out;
}

std::pair<double, double> improvement_stats(const std::vector<TrialResult>& base,
                                            const std::vector<TrialResult>& pro) {
    if (base.empty() || base.size() != pro.size())
        throw InputError("improvement_stats: trial lists must be non-empty and equal length");
    std::map<std::uint64_t, const TrialResult*> by_seed;
    for (const auto& t : base) {
        if (!by_seed.emplace(t.seed, &t).second)
            throw InputError("improvement_stats: duplicate base seed");
    }
    MetricKind kind = base.front().metric;
    int improved = 0;
    double pct_sum = 0.0;
    for (const auto& p : pro) {
        auto it = by_seed.find(p.seed);
        if (it == by_seed.end())
            throw InputError("improvement_stats: pro trial seed has no base pair");
        const TrialResult& bt = *it->second;
        if (bt.metric != kind || p.metric != kind)
            throw InputError("improvement_stats: metric kinds differ");
        double bv = bt.test_metric, pv = p.test_metric;
        bool better = higher_is_better(kind) ? pv > bv : pv < bv;
        if (better) ++improved;
        double denom = std::fabs(bv);
        if (denom == 0.0)
            throw InputError("improvement_stats: zero base metric, percent undefined");
        double pct = higher_is_better(kind) ? 100.0 * (pv - bv) / denom
                                            : 100.0 * (bv - pv) / denom;
        pct_sum += pct;
    }
    double n = static_cast<double>(pro.size());
    return {improved / n, pct_sum / n};
}

} // namespace profusion
