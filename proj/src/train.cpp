#include "profusion/train.hpp"
#include "profusion/errors.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

namespace profusion {

ModelRef wrap(const BaseModel& m) {
    return {[&m](const std::vector<Var>& xs) { return m.forward(xs); }, m.params()};
}

ModelRef wrap(const ProFusionModel& m) {
    return {[&m](const std::vector<Var>& xs) { return m.forward(xs); }, m.params()};
}

ModelRef wrap(const IterativeModel& m) {
    return {[&m](const std::vector<Var>& xs) { return m.forward(xs); }, m.params()};
}

Mat take_rows(const Mat& m, const std::vector<int>& idx) {
    Mat out(static_cast<int>(idx.size()), m.cols);
    for (size_t r = 0; r < idx.size(); ++r)
        for (int c = 0; c < m.cols; ++c) out(static_cast<int>(r), c) = m(idx[r], c);
    return out;
}

std::vector<Var> dataset_inputs(const SyntheticDataset& ds) {
    return {make_const(ds.X1), make_const(ds.X2)};
}

namespace {

Var batch_loss(const ModelRef& model, const SyntheticDataset& ds,
               const std::vector<int>& idx) {
    std::vector<Var> xs{make_const(take_rows(ds.X1, idx)),
                        make_const(take_rows(ds.X2, idx))};
    Var pred = model.forward(xs);
    if (ds.kind == TaskKind::Classification) {
        std::vector<int> yb(idx.size());
        for (size_t i = 0; i < idx.size(); ++i)
            yb[i] = ds.labels[static_cast<size_t>(idx[i])];
        return softmax_cross_entropy(pred, yb);
    }
    return mse_loss(pred, make_const(take_rows(ds.Y, idx)));
}

std::vector<Mat> snapshot(const std::vector<Var>& params) {
    std::vector<Mat> vals;
    vals.reserve(params.size());
    for (const auto& p : params) vals.push_back(p->val);
    return vals;
}

void restore(const std::vector<Var>& params, const std::vector<Mat>& vals) {
    for (size_t i = 0; i < params.size(); ++i) params[i]->val = vals[i];
}

} // namespace

double dataset_loss(const ModelRef& model, const SyntheticDataset& ds) {
    std::vector<int> all(static_cast<size_t>(ds.size()));
    std::iota(all.begin(), all.end(), 0);
    return batch_loss(model, ds, all)->val(0, 0);
}

TrainHistory train(const ModelRef& model, const SyntheticDataset& train_set,
                   const SyntheticDataset& val_set, const TrainConfig& cfg) {
    if (cfg.epochs < 0) throw ConfigError("train: epochs must be >= 0");
    if (cfg.batch_size < 1) throw ConfigError("train: batch size must be >= 1");
    if (!(cfg.lr > 0.0)) throw ConfigError("train: lr must be positive");
    if (train_set.kind != val_set.kind)
        throw InputError("train: train/val task kinds differ");

    TrainHistory hist;
    if (cfg.epochs == 0) return hist;

    Optimizer opt(cfg.opt, model.params, cfg.lr);
    Rng shuffle_rng(cfg.seed);
    int n = train_set.size();
    std::vector<int> order(static_cast<size_t>(n));
    std::iota(order.begin(), order.end(), 0);

    std::vector<Mat> best_params = snapshot(model.params);
    double best_val = std::numeric_limits<double>::infinity();
    int best_epoch = -1;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        // Fisher-Yates with the run's own stream keeps epochs reproducible
        for (int i = n - 1; i > 0; --i) {
            int j = static_cast<int>(shuffle_rng.below(static_cast<std::uint64_t>(i + 1)));
            std::swap(order[static_cast<size_t>(i)], order[static_cast<size_t>(j)]);
        }
        double loss_sum = 0.0;
        int batches = 0;
        for (int start = 0; start < n; start += cfg.batch_size) {
            int end = std::min(n, start + cfg.batch_size);
            std::vector<int> idx(order.begin() + start, order.begin() + end);
            opt.zero_grad();
            Var loss = batch_loss(model, train_set, idx);
            double lv = loss->val(0, 0);
            if (!std::isfinite(lv)) {
                std::ostringstream msg;
                msg << "train: non-finite loss at epoch " << epoch << " with lr " << cfg.lr;
                throw TrainingError(msg.str());
            }
            backward(loss);
            opt.step();
            loss_sum += lv;
            ++batches;
        }
        double vl = dataset_loss(model, val_set);
        if (!std::isfinite(vl)) {
            std::ostringstream msg;
            msg << "train: non-finite validation loss at epoch " << epoch << " with lr "
                << cfg.lr;
            throw TrainingError(msg.str());
        }
        hist.train_loss.push_back(loss_sum / batches);
        hist.val_loss.push_back(vl);
        if (vl < best_val) {
            best_val = vl;
            best_epoch = epoch;
            best_params = snapshot(model.params);
        } else if (cfg.patience > 0 && epoch - best_epoch >= cfg.patience) {
            break;
        }
    }
    restore(model.params, best_params);
    hist.best_epoch = best_epoch;
    hist.best_val = best_val;
    return hist;
}

double evaluate(const ModelRef& model, const SyntheticDataset& ds, MetricKind metric) {
    if (metric == MetricKind::Accuracy && ds.kind != TaskKind::Classification)
        throw InputError("evaluate: accuracy needs a classification dataset");
    if (metric == MetricKind::Mse && ds.kind != TaskKind::Regression)
        throw InputError("evaluate: mse needs a regression dataset");
    Var pred = model.forward(dataset_inputs(ds));
    const Mat& p = pred->val;
    if (metric == MetricKind::Accuracy) {
        int correct = 0;
        for (int r = 0; r < p.rows; ++r) {
            int arg = 0;
            for (int c = 1; c < p.cols; ++c)
                if (p(r, c) > p(r, arg)) arg = c;
            if (arg == ds.labels[static_cast<size_t>(r)]) ++correct;
        }
        return static_cast<double>(correct) / p.rows;
    }
    if (!p.same_shape(ds.Y)) throw DimensionError("evaluate: prediction shape mismatch");
    double s = 0.0;
    for (size_t i = 0; i < p.a.size(); ++i) {
        double d = p.a[i] - ds.Y.a[i];
        s += d * d;
    }
    return s / static_cast<double>(p.a.size());
}

double fit_linear_probe(const Mat& train_x, const std::vector<int>& train_y,
                        const Mat& test_x, const std::vector<int>& test_y,
                        int num_classes) {
    if (train_x.rows != static_cast<int>(train_y.size()))
        throw InputError("fit_linear_probe: train size mismatch");
    if (test_x.rows != static_cast<int>(test_y.size()))
        throw InputError("fit_linear_probe: test size mismatch");
    if (train_x.cols != test_x.cols)
        throw DimensionError("fit_linear_probe: feature dims differ");

    // zero init keeps the convex fit deterministic
    Var W = make_param(Mat(train_x.cols, num_classes));
    Var b = make_param(Mat(1, num_classes));
    Optimizer opt(OptKind::SgdMomentum, {W, b}, 0.05);
    Var x = make_const(train_x);
    for (int epoch = 0; epoch < 200; ++epoch) {
        opt.zero_grad();
        Var loss = softmax_cross_entropy(add_rowvec(matmul(x, W), b), train_y);
        backward(loss);
        opt.step();
    }
    Var scores = add_rowvec(matmul(make_const(test_x), W), b);
    const Mat& s = scores->val;
    int correct = 0;
    for (int r = 0; r < s.rows; ++r) {
        int arg = 0;
        for (int c = 1; c < s.cols; ++c)
            if (s(r, c) > s(r, arg)) arg = c;
        if (arg == test_y[static_cast<size_t>(r)]) ++correct;
    }
    return static_cast<double>(correct) / std::max(1, s.rows);
}

ProbeResult probe(const ProFusionModel& model, const SyntheticDataset& train_set,
                  const SyntheticDataset& test_set, const std::vector<int>& steps) {
    if (train_set.kind != TaskKind::Classification ||
        test_set.kind != TaskKind::Classification)
        throw InputError("probe: needs classification datasets");
    if (steps.empty()) throw InputError("probe: steps list is empty");
    for (int t : steps)
        if (t < 1 || t > model.cfg.R)
            throw InputError("probe: step outside [1, R]");

    size_t k = model.base.encoders.size();
    ProbeResult res;
    res.steps = steps;
    res.acc.assign(k, std::vector<double>(steps.size(), 0.0));
    std::vector<Mat> train_xs{train_set.X1, train_set.X2};
    std::vector<Mat> test_xs{test_set.X1, test_set.X2};
    int C = train_set.num_classes;
    for (size_t si = 0; si < steps.size(); ++si) {
        auto rep_tr = unimodal_representations(model, train_xs, steps[si]);
        auto rep_te = unimodal_representations(model, test_xs, steps[si]);
        for (size_t m = 0; m < k; ++m)
            res.acc[m][si] = fit_linear_probe(rep_tr[m], train_set.labels, rep_te[m],
                                              test_set.labels, C);
    }
    return res;
}

} // namespace profusion
