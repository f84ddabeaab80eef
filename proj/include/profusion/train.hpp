#pragma once

#include "profusion/metrics.hpp"
#include "profusion/model.hpp"
#include "profusion/optim.hpp"
#include "profusion/synthetic.hpp"

#include <functional>
#include <vector>

namespace profusion {

struct TrainConfig {
    OptKind opt = OptKind::Adam;
    double lr = 1e-3;
    int epochs = 100;
    int batch_size = 128;
    std::uint64_t seed = 0;
    int patience = 0; // <= 0 disables early stopping
};

// Uniform handle over the model variants: a forward function plus the
// parameter list it closes over.
struct ModelRef {
    std::function<Var(const std::vector<Var>&)> forward;
    std::vector<Var> params;
};

ModelRef wrap(const BaseModel& m);
ModelRef wrap(const ProFusionModel& m);
ModelRef wrap(const IterativeModel& m);

struct TrainHistory {
    std::vector<double> train_loss; // mean batch loss per epoch
    std::vector<double> val_loss;   // full-set loss per epoch
    int best_epoch = -1;            // epoch whose parameters were restored
    double best_val = 0.0;
};

// Minibatch training with shuffling, early stopping on validation loss, and
// restoration of the best-validation parameters. Deterministic given cfg.seed.
TrainHistory train(const ModelRef& model, const SyntheticDataset& train_set,
                   const SyntheticDataset& val_set, const TrainConfig& cfg);

double evaluate(const ModelRef& model, const SyntheticDataset& ds, MetricKind metric);

// Mean loss of the model on a dataset (cross-entropy or mse by task kind).
double dataset_loss(const ModelRef& model, const SyntheticDataset& ds);

struct ProbeResult {
    std::vector<int> steps;
    std::vector<std::vector<double>> acc; // [modality][step index]
};

// Multinomial logistic regression on fixed features, zero-initialized and
// trained full-batch for a fixed budget so every probe has equal capacity.
double fit_linear_probe(const Mat& train_x, const std::vector<int>& train_y,
                        const Mat& test_x, const std::vector<int>& test_y,
                        int num_classes);

// Linear-probe accuracy of each modality's representation at each unroll step.
ProbeResult probe(const ProFusionModel& model, const SyntheticDataset& train_set,
                  const SyntheticDataset& test_set, const std::vector<int>& steps);

// Row-slicing helpers shared by the trainer and the experiment runners.
Mat take_rows(const Mat& m, const std::vector<int>& idx);
std::vector<Var> dataset_inputs(const SyntheticDataset& ds);

} // namespace profusion
