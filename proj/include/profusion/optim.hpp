#pragma once

#include "profusion/tensor.hpp"

#include <cstdint>
#include <vector>

namespace profusion {

enum class OptKind { SgdMomentum, Adam };

// First-order optimizer over a fixed parameter list. Holds per-parameter
// moment buffers; step order and arithmetic are deterministic.
class Optimizer {
  public:
    Optimizer(OptKind kind, std::vector<Var> params, double lr);

    // Hyperparameters are the standard published defaults; callers may adjust
    // before the first step.
    double momentum = 0.9;       // SGD-momentum
    double beta1 = 0.9;          // Adam
    double beta2 = 0.999;        // Adam
    double eps = 1e-8;           // Adam

    void zero_grad();
    void step();

    OptKind kind() const { return kind_; }
    double lr() const { return lr_; }
    std::int64_t step_count() const { return step_count_; }

  private:
    OptKind kind_;
    double lr_;
    std::int64_t step_count_ = 0;
    std::vector<Var> params_;
    std::vector<Mat> m_; // first moments / velocity
    std::vector<Mat> v_; // second moments (Adam)
};

} // namespace profusion
