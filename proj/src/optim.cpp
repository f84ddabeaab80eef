#include "profusion/optim.hpp"

#include "profusion/errors.hpp"

#include <cmath>

namespace profusion {

Optimizer::Optimizer(OptKind kind, std::vector<Var> params, double lr)
    : kind_(kind), lr_(lr), params_(std::move(params)) {
    if (lr <= 0.0) throw InputError("optimizer: lr must be positive");
    for (const auto& p : params_) {
        if (!p->requires_grad)
            throw ContractError("optimizer: parameter without gradient tracking");
        m_.emplace_back(p->val.rows, p->val.cols);
        if (kind_ == OptKind::Adam) v_.emplace_back(p->val.rows, p->val.cols);
    }
}

void Optimizer::zero_grad() {
    for (auto& p : params_) p->grad.fill(0.0);
}

void Optimizer::step() {
    ++step_count_;
    if (kind_ == OptKind::SgdMomentum) {
        for (size_t i = 0; i < params_.size(); ++i) {
            Node& p = *params_[i];
            Mat& vel = m_[i];
            for (size_t j = 0; j < p.val.size(); ++j) {
                vel.a[j] = momentum * vel.a[j] + p.grad.a[j];
                p.val.a[j] -= lr_ * vel.a[j];
            }
        }
        return;
    }
    // Adam with bias correction.
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step_count_));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step_count_));
    for (size_t i = 0; i < params_.size(); ++i) {
        Node& p = *params_[i];
        Mat& m = m_[i];
        Mat& v = v_[i];
        for (size_t j = 0; j < p.val.size(); ++j) {
            const double g = p.grad.a[j];
            m.a[j] = beta1 * m.a[j] + (1.0 - beta1) * g;
            v.a[j] = beta2 * v.a[j] + (1.0 - beta2) * g * g;
            const double mhat = m.a[j] / bc1;
            const double vhat = v.a[j] / bc2;
            p.val.a[j] -= lr_ * mhat / (std::sqrt(vhat) + eps);
        }
    }
}

} // namespace profusion
