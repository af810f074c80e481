#pragma once

#include <cmath>
#include <vector>

#include "eviadapt/autodiff.hpp"

namespace eviadapt {

/// Adam over a fixed list of parameters. Consumes and clears their gradients.
class Adam {
 public:
  Adam(std::vector<ad::Parameter*> params, double lr, double beta1 = 0.9, double beta2 = 0.999,
       double eps = 1e-8)
      : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
    if (!(lr > 0)) throw UsageError("Adam learning rate must be positive");
    for (auto* p : params_) {
      m_.emplace_back(p->value.rows(), p->value.cols());
      v_.emplace_back(p->value.rows(), p->value.cols());
    }
  }

  void zero_grad() {
    for (auto* p : params_) p->zero_grad();
  }

  void step() {
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (std::size_t k = 0; k < params_.size(); ++k) {
      ad::Parameter& p = *params_[k];
      if (!p.grad.same_shape(p.value)) continue;  // untouched this step
      Matrix& m = m_[k];
      Matrix& v = v_[k];
      for (std::size_t i = 0; i < p.value.size(); ++i) {
        const double g = p.grad[i];
        m[i] = beta1_ * m[i] + (1.0 - beta1_) * g;
        v[i] = beta2_ * v[i] + (1.0 - beta2_) * g * g;
        p.value[i] -= lr_ * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_);
      }
    }
    zero_grad();
  }

  long steps() const { return t_; }

 private:
  std::vector<ad::Parameter*> params_;
  std::vector<Matrix> m_, v_;
  double lr_, beta1_, beta2_, eps_;
  long t_ = 0;
};

}  // namespace eviadapt
