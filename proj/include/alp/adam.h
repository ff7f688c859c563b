#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "alp/graph.h"

namespace alp::nncore {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Bias-corrected Adam over a fixed set of params. State is owned here so the
// same ParamStore can be trained by different stages with fresh state.
template <class S>
class AdamT {
 public:
  AdamT(std::vector<ParamT<S>*> params, AdamConfig cfg) : params_(std::move(params)), cfg_(cfg) {
    for (auto* p : params_) {
      m_.emplace_back(p->value.shape);
      v_.emplace_back(p->value.shape);
    }
  }

  void step() {
    ++t_;
    double bc1 = 1.0 - std::pow(cfg_.beta1, double(t_));
    double bc2 = 1.0 - std::pow(cfg_.beta2, double(t_));
    for (size_t i = 0; i < params_.size(); ++i) {
      ParamT<S>& p = *params_[i];
      if (!p.grad.all_finite())
        throw std::runtime_error("adam: non-finite gradient in " + p.name);
      auto& m = m_[i];
      auto& v = v_[i];
      for (size_t j = 0; j < p.value.data.size(); ++j) {
        double g = double(p.grad.data[j]);
        double mj = cfg_.beta1 * double(m.data[j]) + (1.0 - cfg_.beta1) * g;
        double vj = cfg_.beta2 * double(v.data[j]) + (1.0 - cfg_.beta2) * g * g;
        m.data[j] = S(mj);
        v.data[j] = S(vj);
        double mhat = mj / bc1;
        double vhat = vj / bc2;
        p.value.data[j] -= S(cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps));
      }
    }
  }

  void zero_grads() {
    for (auto* p : params_) p->grad.zero();
  }

  int64_t step_count() const { return t_; }
  const std::vector<ParamT<S>*>& params() const { return params_; }

 private:
  std::vector<ParamT<S>*> params_;
  AdamConfig cfg_;
  std::vector<TensorT<S>> m_, v_;
  int64_t t_ = 0;
};

}  // namespace alp::nncore
