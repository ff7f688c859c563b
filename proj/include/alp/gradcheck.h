#pragma once

#include <cmath>
#include <functional>
#include <stdexcept>
#include <vector>

#include "alp/graph.h"

namespace alp::nncore {

// Central-difference verification of analytic gradients.
//
// loss_fn(with_grad): evaluates the loss on the current param values; when
// with_grad is set it must also accumulate analytic gradients into the params'
// grad buffers. Probes compare those gradients against
// (f(x+h) - f(x-h)) / 2h on randomly chosen scalar parameters and the result
// is the max of |a-n| / max(|a|,|n|,1e-8).
template <class S>
double grad_check(const std::function<double(bool with_grad)>& loss_fn,
                  std::vector<ParamT<S>*> params, int probe_count, double h, uint64_t seed) {
  if (params.empty()) throw std::invalid_argument("grad_check: no params");
  for (auto* p : params) p->grad.zero();
  double l_grad = loss_fn(true);
  double l_plain = loss_fn(false);
  if (l_grad != l_plain)
    throw std::runtime_error("grad_check: loss is not deterministic across evaluations");

  int64_t total = 0;
  for (auto* p : params) total += p->value.numel();
  if (total == 0) throw std::invalid_argument("grad_check: empty params");

  Rng rng(seed);
  double worst = 0;
  for (int probe = 0; probe < probe_count; ++probe) {
    int64_t flat = int64_t(rng.below(uint64_t(total)));
    ParamT<S>* target = nullptr;
    for (auto* p : params) {
      if (flat < p->value.numel()) {
        target = p;
        break;
      }
      flat -= p->value.numel();
    }
    S saved = target->value.data[size_t(flat)];
    target->value.data[size_t(flat)] = saved + S(h);
    double fp = loss_fn(false);
    target->value.data[size_t(flat)] = saved - S(h);
    double fm = loss_fn(false);
    target->value.data[size_t(flat)] = saved;
    double numeric = (fp - fm) / (2.0 * h);
    double analytic = double(target->grad.data[size_t(flat)]);
    double rel = std::fabs(analytic - numeric) /
                 std::max({std::fabs(analytic), std::fabs(numeric), 1e-8});
    worst = std::max(worst, rel);
  }
  return worst;
}

}  // namespace alp::nncore
