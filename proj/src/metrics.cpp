#include "alp/heads.h"

#include <cmath>
#include <stdexcept>

namespace alp::heads {

void ConfusionCounts::add(const std::vector<int>& labels, const std::vector<int>& preds) {
  if (int(labels.size()) != n_classes || int(preds.size()) != n_classes)
    throw std::invalid_argument("confusion counts: class count mismatch");
  for (int c = 0; c < n_classes; ++c) {
    int y = labels[size_t(c)], p = preds[size_t(c)];
    if ((y != 0 && y != 1) || (p != 0 && p != 1))
      throw std::invalid_argument("confusion counts: labels/preds must be binary");
    if (y == 1 && p == 1) ++tp[size_t(c)];
    if (y == 0 && p == 1) ++fp[size_t(c)];
    if (y == 0 && p == 0) ++tn[size_t(c)];
    if (y == 1 && p == 0) ++fn[size_t(c)];
  }
}

void ConfusionCounts::merge(const ConfusionCounts& other) {
  if (other.n_classes != n_classes)
    throw std::invalid_argument("confusion counts: merge class mismatch");
  for (int c = 0; c < n_classes; ++c) {
    tp[size_t(c)] += other.tp[size_t(c)];
    fp[size_t(c)] += other.fp[size_t(c)];
    tn[size_t(c)] += other.tn[size_t(c)];
    fn[size_t(c)] += other.fn[size_t(c)];
  }
}

Metrics compute_metrics(const ConfusionCounts& counts) {
  if (counts.n_classes == 0 || counts.samples() == 0)
    throw std::invalid_argument("compute_metrics: empty evaluation set");

  Metrics m;
  double tp_total = 0, tn_total = 0;
  for (int c = 0; c < counts.n_classes; ++c) {
    tp_total += double(counts.positives(c));
    tn_total += double(counts.negatives(c));
  }

  double wa_sum = 0, acc_sum = 0, f1_sum = 0;
  for (int c = 0; c < counts.n_classes; ++c) {
    double tp = double(counts.tp[size_t(c)]);
    double fp = double(counts.fp[size_t(c)]);
    double tn = double(counts.tn[size_t(c)]);
    double fn = double(counts.fn[size_t(c)]);
    double p = tp + fn, n = tn + fp;

    // A class missing positives or negatives in the split contributes its
    // defined recall ratio alone.
    if (p > 0 && n > 0) {
      wa_sum += 0.5 * (tp / p + tn / n);
    } else {
      m.degenerate_classes.push_back(c);
      if (p > 0) wa_sum += tp / p;
      if (n > 0) wa_sum += tn / n;
    }

    acc_sum += (tp + tn) / (p + n);

    double denom = tp + 0.5 * (fp + fn);
    double f1_c = denom > 0 ? tp / denom : 0.0;
    f1_sum += ((tp + tn) / (tp_total + tn_total)) * f1_c;
  }

  m.weighted_accuracy = wa_sum / double(counts.n_classes);
  m.accuracy = acc_sum / double(counts.n_classes);
  m.f1_micro = f1_sum;
  return m;
}

std::vector<int> predict(const std::vector<double>& logits, double threshold) {
  std::vector<int> out(logits.size());
  for (size_t c = 0; c < logits.size(); ++c) {
    double sig = 1.0 / (1.0 + std::exp(-logits[c]));
    out[c] = sig >= threshold ? 1 : 0;
  }
  return out;
}

}  // namespace alp::heads
