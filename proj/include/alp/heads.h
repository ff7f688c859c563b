#pragma once

#include <string>
#include <vector>

#include "alp/nn.h"

namespace alp::heads {

// Per-class confusion counts for multi-label evaluation.
// P_c = TP_c + FN_c, N_c = TN_c + FP_c.
struct ConfusionCounts {
  int n_classes = 0;
  std::vector<long> tp, fp, tn, fn;

  explicit ConfusionCounts(int classes)
      : n_classes(classes), tp(size_t(classes), 0), fp(size_t(classes), 0),
        tn(size_t(classes), 0), fn(size_t(classes), 0) {}

  void add(const std::vector<int>& labels, const std::vector<int>& preds);
  void merge(const ConfusionCounts& other);
  long positives(int c) const { return tp[size_t(c)] + fn[size_t(c)]; }
  long negatives(int c) const { return tn[size_t(c)] + fp[size_t(c)]; }
  long samples() const { return n_classes ? tp[0] + fp[0] + tn[0] + fn[0] : 0; }
};

struct Metrics {
  double weighted_accuracy = 0.0;  // mean over classes of (TP/P + TN/N)/2
  double accuracy = 0.0;           // mean over classes of (TP+TN)/(P+N)
  double f1_micro = 0.0;
  // classes where P_c or N_c was zero; their defined ratio alone was used
  std::vector<int> degenerate_classes;
};

Metrics compute_metrics(const ConfusionCounts& counts);

// sigmoid(z) >= threshold, ties predict positive
std::vector<int> predict(const std::vector<double>& logits, double threshold = 0.5);

// Two-layer MLP head on the [CLS] state: d_model -> 64 -> n_classes, GeLU
// hidden activation. Logits out; the sigmoid lives in the loss / predict.
template <class S>
struct EmotionHeadT {
  static constexpr int kHidden = 64;
  nncore::LinearT<S> fc1, fc2;
  int n_classes = 0;

  EmotionHeadT() = default;
  EmotionHeadT(nncore::ParamStoreT<S>& store, const std::string& prefix, int d_model, int classes,
               Rng& rng)
      : fc1(store, prefix + ".fc1", d_model, kHidden, rng),
        fc2(store, prefix + ".fc2", kHidden, classes, rng),
        n_classes(classes) {}

  nncore::VarT<S> forward(nncore::TapeT<S>& tape, nncore::VarT<S> cls_state) const {
    if (cls_state.cols() != fc1.w->value.rows())
      throw std::invalid_argument("emotion head: input width mismatch");
    return fc2.forward(tape, gelu(fc1.forward(tape, cls_state)));
  }
};

// Mean over classes of the stabilized binary cross entropy; labels in {0,1}.
template <class S>
nncore::VarT<S> bce_loss(nncore::VarT<S> logits, const nncore::TensorT<S>& labels) {
  return nncore::bce_mean(logits, labels);
}

}  // namespace alp::heads
