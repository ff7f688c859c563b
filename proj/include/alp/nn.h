#pragma once

#include <string>
#include <vector>

#include "alp/graph.h"

namespace alp::nncore {

struct EncoderConfig {
  int n_layers = 2;
  int d_model = 128;
  int n_heads = 2;
  int d_ff = 512;
  double dropout_rate = 0.1;
  int max_positions = 512;

  void validate() const {
    if (d_model <= 0 || n_heads <= 0 || d_ff <= 0 || n_layers < 0)
      throw std::invalid_argument("encoder config: dimensions must be positive");
    if (d_model % n_heads != 0)
      throw std::invalid_argument("encoder config: d_model must be divisible by n_heads");
    if (!(dropout_rate >= 0.0 && dropout_rate < 1.0))
      throw std::invalid_argument("encoder config: dropout_rate must be in [0,1)");
  }
};

constexpr double kInitSigma = 0.02;

// y = x W + b, with W [d_in x d_out]
template <class S>
struct LinearT {
  ParamT<S>* w = nullptr;
  ParamT<S>* b = nullptr;

  LinearT() = default;
  LinearT(ParamStoreT<S>& store, const std::string& prefix, int64_t d_in, int64_t d_out,
          Rng& rng) {
    w = &store.create(prefix + ".w", {d_in, d_out});
    b = &store.create(prefix + ".b", {1, d_out});
    w->value = TensorT<S>::randn({d_in, d_out}, rng, kInitSigma);
    w->grad = TensorT<S>(d_in, d_out);
  }

  VarT<S> forward(TapeT<S>& t, VarT<S> x) const {
    return add_rowvec(matmul(x, leaf_param(t, *w)), leaf_param(t, *b));
  }
};

template <class S>
struct LayerNormT {
  ParamT<S>* gamma = nullptr;
  ParamT<S>* beta = nullptr;

  LayerNormT() = default;
  LayerNormT(ParamStoreT<S>& store, const std::string& prefix, int64_t d) {
    gamma = &store.create(prefix + ".gamma", {1, d});
    beta = &store.create(prefix + ".beta", {1, d});
    gamma->value.fill(S(1));
  }

  VarT<S> forward(TapeT<S>& t, VarT<S> x) const {
    return layernorm_rows(x, leaf_param(t, *gamma), leaf_param(t, *beta));
  }
};

// Post-layer-norm transformer encoder stack (original BERT block ordering:
// x = LN(x + Attn(x)); x = LN(x + FF(x))).
template <class S>
struct EncoderT {
  struct Layer {
    LinearT<S> wq, wk, wv, wo, ff1, ff2;
    LayerNormT<S> ln_attn, ln_ff;
  };

  EncoderConfig cfg;
  std::vector<Layer> layers;

  EncoderT() = default;
  EncoderT(ParamStoreT<S>& store, const std::string& prefix, EncoderConfig c, Rng& rng)
      : cfg(c) {
    cfg.validate();
    for (int l = 0; l < cfg.n_layers; ++l) {
      std::string lp = prefix + ".layer" + std::to_string(l);
      Layer lay;
      lay.wq = LinearT<S>(store, lp + ".attn.q", cfg.d_model, cfg.d_model, rng);
      lay.wk = LinearT<S>(store, lp + ".attn.k", cfg.d_model, cfg.d_model, rng);
      lay.wv = LinearT<S>(store, lp + ".attn.v", cfg.d_model, cfg.d_model, rng);
      lay.wo = LinearT<S>(store, lp + ".attn.o", cfg.d_model, cfg.d_model, rng);
      lay.ln_attn = LayerNormT<S>(store, lp + ".attn.ln", cfg.d_model);
      lay.ff1 = LinearT<S>(store, lp + ".ff.1", cfg.d_model, cfg.d_ff, rng);
      lay.ff2 = LinearT<S>(store, lp + ".ff.2", cfg.d_ff, cfg.d_model, rng);
      lay.ln_ff = LayerNormT<S>(store, lp + ".ff.ln", cfg.d_model);
      layers.push_back(lay);
    }
  }

  // seq [S x d_model]; attn_mask[s] true = attendable. Masked positions never
  // receive attention weight from any query.
  VarT<S> forward(TapeT<S>& t, VarT<S> seq, const std::vector<uint8_t>& attn_mask) const {
    int64_t len = seq.rows();
    if (seq.cols() != cfg.d_model) throw std::invalid_argument("encoder: d_model mismatch");
    if (int64_t(attn_mask.size()) != len) throw std::invalid_argument("encoder: mask length mismatch");
    if (len > cfg.max_positions) throw std::invalid_argument("encoder: sequence exceeds max_positions");
    bool any = false;
    for (uint8_t m : attn_mask) any = any || (m != 0);
    if (!any) throw std::invalid_argument("encoder: all positions masked");

    TensorT<S> bias(1, len);
    for (int64_t s = 0; s < len; ++s) bias.at(0, s) = attn_mask[size_t(s)] ? S(0) : S(-1e9);
    VarT<S> bias_v = leaf(t, bias);

    int dh = cfg.d_model / cfg.n_heads;
    VarT<S> x = seq;
    for (const Layer& lay : layers) {
      VarT<S> q = lay.wq.forward(t, x);
      VarT<S> k = lay.wk.forward(t, x);
      VarT<S> v = lay.wv.forward(t, x);
      std::vector<VarT<S>> heads;
      for (int h = 0; h < cfg.n_heads; ++h) {
        VarT<S> qh = slice_cols(q, int64_t(h) * dh, dh);
        VarT<S> kh = slice_cols(k, int64_t(h) * dh, dh);
        VarT<S> vh = slice_cols(v, int64_t(h) * dh, dh);
        VarT<S> scores = scale(matmul(qh, transpose(kh)), 1.0 / std::sqrt(double(dh)));
        VarT<S> probs = softmax_rows(add_rowvec(scores, bias_v));
        probs = dropout(probs, cfg.dropout_rate);
        heads.push_back(matmul(probs, vh));
      }
      VarT<S> attn = lay.wo.forward(t, concat_cols(heads));
      attn = dropout(attn, cfg.dropout_rate);
      x = lay.ln_attn.forward(t, add(x, attn));
      VarT<S> ff = lay.ff2.forward(t, gelu(lay.ff1.forward(t, x)));
      ff = dropout(ff, cfg.dropout_rate);
      x = lay.ln_ff.forward(t, add(x, ff));
    }
    return x;
  }
};

// Batched convenience entry matching the engine contract: inputs [B x S x d],
// mask [B x S]. Sequences are processed independently.
template <class S>
TensorT<S> encoder_forward(const EncoderT<S>& enc, const TensorT<S>& inputs,
                           const std::vector<std::vector<uint8_t>>& attn_mask) {
  if (inputs.shape.size() != 3) throw std::invalid_argument("encoder_forward: expect [B x S x d]");
  int64_t B = inputs.shape[0], L = inputs.shape[1], D = inputs.shape[2];
  if (int64_t(attn_mask.size()) != B) throw std::invalid_argument("encoder_forward: mask batch mismatch");
  TensorT<S> out(inputs.shape);
  for (int64_t b = 0; b < B; ++b) {
    TapeT<S> tape;
    TensorT<S> seq(L, D);
    std::copy(inputs.data.begin() + b * L * D, inputs.data.begin() + (b + 1) * L * D,
              seq.data.begin());
    VarT<S> y = enc.forward(tape, leaf(tape, std::move(seq)), attn_mask[size_t(b)]);
    std::copy(y.value().data.begin(), y.value().data.end(), out.data.begin() + b * L * D);
  }
  return out;
}

}  // namespace alp::nncore
