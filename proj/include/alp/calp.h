#pragma once

#include <string>
#include <vector>

#include "alp/features.h"
#include "alp/nn.h"

namespace alp::calp {

struct CalpConfig {
  double tau = 0.1;
  double alpha = 0.25;
  int d_shared = 128;
  // Eq-as-printed excludes the positive pair from the denominator; the
  // conventional form includes it.
  bool include_positive = false;

  void validate() const {
    if (!(tau > 0)) throw std::invalid_argument("calp: tau must be positive");
    if (alpha < 0) throw std::invalid_argument("calp: alpha must be non-negative");
  }
};

// Shared-space projections. Plain matrices without bias: embeddings are
// L2-normalized right after, where a bias adds nothing.
template <class S>
struct CalpProjT {
  nncore::ParamT<S>* audio_w = nullptr;  // [d_a x d_shared]
  nncore::ParamT<S>* lang_w = nullptr;   // [d_model x d_shared]

  CalpProjT() = default;
  CalpProjT(nncore::ParamStoreT<S>& store, const std::string& prefix, int d_a, int d_model,
            int d_shared, Rng& rng) {
    audio_w = &store.create(prefix + ".audio_proj", {d_a, d_shared});
    audio_w->value = nncore::TensorT<S>::randn(audio_w->value.shape, rng, 1.0 / std::sqrt(double(d_a)));
    lang_w = &store.create(prefix + ".lang_proj", {d_model, d_shared});
    lang_w->value =
        nncore::TensorT<S>::randn(lang_w->value.shape, rng, 1.0 / std::sqrt(double(d_model)));
  }

  nncore::VarT<S> project_audio(nncore::TapeT<S>& tape, nncore::VarT<S> embeddings) const {
    return nncore::l2norm_rows(nncore::matmul(embeddings, nncore::leaf_param(tape, *audio_w)));
  }
  nncore::VarT<S> project_language(nncore::TapeT<S>& tape, nncore::VarT<S> pooled) const {
    return nncore::l2norm_rows(nncore::matmul(pooled, nncore::leaf_param(tape, *lang_w)));
  }
};

// One training example: an acoustic block, the block immediately after it
// (consecutive start frames), and the full utterance transcript.
struct CalpTriple {
  std::string utterance_id;
  features::AcousticBlock a_t;
  features::AcousticBlock a_t1;
  std::vector<int> token_ids;
};

struct CalpSource {
  std::string utterance_id;
  const std::vector<features::AcousticBlock>* blocks = nullptr;
  const std::vector<int>* token_ids = nullptr;
};

// M distinct utterances, one consecutive-pair triple each, pair chosen
// uniformly among the utterance's consecutive block pairs.
std::vector<CalpTriple> sample_triples(const std::vector<CalpSource>& sources, int batch_size,
                                       Rng& rng);

// Projected unit-norm embeddings for a minibatch; u_t / u_t1 audio, v text.
template <class S>
struct CalpBatchT {
  std::vector<std::string> utterance_ids;
  nncore::TensorT<S> u_t, u_t1, v;  // each [M x d_shared], unit rows

  int64_t size() const { return u_t.rows(); }

  void validate() const {
    if (u_t.rows() < 2) throw std::invalid_argument("calp batch: need M >= 2");
    if (!u_t.same_shape(u_t1) || !u_t.same_shape(v))
      throw std::invalid_argument("calp batch: embedding shape mismatch");
    for (size_t i = 0; i < utterance_ids.size(); ++i)
      for (size_t j = i + 1; j < utterance_ids.size(); ++j)
        if (utterance_ids[i] == utterance_ids[j])
          throw std::invalid_argument("calp batch: duplicate utterance id " + utterance_ids[i]);
    for (const auto* m : {&u_t, &u_t1, &v})
      for (int64_t r = 0; r < m->rows(); ++r) {
        double n2 = 0;
        for (int64_t c = 0; c < m->cols(); ++c) n2 += double(m->at(r, c)) * double(m->at(r, c));
        if (std::fabs(n2 - 1.0) > 2e-6 * std::sqrt(double(m->cols())) + 1e-6)
          throw std::invalid_argument("calp batch: row " + std::to_string(r) + " is not unit norm");
      }
  }
};

// Composite contrastive objective on the tape:
//   mean_i [ -log exp(sim(u_t_i,u_t1_i)/tau) / sum_{j != i} exp(sim(u_t_i,u_t1_j)/tau)
//            - alpha log exp(sim(u_t_i,v_i)/tau) / sum_{j != i} exp(sim(u_t_i,v_j)/tau) ]
// Rows must already be unit-norm, so sim is a plain dot product.
template <class S>
nncore::VarT<S> calp_loss_var(nncore::TapeT<S>& tape, nncore::VarT<S> u_t, nncore::VarT<S> u_t1,
                              nncore::VarT<S> v, const CalpConfig& cfg) {
  using namespace nncore;
  cfg.validate();
  VarT<S> sim_audio = matmul(u_t, transpose(u_t1));
  VarT<S> terms = ntxent_rows(sim_audio, cfg.tau, cfg.include_positive);
  if (cfg.alpha != 0.0) {
    VarT<S> sim_lang = matmul(u_t, transpose(v));
    VarT<S> lang_terms = ntxent_rows(sim_lang, cfg.tau, cfg.include_positive);
    terms = add(terms, scale(lang_terms, cfg.alpha));
  }
  return mean_all(terms);
}

// Loss on frozen embeddings (validates the batch first).
template <class S>
double calp_loss(const CalpBatchT<S>& batch, const CalpConfig& cfg) {
  batch.validate();
  nncore::TapeT<S> tape;
  auto l = calp_loss_var(tape, nncore::leaf(tape, batch.u_t), nncore::leaf(tape, batch.u_t1),
                         nncore::leaf(tape, batch.v), cfg);
  return double(l.value().data[0]);
}

// Per-sample log-sum-exp bound on the composite loss:
//   (1/tau)[-alpha sim(u_t_i,v_i) - sim(u_t_i,u_t1_i)
//           + max_{j != i} sim(u_t_i,u_t1_j) + alpha max_{k != i} sim(u_t_i,v_k)] + 2 ln M
template <class S>
std::vector<double> calp_bound(const CalpBatchT<S>& batch, const CalpConfig& cfg) {
  batch.validate();
  cfg.validate();
  int64_t M = batch.size();
  int64_t d = batch.u_t.cols();
  auto dot = [&](const nncore::TensorT<S>& a, int64_t i, const nncore::TensorT<S>& b, int64_t j) {
    double acc = 0;
    for (int64_t c = 0; c < d; ++c) acc += double(a.at(i, c)) * double(b.at(j, c));
    return acc;
  };
  std::vector<double> bound(size_t(M), 0.0);
  for (int64_t i = 0; i < M; ++i) {
    double pos_audio = dot(batch.u_t, i, batch.u_t1, i);
    double pos_lang = dot(batch.u_t, i, batch.v, i);
    double max_audio = -1e300, max_lang = -1e300;
    for (int64_t j = 0; j < M; ++j) {
      if (j == i) continue;
      max_audio = std::max(max_audio, dot(batch.u_t, i, batch.u_t1, j));
      max_lang = std::max(max_lang, dot(batch.u_t, i, batch.v, j));
    }
    bound[size_t(i)] = (1.0 / cfg.tau) * (-cfg.alpha * pos_lang - pos_audio + max_audio +
                                          cfg.alpha * max_lang) +
                       2.0 * std::log(double(M));
  }
  return bound;
}

// Per-sample losses for bound checks / retrieval diagnostics.
template <class S>
std::vector<double> calp_loss_per_sample(const CalpBatchT<S>& batch, const CalpConfig& cfg) {
  batch.validate();
  nncore::TapeT<S> tape;
  using namespace nncore;
  VarT<S> u_t = leaf(tape, batch.u_t);
  VarT<S> terms = ntxent_rows(matmul(u_t, transpose(leaf(tape, batch.u_t1))), cfg.tau,
                              cfg.include_positive);
  VarT<S> lang = ntxent_rows(matmul(u_t, transpose(leaf(tape, batch.v))), cfg.tau,
                             cfg.include_positive);
  std::vector<double> out(size_t(batch.size()), 0.0);
  for (int64_t i = 0; i < batch.size(); ++i)
    out[size_t(i)] = double(terms.value().at(i, 0)) + cfg.alpha * double(lang.value().at(i, 0));
  return out;
}

// audio->text in-batch retrieval: fraction of rows whose best-matching text
// row is their own.
template <class S>
double retrieval_top1(const nncore::TensorT<S>& u_t, const nncore::TensorT<S>& v) {
  int64_t M = u_t.rows();
  int64_t hits = 0;
  for (int64_t i = 0; i < M; ++i) {
    int64_t best = 0;
    double best_sim = -1e300;
    for (int64_t j = 0; j < M; ++j) {
      double s = 0;
      for (int64_t c = 0; c < u_t.cols(); ++c) s += double(u_t.at(i, c)) * double(v.at(j, c));
      if (s > best_sim) {
        best_sim = s;
        best = j;
      }
    }
    hits += (best == i);
  }
  return double(hits) / double(M);
}

}  // namespace alp::calp
