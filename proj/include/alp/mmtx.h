#pragma once

#include <string>
#include <vector>

#include "alp/corpus.h"
#include "alp/features.h"
#include "alp/nn.h"

namespace alp::mmtx {

struct MultimodalConfig {
  nncore::EncoderConfig encoder;
  int vocab_size = 0;
  int d_a = 128;
  static constexpr int kBlockValues =
      features::AcousticBlock::kFrames * features::AcousticBlock::kBands;  // MAM target width

  void validate() const {
    encoder.validate();
    if (vocab_size < 5) throw std::invalid_argument("mmtx: vocab must include the specials");
    if (d_a <= 0) throw std::invalid_argument("mmtx: d_a must be positive");
  }
};

// Assembled slot plan: [CLS] + lexical tokens, then ([SEP] + acoustic slots)
// when audio is present, then optional padding. Lexical position ids count
// the token index ([CLS] is 0); acoustic position ids restart at 0 and count
// block time order.
struct MultimodalInput {
  std::vector<int> token_stream;     // token id per slot, -1 for acoustic slots
  std::vector<int> position_ids;
  std::vector<int> modality_ids;     // 0 lexical, 1 acoustic
  std::vector<uint8_t> attention_mask;
  std::vector<int64_t> lexical_content_slots;  // actual tokens: no [CLS]/[SEP]/pad
  std::vector<int64_t> acoustic_slots;         // slot of acoustic token t
  int n_tokens = 0;
  int n_blocks = 0;

  int64_t n_slots() const { return int64_t(token_stream.size()); }
};

MultimodalInput assemble(const std::vector<int>& token_ids, int n_blocks, int max_positions,
                         int pad_to = 0);

struct MaskPlan {
  std::vector<int64_t> lexical_slots;          // slots replaced by [MASK]
  std::vector<int> lexical_targets;            // original token ids
  std::vector<int64_t> acoustic_indices;       // masked block indices, span-expanded, sorted
  std::vector<std::vector<float>> acoustic_targets;  // original 50x64 block values

  bool empty() const { return lexical_slots.empty() && acoustic_indices.empty(); }
};

struct MaskingConfig {
  double p_lex = 0.15;
  double p_audio = 0.10;
  int span = 3;  // span start plus the following span-1 positions
};

// Replaces selected lexical tokens with [MASK] in-place and returns the plan.
// Acoustic masking is recorded here and applied at the adapter input during
// the forward pass. [CLS]/[SEP] are never masked.
MaskPlan apply_masks(MultimodalInput& input, const std::vector<features::AcousticBlock>& blocks,
                     const MaskingConfig& cfg, Rng& rng);

// Multimodal transformer with MLM and MAM decoding heads. Heads follow the
// masked-LM shape: linear, GeLU, linear.
template <class S>
struct MultimodalT {
  MultimodalConfig cfg;
  nncore::ParamT<S>* token_table = nullptr;     // [V x d]
  nncore::ParamT<S>* pos_table = nullptr;       // [max_positions x d]
  nncore::ParamT<S>* modality_table = nullptr;  // [2 x d]
  nncore::LayerNormT<S> input_ln;
  nncore::LinearT<S> adapter;  // d_a -> d
  nncore::EncoderT<S> encoder;
  nncore::LinearT<S> mlm_hidden, mlm_out;
  nncore::LinearT<S> mam_hidden, mam_out;

  MultimodalT() = default;
  MultimodalT(nncore::ParamStoreT<S>& store, const std::string& prefix, MultimodalConfig c,
              Rng& rng)
      : cfg(c) {
    cfg.validate();
    int64_t d = cfg.encoder.d_model;
    token_table = &store.create(prefix + ".token_table", {cfg.vocab_size, d});
    token_table->value = nncore::TensorT<S>::randn(token_table->value.shape, rng, nncore::kInitSigma);
    pos_table = &store.create(prefix + ".pos_table", {cfg.encoder.max_positions, d});
    pos_table->value = nncore::TensorT<S>::randn(pos_table->value.shape, rng, nncore::kInitSigma);
    modality_table = &store.create(prefix + ".modality_table", {2, d});
    modality_table->value =
        nncore::TensorT<S>::randn(modality_table->value.shape, rng, nncore::kInitSigma);
    input_ln = nncore::LayerNormT<S>(store, prefix + ".input_ln", d);
    adapter = nncore::LinearT<S>(store, prefix + ".adapter", cfg.d_a, d, rng);
    encoder = nncore::EncoderT<S>(store, prefix + ".encoder", cfg.encoder, rng);
    mlm_hidden = nncore::LinearT<S>(store, prefix + ".mlm.hidden", d, d, rng);
    mlm_out = nncore::LinearT<S>(store, prefix + ".mlm.out", d, cfg.vocab_size, rng);
    mam_hidden = nncore::LinearT<S>(store, prefix + ".mam.hidden", d, d, rng);
    mam_out = nncore::LinearT<S>(store, prefix + ".mam.out", d, MultimodalConfig::kBlockValues, rng);
  }

  // acoustic_embeddings [n_blocks x d_a] (invalid Var allowed when n_blocks
  // is 0). masked_acoustic lists block indices whose content embedding is
  // zeroed at the adapter input. Per-slot input is content + position +
  // modality embedding, layer-normed, then the encoder stack.
  nncore::VarT<S> encode(nncore::TapeT<S>& tape, const MultimodalInput& input,
                         nncore::VarT<S> acoustic_embeddings,
                         const std::vector<int64_t>& masked_acoustic = {}) const {
    using namespace nncore;
    std::vector<VarT<S>> parts;
    std::vector<int64_t> lex_prefix_ids, pad_suffix_ids;
    int64_t slot = 0;
    for (; slot < input.n_slots() && input.token_stream[size_t(slot)] >= 0 &&
           input.modality_ids[size_t(slot)] == 0 && input.attention_mask[size_t(slot)];
         ++slot)
      lex_prefix_ids.push_back(input.token_stream[size_t(slot)]);
    if (!lex_prefix_ids.empty())
      parts.push_back(select_rows(leaf_param(tape, *token_table), lex_prefix_ids));

    if (input.n_blocks > 0) {
      if (!acoustic_embeddings.valid())
        throw std::invalid_argument("mmtx: acoustic embeddings required");
      if (acoustic_embeddings.rows() != input.n_blocks)
        throw std::invalid_argument("mmtx: acoustic embedding count mismatch");
      VarT<S> content = masked_acoustic.empty()
                            ? acoustic_embeddings
                            : zero_rows(acoustic_embeddings, masked_acoustic);
      parts.push_back(adapter.forward(tape, content));
      slot += input.n_blocks;
    }

    for (; slot < input.n_slots(); ++slot)
      pad_suffix_ids.push_back(input.token_stream[size_t(slot)]);
    if (!pad_suffix_ids.empty())
      parts.push_back(select_rows(leaf_param(tape, *token_table), pad_suffix_ids));

    VarT<S> content = parts.size() == 1 ? parts[0] : concat_rows(parts);
    std::vector<int64_t> pos_ids(input.position_ids.begin(), input.position_ids.end());
    std::vector<int64_t> mod_ids(input.modality_ids.begin(), input.modality_ids.end());
    VarT<S> x = add(content, select_rows(leaf_param(tape, *pos_table), pos_ids));
    x = add(x, select_rows(leaf_param(tape, *modality_table), mod_ids));
    x = input_ln.forward(tape, x);
    x = dropout(x, cfg.encoder.dropout_rate);
    return encoder.forward(tape, x, input.attention_mask);
  }

  nncore::VarT<S> mlm_logits(nncore::TapeT<S>& tape, nncore::VarT<S> hidden,
                             const std::vector<int64_t>& slots) const {
    auto h = nncore::select_rows(hidden, slots);
    return mlm_out.forward(tape, nncore::gelu(mlm_hidden.forward(tape, h)));
  }

  nncore::VarT<S> mam_decode(nncore::TapeT<S>& tape, nncore::VarT<S> hidden,
                             const std::vector<int64_t>& slots) const {
    auto h = nncore::select_rows(hidden, slots);
    return mam_out.forward(tape, nncore::gelu(mam_hidden.forward(tape, h)));
  }

  nncore::VarT<S> cls_state(nncore::VarT<S> hidden) const {
    return nncore::select_rows(hidden, {0});
  }

  // mean of the content-token hidden states (pads and specials excluded)
  nncore::VarT<S> pooled_text_state(nncore::TapeT<S>& tape, const MultimodalInput& input,
                                    nncore::VarT<S> hidden) const {
    (void)tape;
    if (input.lexical_content_slots.empty())
      throw std::invalid_argument("mmtx: cannot pool an empty token sequence");
    return nncore::mean_rows(nncore::select_rows(hidden, input.lexical_content_slots));
  }
};

// mean over masked positions of the elementwise squared error (equivalently
// the mean over all |K| x 3200 residual entries)
template <class S>
nncore::VarT<S> mam_loss(nncore::VarT<S> decoded, const nncore::TensorT<S>& originals) {
  if (decoded.rows() < 1) throw std::invalid_argument("mam_loss: need at least one masked block");
  return nncore::mse_vs(decoded, originals);
}

template <class S>
nncore::VarT<S> mlm_loss(nncore::VarT<S> logits, const std::vector<int>& target_ids) {
  if (logits.rows() < 1) throw std::invalid_argument("mlm_loss: need at least one masked token");
  std::vector<int64_t> t(target_ids.begin(), target_ids.end());
  return nncore::ce_mean(logits, std::move(t));
}

template <class S>
struct AltLossParts {
  nncore::VarT<S> total;
  double mlm = 0.0;
  double mam = 0.0;
  bool has_mlm = false;
  bool has_mam = false;
};

// Joint masked objective: runs the encoder on the masked input, decodes the
// masked lexical slots with the MLM head and masked acoustic slots with the
// MAM head, and returns the unweighted sum of the two losses.
template <class S>
AltLossParts<S> alt_loss(const MultimodalT<S>& model, nncore::TapeT<S>& tape,
                         const MultimodalInput& input, const MaskPlan& plan,
                         nncore::VarT<S> acoustic_embeddings) {
  using namespace nncore;
  if (plan.empty()) throw std::invalid_argument("alt_loss: mask plan is empty in both modalities");
  VarT<S> hidden = model.encode(tape, input, acoustic_embeddings, plan.acoustic_indices);

  AltLossParts<S> parts;
  if (!plan.lexical_slots.empty()) {
    VarT<S> logits = model.mlm_logits(tape, hidden, plan.lexical_slots);
    VarT<S> l = mlm_loss(logits, plan.lexical_targets);
    parts.total = l;
    parts.mlm = double(l.value().data[0]);
    parts.has_mlm = true;
  }
  if (!plan.acoustic_indices.empty()) {
    std::vector<int64_t> slots;
    for (int64_t idx : plan.acoustic_indices) slots.push_back(input.acoustic_slots[size_t(idx)]);
    VarT<S> decoded = model.mam_decode(tape, hidden, slots);
    TensorT<S> targets(int64_t(plan.acoustic_targets.size()), MultimodalConfig::kBlockValues);
    for (size_t r = 0; r < plan.acoustic_targets.size(); ++r)
      for (size_t c = 0; c < plan.acoustic_targets[r].size(); ++c)
        targets.at(int64_t(r), int64_t(c)) = S(plan.acoustic_targets[r][c]);
    VarT<S> l = mam_loss(decoded, targets);
    parts.mam = double(l.value().data[0]);
    parts.has_mam = true;
    parts.total = parts.has_mlm ? add(parts.total, l) : l;
  }
  return parts;
}

}  // namespace alp::mmtx
