#include "alp/mmtx.h"

#include <algorithm>
#include <stdexcept>

namespace alp::mmtx {

MultimodalInput assemble(const std::vector<int>& token_ids, int n_blocks, int max_positions,
                         int pad_to) {
  if (token_ids.empty() && n_blocks == 0)
    throw std::invalid_argument("assemble: both modalities empty");
  for (int id : token_ids)
    if (id < 0) throw std::invalid_argument("assemble: negative token id");

  MultimodalInput in;
  in.n_tokens = int(token_ids.size());
  in.n_blocks = n_blocks;

  auto push = [&](int token, int pos, int modality, bool attend) {
    in.token_stream.push_back(token);
    in.position_ids.push_back(pos);
    in.modality_ids.push_back(modality);
    in.attention_mask.push_back(attend ? 1 : 0);
  };

  push(corpus::Vocab::kCls, 0, 0, true);
  for (size_t j = 0; j < token_ids.size(); ++j) {
    in.lexical_content_slots.push_back(in.n_slots());
    push(token_ids[j], int(j) + 1, 0, true);
  }
  if (n_blocks > 0) {
    push(corpus::Vocab::kSep, int(token_ids.size()) + 1, 0, true);
    for (int t = 0; t < n_blocks; ++t) {
      in.acoustic_slots.push_back(in.n_slots());
      push(-1, t, 1, true);
    }
  }
  while (int(in.n_slots()) < pad_to) push(corpus::Vocab::kPad, 0, 0, false);

  if (in.n_slots() > max_positions)
    throw std::invalid_argument("assemble: sequence of " + std::to_string(in.n_slots()) +
                                " slots exceeds max_positions " + std::to_string(max_positions));
  int max_pos = 0;
  for (int p : in.position_ids) max_pos = std::max(max_pos, p);
  if (max_pos >= max_positions)
    throw std::invalid_argument("assemble: position id exceeds the position table");
  return in;
}

MaskPlan apply_masks(MultimodalInput& input, const std::vector<features::AcousticBlock>& blocks,
                     const MaskingConfig& cfg, Rng& rng) {
  if (!(cfg.p_lex >= 0 && cfg.p_lex <= 1) || !(cfg.p_audio >= 0 && cfg.p_audio <= 1))
    throw std::invalid_argument("apply_masks: probabilities must be in [0,1]");
  if (cfg.span < 1) throw std::invalid_argument("apply_masks: span must be >= 1");
  if (input.n_blocks > 0 && int(blocks.size()) != input.n_blocks)
    throw std::invalid_argument("apply_masks: block count does not match the input plan");

  MaskPlan plan;
  for (int64_t slot : input.lexical_content_slots) {
    if (rng.uniform() < cfg.p_lex) {
      plan.lexical_slots.push_back(slot);
      plan.lexical_targets.push_back(input.token_stream[size_t(slot)]);
      input.token_stream[size_t(slot)] = corpus::Vocab::kMask;
    }
  }

  std::vector<uint8_t> masked(size_t(input.n_blocks), 0);
  for (int i = 0; i < input.n_blocks; ++i) {
    if (rng.uniform() < cfg.p_audio) {
      for (int k = 0; k < cfg.span && i + k < input.n_blocks; ++k) masked[size_t(i + k)] = 1;
    }
  }
  for (int i = 0; i < input.n_blocks; ++i) {
    if (!masked[size_t(i)]) continue;
    plan.acoustic_indices.push_back(i);
    plan.acoustic_targets.push_back(
        std::vector<float>(blocks[size_t(i)].values.begin(), blocks[size_t(i)].values.end()));
  }
  return plan;
}

}  // namespace alp::mmtx
