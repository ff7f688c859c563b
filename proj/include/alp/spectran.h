#pragma once

#include <string>
#include <vector>

#include "alp/features.h"
#include "alp/nn.h"

namespace alp::spectran {

struct SpecTranConfig {
  features::PatchGeometry patches;
  int d_a = 128;  // acoustic token width
  nncore::EncoderConfig encoder{2, 128, 2, 512, 0.1, 128};

  int n_patches() const {
    int nt = (features::AcousticBlock::kFrames - patches.patch_frames) / patches.stride_frames + 1;
    int nb = (features::AcousticBlock::kBands - patches.patch_bands) / patches.stride_bands + 1;
    return nt * nb;
  }
  void validate() const {
    if (encoder.d_model != d_a)
      throw std::invalid_argument("spectran: encoder d_model must equal d_a");
    if (encoder.max_positions < n_patches() + 1)
      throw std::invalid_argument("spectran: position table smaller than patch count + 1");
  }
};

// Encoder over linearized spectrogram patches. A learned first slot is
// prepended; its output embedding is the acoustic token.
template <class S>
struct SpecTranT {
  SpecTranConfig cfg;
  nncore::LinearT<S> patch_proj;      // patch_len -> d_a
  nncore::ParamT<S>* pos_table;       // [n_patches + 1 x d_a], row 0 = first slot
  nncore::ParamT<S>* first_slot;      // [1 x d_a]
  nncore::EncoderT<S> encoder;

  SpecTranT() = default;
  SpecTranT(nncore::ParamStoreT<S>& store, const std::string& prefix, SpecTranConfig c, Rng& rng)
      : cfg(c) {
    cfg.validate();
    patch_proj = nncore::LinearT<S>(store, prefix + ".patch_proj", cfg.patches.patch_len(),
                                    cfg.d_a, rng);
    pos_table = &store.create(prefix + ".pos_table", {int64_t(cfg.n_patches()) + 1, cfg.d_a});
    pos_table->value = nncore::TensorT<S>::randn(pos_table->value.shape, rng, nncore::kInitSigma);
    first_slot = &store.create(prefix + ".first_slot", {1, cfg.d_a});
    first_slot->value = nncore::TensorT<S>::randn(first_slot->value.shape, rng, nncore::kInitSigma);
    encoder = nncore::EncoderT<S>(store, prefix + ".encoder", cfg.encoder, rng);
  }

  // patch_matrix [n_patches x patch_len] with position_indices[i] the grid
  // index of row i. Returns the first-slot output embedding [1 x d_a].
  nncore::VarT<S> embed_patches(nncore::TapeT<S>& tape, nncore::VarT<S> patch_matrix,
                                const std::vector<int>& position_indices) const {
    using namespace nncore;
    if (patch_matrix.cols() != cfg.patches.patch_len())
      throw std::invalid_argument("spectran: patch length does not match projection input");
    if (patch_matrix.rows() != int64_t(position_indices.size()))
      throw std::invalid_argument("spectran: position index count mismatch");

    VarT<S> projected = patch_proj.forward(tape, patch_matrix);
    VarT<S> content = concat_rows<S>({leaf_param(tape, *first_slot), projected});
    std::vector<int64_t> pos_rows{0};
    for (int p : position_indices) pos_rows.push_back(int64_t(p) + 1);
    VarT<S> positions = select_rows(leaf_param(tape, *pos_table), pos_rows);
    VarT<S> seq = add(content, positions);

    std::vector<uint8_t> mask(size_t(seq.rows()), 1);
    VarT<S> out = encoder.forward(tape, seq, mask);
    return select_rows(out, {0});
  }

  nncore::VarT<S> embed_block(nncore::TapeT<S>& tape, const features::PatchSet& patchset) const {
    if (patchset.geometry.patch_len() != cfg.patches.patch_len())
      throw std::invalid_argument("spectran: patchset geometry mismatch");
    nncore::TensorT<S> m(int64_t(patchset.patches.size()), cfg.patches.patch_len());
    std::vector<int> pos;
    for (size_t i = 0; i < patchset.patches.size(); ++i) {
      const auto& p = patchset.patches[i];
      for (size_t j = 0; j < p.values.size(); ++j) m.at(int64_t(i), int64_t(j)) = S(p.values[j]);
      pos.push_back(p.position_index);
    }
    return embed_patches(tape, nncore::leaf(tape, std::move(m)), pos);
  }

  nncore::VarT<S> embed_block(nncore::TapeT<S>& tape, const features::AcousticBlock& block) const {
    return embed_block(tape, features::extract_patches(block, cfg.patches));
  }

  // [n_blocks x d_a], rows in time order
  nncore::VarT<S> embed_blocks(nncore::TapeT<S>& tape,
                               const std::vector<features::AcousticBlock>& blocks) const {
    if (blocks.empty()) throw std::invalid_argument("spectran: empty block list");
    std::vector<nncore::VarT<S>> rows;
    for (const auto& b : blocks) rows.push_back(embed_block(tape, b));
    return nncore::concat_rows(rows);
  }
};

}  // namespace alp::spectran
