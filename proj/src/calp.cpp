#include "alp/calp.h"

#include <stdexcept>

#include "alp/rng.h"

namespace alp::calp {

std::vector<CalpTriple> sample_triples(const std::vector<CalpSource>& sources, int batch_size,
                                       Rng& rng) {
  if (batch_size < 2) throw std::invalid_argument("sample_triples: batch size must be >= 2");
  std::vector<size_t> eligible;
  for (size_t i = 0; i < sources.size(); ++i)
    if (sources[i].blocks && sources[i].blocks->size() >= 2) eligible.push_back(i);
  if (int(eligible.size()) < batch_size)
    throw std::invalid_argument("sample_triples: only " + std::to_string(eligible.size()) +
                                " utterances have two consecutive blocks, need " +
                                std::to_string(batch_size));
  rng.shuffle(eligible);

  std::vector<CalpTriple> out;
  for (int i = 0; i < batch_size; ++i) {
    const CalpSource& src = sources[eligible[size_t(i)]];
    size_t n_pairs = src.blocks->size() - 1;
    size_t t = size_t(rng.below(n_pairs));
    CalpTriple triple;
    triple.utterance_id = src.utterance_id;
    triple.a_t = (*src.blocks)[t];
    triple.a_t1 = (*src.blocks)[t + 1];
    triple.token_ids = *src.token_ids;
    out.push_back(std::move(triple));
  }
  return out;
}

}  // namespace alp::calp
