#pragma once

#include <cstdint>
#include <string>

#include "alp/corpus.h"

namespace alp::corpus {

// Paired audio/text generator for desk-scale experiments. Each utterance
// draws a class; its audio is 1.5-3.0 s of a class-specific tone mixture
// (a distinct band-energy pattern per class, independent of the seed) plus
// white noise at snr_db; its transcript comes from a class-specific template
// pool with filler-word noise. Labels are one-hot. Splits are 80/10/10:
// val and test each get round(n/10) (at least 1), the rest is train.
//
// Equal seeds give byte-identical manifests and audio.
struct SynthOptions {
  int n_utterances = 100;
  int n_classes = 3;
  double snr_db = 20.0;
  uint64_t seed = 1;
  std::string out_dir;
  // When false, transcripts are drawn from all classes' pools regardless of
  // the label, decoupling text from the task.
  bool text_informative = true;
  // Fraction of utterances whose transcript is drawn from a random
  // class/style instead of their own, capping how far text alone carries a
  // classifier.
  double text_label_noise = 0.0;
};

Manifest synth_corpus(const SynthOptions& options);

}  // namespace alp::corpus
