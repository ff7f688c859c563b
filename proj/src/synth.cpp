#include "alp/synth.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <stdexcept>

#include "alp/rng.h"
#include "alp/wav.h"

namespace alp::corpus {

namespace {

constexpr int kSampleRate = 16000;
constexpr int kMaxClasses = 8;
constexpr double kPi = 3.14159265358979323846;

const char* kEmotionNames[kMaxClasses] = {"anger",    "happiness", "sadness", "surprise",
                                          "fear",     "disgust",   "contempt", "neutral"};

const char* kSyllables[] = {"ba", "do", "ki", "lu", "men", "tor", "vel", "zon",
                            "ra", "pos", "nim", "gha"};
constexpr int kNumSyllables = 12;

const char* kFillers[] = {"uh", "um", "so", "well", "you", "know", "like", "and"};
constexpr int kNumFillers = 8;

// Utterances carry a class plus a within-class style. Both shape the audio
// (tones) and the transcript (words), giving the two modalities shared
// structure below the class level. Tone layout is a fixed function of
// (class, style), never of the seed.
constexpr int kStyleCount = 8;
constexpr int kStyleTones = 2;
constexpr double kStyleAmp = 0.9;

// Three class slots from a 24-slot comb at 300 Hz spacing.
std::vector<double> class_tone_freqs(int c) {
  std::vector<double> freqs;
  for (int k = 0; k < 3; ++k) {
    int slot = (3 * c + 8 * k) % 24;
    freqs.push_back(300.0 * double(slot + 1));
  }
  return freqs;
}

// Two extra slots per style, offset so they never land on the class's own
// slots (class slots sit at offsets 0/8/16 from 3c).
double style_tone_freq(int c, int s, int k) {
  static constexpr int kOffsets[kStyleCount][kStyleTones] = {
      {1, 2}, {3, 4}, {5, 6}, {9, 10}, {11, 12}, {13, 14}, {17, 18}, {19, 21}};
  int slot = (3 * c + kOffsets[s][k]) % 24;
  return 300.0 * double(slot + 1);
}

std::string class_word(int c, int j) {
  int a = (3 * c + 5 * j + 1) % kNumSyllables;
  int b = (7 * c + 2 * j + 4) % kNumSyllables;
  return std::string(kSyllables[a]) + kSyllables[b];
}

// Three syllables so style words never collide with two-syllable class words.
std::string style_word(int s, int idx) {
  int a = (2 * s + 1 + 5 * idx) % kNumSyllables;
  int b = (5 * s + 3 + idx) % kNumSyllables;
  int c = (3 * s + 7 + 2 * idx) % kNumSyllables;
  return std::string(kSyllables[a]) + kSyllables[b] + kSyllables[c];
}

std::string make_transcript(int c, int s, Rng& rng) {
  // 3 class words (template-rotated) plus each style word twice, 1-2
  // fillers. Style carries comparable lexical mass to the class so the two
  // modalities share structure below the class level.
  int tmpl = int(rng.below(3));
  std::vector<std::string> words;
  for (int j = 0; j < 3; ++j) words.push_back(class_word(c, (j + tmpl) % 3));
  for (int rep = 0; rep < 2; ++rep)
    for (int k = 0; k < 2; ++k)
      words.insert(words.begin() + std::ptrdiff_t(rng.below(words.size() + 1)), style_word(s, k));
  int n_fill = 1 + int(rng.below(2));
  for (int f = 0; f < n_fill; ++f) {
    size_t pos = rng.below(words.size() + 1);
    words.insert(words.begin() + std::ptrdiff_t(pos), kFillers[rng.below(kNumFillers)]);
  }
  std::string text;
  for (size_t i = 0; i < words.size(); ++i) {
    if (i) text += " ";
    text += words[i];
  }
  return text;
}

std::vector<int16_t> make_audio(int c, int s, double snr_db, Rng& rng) {
  int n = 24000 + int(rng.below(24001));  // 1.5 s .. 3.0 s
  auto freqs = class_tone_freqs(c);
  std::vector<double> amps{1.0, 0.7, 0.5};
  for (int k = 0; k < kStyleTones; ++k) {
    freqs.push_back(style_tone_freq(c, s, k));
    amps.push_back(kStyleAmp);
  }
  std::vector<double> phases;
  for (size_t k = 0; k < freqs.size(); ++k) phases.push_back(rng.uniform() * 2.0 * kPi);

  std::vector<double> x(size_t(n), 0.0);
  double sig_power = 0.0;
  for (size_t k = 0; k < freqs.size(); ++k) {
    double w = 2.0 * kPi * freqs[k] / double(kSampleRate);
    for (int t = 0; t < n; ++t) x[size_t(t)] += amps[k] * std::sin(w * double(t) + phases[k]);
    sig_power += amps[k] * amps[k] / 2.0;
  }
  double noise_sigma = std::sqrt(sig_power / std::pow(10.0, snr_db / 10.0));
  for (int t = 0; t < n; ++t) x[size_t(t)] += noise_sigma * rng.gauss();

  // deterministic per-(class, style) gain; a measured peak would imprint a
  // per-utterance level offset on every log-mel band
  double amp_sum = 0.0;
  for (double a : amps) amp_sum += a;
  double gain = 0.85 * 32767.0 / (amp_sum + 4.0 * noise_sigma);
  std::vector<int16_t> out(size_t(n), 0);
  for (int t = 0; t < n; ++t) {
    double v = std::round(x[size_t(t)] * gain);
    out[size_t(t)] = int16_t(std::clamp(v, -32768.0, 32767.0));
  }
  return out;
}

}  // namespace

Manifest synth_corpus(const SynthOptions& options) {
  if (options.n_classes < 2 || options.n_classes > kMaxClasses)
    throw std::invalid_argument("synth_corpus: n_classes must be in [2, 8]");
  if (options.n_utterances < options.n_classes)
    throw std::invalid_argument("synth_corpus: need at least one utterance per class");
  if (!(options.text_label_noise >= 0.0 && options.text_label_noise <= 1.0))
    throw std::invalid_argument("synth_corpus: text_label_noise must be in [0,1]");
  if (!(options.snr_db >= -30.0 && options.snr_db <= 100.0))
    throw std::invalid_argument("synth_corpus: snr_db out of range [-30, 100]");
  if (options.out_dir.empty()) throw std::invalid_argument("synth_corpus: out_dir required");

  std::filesystem::create_directories(options.out_dir + "/audio");
  Rng rng(options.seed);

  int n = options.n_utterances;
  std::vector<int> classes(size_t(n), 0);
  for (int i = 0; i < n; ++i) classes[size_t(i)] = i % options.n_classes;
  rng.shuffle(classes);

  int n_val = std::max(1, int(std::floor(0.1 * n + 0.5)));
  int n_test = std::max(1, int(std::floor(0.1 * n + 0.5)));
  int n_train = n - n_val - n_test;
  if (n_train < 1) throw std::invalid_argument("synth_corpus: too few utterances to split");
  std::vector<int> order(size_t(n), 0);
  for (int i = 0; i < n; ++i) order[size_t(i)] = i;
  rng.shuffle(order);
  std::vector<std::string> splits(size_t(n), "");
  for (int j = 0; j < n; ++j) {
    const char* s = j < n_train ? "train" : (j < n_train + n_val ? "val" : "test");
    splits[size_t(order[size_t(j)])] = s;
  }

  Manifest manifest;
  manifest.base_dir = options.out_dir;
  for (int c = 0; c < options.n_classes; ++c) manifest.label_names.push_back(kEmotionNames[c]);
  std::sort(manifest.label_names.begin(), manifest.label_names.end());

  for (int i = 0; i < n; ++i) {
    int c = classes[size_t(i)];
    int s = int(rng.below(kStyleCount));
    char idbuf[32];
    std::snprintf(idbuf, sizeof(idbuf), "utt%05d", i);

    ManifestRecord rec;
    rec.id = idbuf;
    rec.audio_path = std::string("audio/") + idbuf + ".wav";
    int text_class = c, text_style = s;
    bool decouple = !options.text_informative ||
                    (options.text_label_noise > 0.0 && rng.uniform() < options.text_label_noise);
    if (decouple) {
      text_class = int(rng.below(uint64_t(options.n_classes)));
      text_style = int(rng.below(kStyleCount));
    }
    rec.transcript = make_transcript(text_class, text_style, rng);
    rec.split = splits[size_t(i)];
    for (int k = 0; k < options.n_classes; ++k)
      rec.labels[kEmotionNames[k]] = 0.0;
    rec.labels[kEmotionNames[c]] = 1.0;
    for (const auto& name : manifest.label_names)
      rec.label_vector.push_back(rec.labels.at(name) > 0 ? 1 : 0);

    WavData wav;
    wav.sample_rate = kSampleRate;
    wav.samples = make_audio(c, s, options.snr_db, rng);
    write_wav(options.out_dir + "/" + rec.audio_path, wav);

    manifest.records.push_back(std::move(rec));
  }

  save_manifest(manifest, options.out_dir + "/manifest.jsonl");
  return manifest;
}

}  // namespace alp::corpus
