#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

namespace alp::corpus {

// One dataset record. Labels arrive on a [0,3] Likert scale or already
// binary; binarization (value > 0 -> 1) happens at load time and is never
// written back.
struct ManifestRecord {
  std::string id;
  std::string audio_path;            // relative paths resolve against the manifest dir
  std::string transcript;
  std::map<std::string, double> labels;       // raw values as found in the file
  std::vector<int> label_vector;              // binarized, ordered by label_names
  std::string split;                          // train | val | test
};

struct Manifest {
  std::vector<ManifestRecord> records;
  std::vector<std::string> label_names;  // sorted; identical across records
  std::string base_dir;

  std::vector<const ManifestRecord*> split_records(const std::string& split) const;
  std::string resolve_audio_path(const ManifestRecord& rec) const;
};

int binarize_likert(double value);  // value in [0,3]; > 0 -> 1

// JSON Lines, one record per line, fields: id, audio_path, transcript,
// labels, split. Malformed records are reported with their line number.
Manifest load_manifest(const std::string& path);
void save_manifest(const Manifest& manifest, const std::string& path);

// Word-level tokenizer: lowercase fold, tokens are maximal alnum runs
// (punctuation and whitespace are separators and are dropped).
std::vector<std::string> tokenize_words(const std::string& text);

struct Vocab {
  static constexpr int kPad = 0;
  static constexpr int kUnk = 1;
  static constexpr int kCls = 2;
  static constexpr int kSep = 3;
  static constexpr int kMask = 4;

  std::vector<std::string> id_to_token;  // dense ids, specials at 0..4
  std::unordered_map<std::string, int> token_to_id;

  int size() const { return int(id_to_token.size()); }
  int lookup(const std::string& token) const;  // kUnk when missing
  const std::string& decode(int id) const;

  std::vector<int> encode(const std::string& text) const;
  std::vector<std::string> decode_all(const std::vector<int>& ids) const;

  void save(const std::string& path) const;  // one token per line, line = id
  static Vocab load(const std::string& path);
};

// Tokens below min_count are excluded (they encode to [UNK]). Ids after the
// specials are assigned in lexicographic order for determinism.
Vocab build_vocab(const std::vector<std::string>& transcripts, int min_count);

struct Utterance {
  std::string id;
  std::vector<int> token_ids;
  std::vector<int> label_vector;
  std::string audio_path;
  std::string split;
};

std::vector<Utterance> make_utterances(const Manifest& manifest, const Vocab& vocab);

}  // namespace alp::corpus
