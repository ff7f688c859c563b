#include "alp/corpus.h"

#include <algorithm>
#include <cctype>
#include <filesystem>
#include <fstream>
#include <set>
#include <stdexcept>

#include <json.hpp>

namespace alp::corpus {

namespace {

[[noreturn]] void fail_line(size_t line_no, const std::string& what) {
  throw std::runtime_error("manifest line " + std::to_string(line_no) + ": " + what);
}

}  // namespace

int binarize_likert(double value) {
  if (!(value >= 0.0 && value <= 3.0))
    throw std::invalid_argument("label value outside [0,3]: " + std::to_string(value));
  return value > 0.0 ? 1 : 0;
}

std::vector<const ManifestRecord*> Manifest::split_records(const std::string& split) const {
  std::vector<const ManifestRecord*> out;
  for (const auto& rec : records)
    if (rec.split == split) out.push_back(&rec);
  return out;
}

std::string Manifest::resolve_audio_path(const ManifestRecord& rec) const {
  std::filesystem::path p(rec.audio_path);
  if (p.is_absolute() || base_dir.empty()) return rec.audio_path;
  return (std::filesystem::path(base_dir) / p).string();
}

Manifest load_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open manifest: " + path);

  Manifest manifest;
  manifest.base_dir = std::filesystem::path(path).parent_path().string();

  std::set<std::string> seen_ids;
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json rec_json;
    try {
      rec_json = nlohmann::json::parse(line);
    } catch (const std::exception& e) {
      fail_line(line_no, std::string("invalid JSON: ") + e.what());
    }
    for (const char* field : {"id", "audio_path", "transcript", "labels", "split"})
      if (!rec_json.contains(field)) fail_line(line_no, std::string("missing field: ") + field);

    ManifestRecord rec;
    rec.id = rec_json.at("id").get<std::string>();
    rec.audio_path = rec_json.at("audio_path").get<std::string>();
    rec.transcript = rec_json.at("transcript").get<std::string>();
    rec.split = rec_json.at("split").get<std::string>();
    if (rec.split != "train" && rec.split != "val" && rec.split != "test")
      fail_line(line_no, "unknown split value: " + rec.split);
    if (!seen_ids.insert(rec.id).second) fail_line(line_no, "duplicate id: " + rec.id);

    if (!rec_json.at("labels").is_object()) fail_line(line_no, "labels must be an object");
    for (auto& [name, value] : rec_json.at("labels").items()) {
      if (!value.is_number()) fail_line(line_no, "label " + name + " is not numeric");
      rec.labels[name] = value.get<double>();
    }

    std::vector<std::string> names;
    for (const auto& [name, value] : rec.labels) names.push_back(name);
    if (manifest.records.empty()) {
      manifest.label_names = names;
    } else if (names != manifest.label_names) {
      fail_line(line_no, "label keys differ from previous records");
    }

    for (const auto& name : manifest.label_names) {
      try {
        rec.label_vector.push_back(binarize_likert(rec.labels.at(name)));
      } catch (const std::exception& e) {
        fail_line(line_no, std::string("label ") + name + ": " + e.what());
      }
    }
    manifest.records.push_back(std::move(rec));
  }
  if (manifest.records.empty()) throw std::runtime_error("manifest has no records: " + path);
  return manifest;
}

void save_manifest(const Manifest& manifest, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write manifest: " + path);
  for (const auto& rec : manifest.records) {
    // Field order is fixed by hand so output is byte-stable.
    out << "{\"id\":" << nlohmann::json(rec.id).dump()
        << ",\"audio_path\":" << nlohmann::json(rec.audio_path).dump()
        << ",\"transcript\":" << nlohmann::json(rec.transcript).dump() << ",\"labels\":{";
    bool first = true;
    for (const auto& [name, value] : rec.labels) {
      if (!first) out << ",";
      first = false;
      out << nlohmann::json(name).dump() << ":" << nlohmann::json(value).dump();
    }
    out << "},\"split\":" << nlohmann::json(rec.split).dump() << "}\n";
  }
}

std::vector<std::string> tokenize_words(const std::string& text) {
  std::vector<std::string> tokens;
  std::string cur;
  for (unsigned char c : text) {
    if (std::isalnum(c)) {
      cur.push_back(char(std::tolower(c)));
    } else if (!cur.empty()) {
      tokens.push_back(cur);
      cur.clear();
    }
  }
  if (!cur.empty()) tokens.push_back(cur);
  return tokens;
}

int Vocab::lookup(const std::string& token) const {
  auto it = token_to_id.find(token);
  return it == token_to_id.end() ? kUnk : it->second;
}

const std::string& Vocab::decode(int id) const {
  if (id < 0 || id >= size()) throw std::out_of_range("vocab: bad id " + std::to_string(id));
  return id_to_token[size_t(id)];
}

std::vector<int> Vocab::encode(const std::string& text) const {
  std::vector<int> ids;
  for (const auto& tok : tokenize_words(text)) ids.push_back(lookup(tok));
  return ids;
}

std::vector<std::string> Vocab::decode_all(const std::vector<int>& ids) const {
  std::vector<std::string> out;
  for (int id : ids) out.push_back(decode(id));
  return out;
}

void Vocab::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write vocab: " + path);
  for (const auto& tok : id_to_token) out << tok << "\n";
}

Vocab Vocab::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open vocab: " + path);
  Vocab v;
  std::string line;
  while (std::getline(in, line)) {
    v.token_to_id[line] = v.size();
    v.id_to_token.push_back(line);
  }
  const char* expected[] = {"[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"};
  if (v.size() < 5) throw std::runtime_error("vocab missing specials: " + path);
  for (int i = 0; i < 5; ++i)
    if (v.id_to_token[size_t(i)] != expected[i])
      throw std::runtime_error("vocab special mismatch at id " + std::to_string(i));
  return v;
}

Vocab build_vocab(const std::vector<std::string>& transcripts, int min_count) {
  if (min_count < 1) throw std::invalid_argument("build_vocab: min_count must be >= 1");
  if (transcripts.empty()) throw std::invalid_argument("build_vocab: empty corpus");
  std::map<std::string, int> counts;
  for (const auto& text : transcripts)
    for (const auto& tok : tokenize_words(text)) ++counts[tok];

  Vocab v;
  for (const char* s : {"[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"}) {
    v.token_to_id[s] = v.size();
    v.id_to_token.push_back(s);
  }
  for (const auto& [tok, count] : counts) {  // std::map iterates lexicographically
    if (count < min_count) continue;
    v.token_to_id[tok] = v.size();
    v.id_to_token.push_back(tok);
  }
  return v;
}

std::vector<Utterance> make_utterances(const Manifest& manifest, const Vocab& vocab) {
  std::vector<Utterance> out;
  for (const auto& rec : manifest.records) {
    Utterance u;
    u.id = rec.id;
    u.token_ids = vocab.encode(rec.transcript);
    u.label_vector = rec.label_vector;
    u.audio_path = manifest.resolve_audio_path(rec);
    u.split = rec.split;
    out.push_back(std::move(u));
  }
  return out;
}

}  // namespace alp::corpus
