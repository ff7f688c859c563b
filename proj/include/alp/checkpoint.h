#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "alp/graph.h"

namespace alp::nncore {

// Checkpoint layout: <dir>/index.json + <dir>/params.bin.
// index.json: { "tensors": {name: {shape, dtype, offset}}, "config": {...} }
// params.bin: raw little-endian float32, tensors at their stated offsets,
// written in sorted-name order so the layout is canonical.

inline void write_f32_blob(const std::string& path, const std::vector<float>& blob) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out.write(reinterpret_cast<const char*>(blob.data()),
            std::streamsize(blob.size() * sizeof(float)));
  if (!out) throw std::runtime_error("short write to " + path);
}

inline std::vector<float> read_f32_blob(const std::string& path) {
  std::ifstream in(path, std::ios::binary | std::ios::ate);
  if (!in) throw std::runtime_error("cannot read " + path);
  auto bytes = size_t(in.tellg());
  if (bytes % sizeof(float) != 0) throw std::runtime_error("blob size not a multiple of 4: " + path);
  std::vector<float> blob(bytes / sizeof(float));
  in.seekg(0);
  in.read(reinterpret_cast<char*>(blob.data()), std::streamsize(bytes));
  if (!in) throw std::runtime_error("short read from " + path);
  return blob;
}

template <class S>
void save_checkpoint(const std::string& dir, const ParamStoreT<S>& store,
                     const nlohmann::json& config) {
  std::filesystem::create_directories(dir);
  auto params = store.all();
  std::sort(params.begin(), params.end(),
            [](const ParamT<S>* a, const ParamT<S>* b) { return a->name < b->name; });
  std::vector<float> blob;
  nlohmann::json tensors = nlohmann::json::object();
  for (const auto* p : params) {
    nlohmann::json entry;
    entry["shape"] = p->value.shape;
    entry["dtype"] = "f32";
    entry["offset"] = blob.size();
    tensors[p->name] = entry;
    for (S v : p->value.data) blob.push_back(float(v));
  }
  nlohmann::json index;
  index["tensors"] = tensors;
  index["config"] = config;
  std::ofstream out(dir + "/index.json");
  if (!out) throw std::runtime_error("cannot write " + dir + "/index.json");
  out << index.dump(2) << "\n";
  write_f32_blob(dir + "/params.bin", blob);
}

struct CheckpointData {
  std::map<std::string, std::pair<std::vector<int64_t>, std::vector<float>>> tensors;
  nlohmann::json config;

  bool contains(const std::string& name) const { return tensors.count(name) != 0; }
};

inline CheckpointData load_checkpoint(const std::string& dir) {
  std::ifstream in(dir + "/index.json");
  if (!in) throw std::runtime_error("cannot read " + dir + "/index.json");
  nlohmann::json index = nlohmann::json::parse(in);
  std::vector<float> blob = read_f32_blob(dir + "/params.bin");
  CheckpointData data;
  data.config = index.value("config", nlohmann::json::object());
  for (auto& [name, entry] : index.at("tensors").items()) {
    std::vector<int64_t> shape = entry.at("shape").get<std::vector<int64_t>>();
    size_t offset = entry.at("offset").get<size_t>();
    int64_t n = 1;
    for (int64_t d : shape) n *= d;
    if (offset + size_t(n) > blob.size())
      throw std::runtime_error("checkpoint tensor out of range: " + name);
    std::vector<float> vals(blob.begin() + std::ptrdiff_t(offset),
                            blob.begin() + std::ptrdiff_t(offset + size_t(n)));
    data.tensors[name] = {std::move(shape), std::move(vals)};
  }
  return data;
}

// Copies every checkpoint tensor whose name exists in the store. Shape
// mismatches are errors; tensors present in only one side are counted.
template <class S>
struct LoadStats {
  int loaded = 0;
  int missing_in_ckpt = 0;
  int extra_in_ckpt = 0;
};

template <class S>
LoadStats<S> load_into_store(const CheckpointData& data, ParamStoreT<S>& store) {
  LoadStats<S> stats;
  for (auto* p : store.all()) {
    auto it = data.tensors.find(p->name);
    if (it == data.tensors.end()) {
      ++stats.missing_in_ckpt;
      continue;
    }
    if (it->second.first != p->value.shape)
      throw std::runtime_error("checkpoint shape mismatch for " + p->name + ": file " +
                               shape_str(it->second.first) + " vs model " +
                               shape_str(p->value.shape));
    for (size_t i = 0; i < p->value.data.size(); ++i) p->value.data[i] = S(it->second.second[i]);
    ++stats.loaded;
  }
  for (const auto& [name, tv] : data.tensors)
    if (!store.contains(name)) ++stats.extra_in_ckpt;
  return stats;
}

}  // namespace alp::nncore
