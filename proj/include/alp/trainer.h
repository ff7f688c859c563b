#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "alp/calp.h"
#include "alp/checkpoint.h"
#include "alp/corpus.h"
#include "alp/features.h"
#include "alp/heads.h"
#include "alp/mmtx.h"
#include "alp/spectran.h"

namespace alp::trainer {

// Fully defaulted run configuration. Every field has a default; the resolved
// config is embedded in every checkpoint and report.
struct RunConfig {
  uint64_t seed = 1;
  std::string out_dir = "out";

  struct Data {
    std::string manifest;
    int min_count = 1;
    bool per_utterance_norm = true;
    bool feature_cache = true;
  } data;

  struct Model {
    int d_model = 128;
    int n_layers = 2;
    int n_heads = 2;
    int d_ff = 512;
    double dropout = 0.1;
    int max_positions = 512;
    int spectran_layers = 2;
    int spectran_heads = 2;
    int spectran_ff = 512;
    int d_a = 128;
    int d_shared = 128;
    features::PatchGeometry patch;
  } model;

  struct Lm {
    int steps = 500;
    double lr = 1e-3;
    int batch_size = 16;
    double p_lex = 0.15;
  } lm;

  struct Calp {
    double tau = 0.1;
    double alpha = 0.25;
    int batch_size = 32;
    int steps = 1000;
    double lr = 1e-3;
    bool ntxent_include_positive = false;
    int eval_interval = 100;
  } calp;

  struct Alt {
    double p_lex = 0.15;
    double p_audio = 0.10;
    int span = 3;
    int batch_size = 8;
    int steps = 500;
    double lr = 1e-3;
    // joint-stage steps with the acoustic encoder held fixed while the fresh
    // adapter and decoding heads settle; protects a CALP-pretrained encoder
    // from early reconstruction gradients
    int spectran_warmup = 100;
  } alt;

  struct Finetune {
    double lr = 5e-5;
    int batch_size = 64;
    int epochs = 50;
    int steps = 0;  // overrides epochs when > 0
    bool freeze = true;
    double threshold = 0.5;
    double supervision_fraction = 1.0;
  } finetune;

  std::string modality = "both";  // both | audio | text

  static RunConfig from_json(const nlohmann::json& j);
  static RunConfig load(const std::string& path);
  nlohmann::json to_json() const;
  std::string hash() const;  // FNV-1a over the resolved dump
  void validate() const;

  spectran::SpecTranConfig spectran_config() const;
  mmtx::MultimodalConfig mmtx_config(int vocab_size) const;
  calp::CalpConfig calp_config() const;
};

struct UtteranceData {
  corpus::Utterance utt;
  std::vector<features::AcousticBlock> blocks;
};

struct Dataset {
  corpus::Vocab vocab;
  std::vector<std::string> label_names;
  int n_classes = 0;
  std::vector<UtteranceData> all;

  std::vector<const UtteranceData*> split(const std::string& name) const;
};

Dataset load_dataset(const RunConfig& cfg);

// All model parameters live in one store; checkpoints carry the whole store
// under stable prefixes (spectran., mm., calp., head.).
template <class S>
struct PipelineT {
  RunConfig cfg;
  nncore::ParamStoreT<S> store;
  spectran::SpecTranT<S> spectran_model;
  mmtx::MultimodalT<S> mm;
  calp::CalpProjT<S> calp_proj;
  heads::EmotionHeadT<S> head;

  PipelineT(const RunConfig& config, int vocab_size, int n_classes) : cfg(config) {
    Rng init_rng(cfg.seed ^ 0x9e3779b97f4a7c15ull);
    spectran_model = spectran::SpecTranT<S>(store, "spectran", cfg.spectran_config(), init_rng);
    mm = mmtx::MultimodalT<S>(store, "mm", cfg.mmtx_config(vocab_size), init_rng);
    calp_proj = calp::CalpProjT<S>(store, "calp", cfg.model.d_a, cfg.model.d_model,
                                   cfg.model.d_shared, init_rng);
    head = heads::EmotionHeadT<S>(store, "head", cfg.model.d_model, n_classes, init_rng);
  }

  void set_trainable(const std::string& prefix, bool trainable) {
    for (auto* p : store.with_prefix(prefix)) p->trainable = trainable;
  }
  void load(const std::string& ckpt_dir) {
    auto data = nncore::load_checkpoint(ckpt_dir);
    nncore::load_into_store(data, store);
  }
  void save(const std::string& ckpt_dir) const {
    nncore::save_checkpoint(ckpt_dir, store, cfg.to_json());
  }
};

using Pipeline = PipelineT<float>;

struct RunReport {
  std::string stage;
  uint64_t seed = 0;
  std::string config_hash;
  std::vector<double> losses;
  nlohmann::json metrics = nlohmann::json::object();
  nlohmann::json extra = nlohmann::json::object();
  double wall_clock_s = 0.0;

  nlohmann::json to_json() const;
  void save(const std::string& path) const;
};

// Each stage writes <out_dir>/checkpoint, report.json and
// config.resolved.json; init_ckpt may be empty for from-scratch runs.
RunReport stage0_lm(const Dataset& dataset, const RunConfig& cfg);
RunReport stage1_calp(const Dataset& dataset, const RunConfig& cfg, const std::string& lm_ckpt);
RunReport stage2_alt(const Dataset& dataset, const RunConfig& cfg, const std::string& init_ckpt);
RunReport stage3_finetune(const Dataset& dataset, const RunConfig& cfg,
                          const std::string& init_ckpt);
RunReport evaluate(const Dataset& dataset, const RunConfig& cfg, const std::string& ckpt,
                   const std::string& split);

// Helpers shared by evaluation, the acceptance suite and the ablation harness.
heads::ConfusionCounts evaluate_counts(Pipeline& pipe, const Dataset& dataset,
                                       const std::string& split, const std::string& modality,
                                       double threshold);
double calp_retrieval_probe(Pipeline& pipe, const Dataset& dataset, int batch_size,
                            int n_batches, uint64_t seed);

struct GradCheckReport {
  double calp_err = 0.0;
  double alt_err = 0.0;
  double bce_err = 0.0;
  bool pass = false;
  double worst() const { return std::max({calp_err, alt_err, bce_err}); }
};

// End-to-end finite-difference verification at toy sizes. use_f64 switches
// the whole evaluation to 64-bit; corrupt injects a wrong analytic gradient
// so the harness can prove it fails loudly.
GradCheckReport gradcheck_run(bool use_f64, bool corrupt, uint64_t seed, double tolerance = 1e-4);

struct AblationArm {
  std::string name;
  double test_wa = 0.0;
  double test_acc = 0.0;
  double test_f1 = 0.0;
};

// Pipeline variants on one corpus and seed: supervised head only,
// stage-2-only pretraining, and the full stage-0/1/2 pipeline.
std::vector<AblationArm> run_pipeline_ablation(const std::string& manifest, const RunConfig& base,
                                               uint64_t seed, const std::string& work_dir);

// Audio-only fine-tune after CALP with and without the language term.
std::vector<AblationArm> run_alpha_ablation(const std::string& manifest, const RunConfig& base,
                                            uint64_t seed, const std::string& work_dir);

// Patch-geometry robustness table; reported, never asserted.
std::vector<AblationArm> run_patch_sweep(const std::string& manifest, const RunConfig& base,
                                         const std::vector<features::PatchGeometry>& geometries,
                                         uint64_t seed, const std::string& work_dir);

}  // namespace alp::trainer
