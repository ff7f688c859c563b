#include "alp/trainer.h"

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <unordered_map>

#include "alp/adam.h"
#include "alp/gradcheck.h"
#include "alp/synth.h"
#include "alp/wav.h"

namespace alp::trainer {

using nncore::AdamConfig;
using nncore::AdamT;
using nncore::leaf;
using nncore::leaf_param;
using nncore::ParamT;
using nncore::TapeT;
using nncore::TensorT;
using nncore::VarT;

namespace {

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

template <class T>
void get_if_present(const nlohmann::json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

std::vector<int> trimmed_tokens(const std::vector<int>& ids, int limit) {
  if (int(ids.size()) <= limit) return ids;
  return std::vector<int>(ids.begin(), ids.begin() + limit);
}

// Cycles through a fixed item set in shuffled epochs; deterministic.
struct BatchSampler {
  explicit BatchSampler(std::vector<const UtteranceData*> items, Rng rng)
      : items_(std::move(items)), rng_(rng) {
    if (items_.empty()) throw std::invalid_argument("batch sampler: no items");
    reshuffle();
  }
  std::vector<const UtteranceData*> next(int batch_size) {
    std::vector<const UtteranceData*> out;
    for (int i = 0; i < batch_size; ++i) {
      if (pos_ >= items_.size()) reshuffle();
      out.push_back(items_[pos_++]);
    }
    return out;
  }

 private:
  void reshuffle() {
    rng_.shuffle(items_);
    pos_ = 0;
  }
  std::vector<const UtteranceData*> items_;
  Rng rng_;
  size_t pos_ = 0;
};

}  // namespace

// ---------------------------------------------------------------------------
// configuration
// ---------------------------------------------------------------------------

RunConfig RunConfig::from_json(const nlohmann::json& j) {
  RunConfig c;
  get_if_present(j, "seed", c.seed);
  get_if_present(j, "out_dir", c.out_dir);
  get_if_present(j, "modality", c.modality);
  if (j.contains("data")) {
    const auto& d = j.at("data");
    get_if_present(d, "manifest", c.data.manifest);
    get_if_present(d, "min_count", c.data.min_count);
    get_if_present(d, "per_utterance_norm", c.data.per_utterance_norm);
    get_if_present(d, "feature_cache", c.data.feature_cache);
  }
  if (j.contains("model")) {
    const auto& m = j.at("model");
    get_if_present(m, "d_model", c.model.d_model);
    get_if_present(m, "n_layers", c.model.n_layers);
    get_if_present(m, "n_heads", c.model.n_heads);
    get_if_present(m, "d_ff", c.model.d_ff);
    get_if_present(m, "dropout", c.model.dropout);
    get_if_present(m, "max_positions", c.model.max_positions);
    get_if_present(m, "spectran_layers", c.model.spectran_layers);
    get_if_present(m, "spectran_heads", c.model.spectran_heads);
    get_if_present(m, "spectran_ff", c.model.spectran_ff);
    get_if_present(m, "d_a", c.model.d_a);
    get_if_present(m, "d_shared", c.model.d_shared);
    if (m.contains("patch")) {
      const auto& p = m.at("patch");
      get_if_present(p, "frames", c.model.patch.patch_frames);
      get_if_present(p, "bands", c.model.patch.patch_bands);
      get_if_present(p, "stride_frames", c.model.patch.stride_frames);
      get_if_present(p, "stride_bands", c.model.patch.stride_bands);
    }
  }
  if (j.contains("lm")) {
    const auto& s = j.at("lm");
    get_if_present(s, "steps", c.lm.steps);
    get_if_present(s, "lr", c.lm.lr);
    get_if_present(s, "batch_size", c.lm.batch_size);
    get_if_present(s, "p_lex", c.lm.p_lex);
  }
  if (j.contains("calp")) {
    const auto& s = j.at("calp");
    get_if_present(s, "tau", c.calp.tau);
    get_if_present(s, "alpha", c.calp.alpha);
    get_if_present(s, "batch_size", c.calp.batch_size);
    get_if_present(s, "steps", c.calp.steps);
    get_if_present(s, "lr", c.calp.lr);
    get_if_present(s, "ntxent_include_positive", c.calp.ntxent_include_positive);
    get_if_present(s, "eval_interval", c.calp.eval_interval);
  }
  if (j.contains("alt")) {
    const auto& s = j.at("alt");
    get_if_present(s, "p_lex", c.alt.p_lex);
    get_if_present(s, "p_audio", c.alt.p_audio);
    get_if_present(s, "span", c.alt.span);
    get_if_present(s, "batch_size", c.alt.batch_size);
    get_if_present(s, "steps", c.alt.steps);
    get_if_present(s, "lr", c.alt.lr);
    get_if_present(s, "spectran_warmup", c.alt.spectran_warmup);
  }
  if (j.contains("finetune")) {
    const auto& s = j.at("finetune");
    get_if_present(s, "lr", c.finetune.lr);
    get_if_present(s, "batch_size", c.finetune.batch_size);
    get_if_present(s, "epochs", c.finetune.epochs);
    get_if_present(s, "steps", c.finetune.steps);
    get_if_present(s, "freeze", c.finetune.freeze);
    get_if_present(s, "threshold", c.finetune.threshold);
    get_if_present(s, "supervision_fraction", c.finetune.supervision_fraction);
  }
  c.validate();
  return c;
}

RunConfig RunConfig::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config: " + path);
  return from_json(nlohmann::json::parse(in));
}

nlohmann::json RunConfig::to_json() const {
  nlohmann::json j;
  j["seed"] = seed;
  j["out_dir"] = out_dir;
  j["modality"] = modality;
  j["data"] = {{"manifest", data.manifest},
               {"min_count", data.min_count},
               {"per_utterance_norm", data.per_utterance_norm},
               {"feature_cache", data.feature_cache}};
  j["model"] = {{"d_model", model.d_model},
                {"n_layers", model.n_layers},
                {"n_heads", model.n_heads},
                {"d_ff", model.d_ff},
                {"dropout", model.dropout},
                {"max_positions", model.max_positions},
                {"spectran_layers", model.spectran_layers},
                {"spectran_heads", model.spectran_heads},
                {"spectran_ff", model.spectran_ff},
                {"d_a", model.d_a},
                {"d_shared", model.d_shared},
                {"patch",
                 {{"frames", model.patch.patch_frames},
                  {"bands", model.patch.patch_bands},
                  {"stride_frames", model.patch.stride_frames},
                  {"stride_bands", model.patch.stride_bands}}}};
  j["lm"] = {{"steps", lm.steps}, {"lr", lm.lr}, {"batch_size", lm.batch_size}, {"p_lex", lm.p_lex}};
  j["calp"] = {{"tau", calp.tau},
               {"alpha", calp.alpha},
               {"batch_size", calp.batch_size},
               {"steps", calp.steps},
               {"lr", calp.lr},
               {"ntxent_include_positive", calp.ntxent_include_positive},
               {"eval_interval", calp.eval_interval}};
  j["alt"] = {{"p_lex", alt.p_lex},
              {"p_audio", alt.p_audio},
              {"span", alt.span},
              {"batch_size", alt.batch_size},
              {"steps", alt.steps},
              {"lr", alt.lr},
              {"spectran_warmup", alt.spectran_warmup}};
  j["finetune"] = {{"lr", finetune.lr},
                   {"batch_size", finetune.batch_size},
                   {"epochs", finetune.epochs},
                   {"steps", finetune.steps},
                   {"freeze", finetune.freeze},
                   {"threshold", finetune.threshold},
                   {"supervision_fraction", finetune.supervision_fraction}};
  return j;
}

std::string RunConfig::hash() const {
  std::string dump = to_json().dump();
  uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char ch : dump) {
    h ^= ch;
    h *= 0x100000001b3ull;
  }
  char buf[20];
  std::snprintf(buf, sizeof(buf), "%016llx", (unsigned long long)h);
  return buf;
}

void RunConfig::validate() const {
  if (modality != "both" && modality != "audio" && modality != "text")
    throw std::invalid_argument("config: modality must be both|audio|text");
  if (!(finetune.supervision_fraction > 0.0 && finetune.supervision_fraction <= 1.0))
    throw std::invalid_argument("config: supervision_fraction must be in (0,1]");
  if (calp.batch_size < 2) throw std::invalid_argument("config: calp.batch_size must be >= 2");
  spectran_config().validate();
  calp_config().validate();
  nncore::EncoderConfig{model.n_layers, model.d_model, model.n_heads,
                        model.d_ff,     model.dropout, model.max_positions}
      .validate();
}

spectran::SpecTranConfig RunConfig::spectran_config() const {
  spectran::SpecTranConfig c;
  c.patches = model.patch;
  c.d_a = model.d_a;
  c.encoder = nncore::EncoderConfig{model.spectran_layers, model.d_a,    model.spectran_heads,
                                    model.spectran_ff,     model.dropout, c.n_patches() + 1};
  return c;
}

mmtx::MultimodalConfig RunConfig::mmtx_config(int vocab_size) const {
  mmtx::MultimodalConfig c;
  c.encoder = nncore::EncoderConfig{model.n_layers, model.d_model, model.n_heads,
                                    model.d_ff,     model.dropout, model.max_positions};
  c.vocab_size = vocab_size;
  c.d_a = model.d_a;
  return c;
}

calp::CalpConfig RunConfig::calp_config() const {
  calp::CalpConfig c;
  c.tau = calp.tau;
  c.alpha = calp.alpha;
  c.d_shared = model.d_shared;
  c.include_positive = calp.ntxent_include_positive;
  return c;
}

// ---------------------------------------------------------------------------
// dataset
// ---------------------------------------------------------------------------

std::vector<const UtteranceData*> Dataset::split(const std::string& name) const {
  std::vector<const UtteranceData*> out;
  for (const auto& u : all)
    if (u.utt.split == name) out.push_back(&u);
  return out;
}

Dataset load_dataset(const RunConfig& cfg) {
  if (cfg.data.manifest.empty()) throw std::invalid_argument("config: data.manifest required");
  corpus::Manifest manifest = corpus::load_manifest(cfg.data.manifest);

  std::vector<std::string> train_transcripts;
  for (const auto& rec : manifest.records)
    if (rec.split == "train") train_transcripts.push_back(rec.transcript);
  if (train_transcripts.empty()) throw std::runtime_error("dataset: no train split records");

  Dataset ds;
  ds.vocab = corpus::build_vocab(train_transcripts, cfg.data.min_count);
  ds.label_names = manifest.label_names;
  ds.n_classes = int(manifest.label_names.size());

  for (auto& utt : corpus::make_utterances(manifest, ds.vocab)) {
    UtteranceData item;
    item.utt = utt;
    features::LogMel mel;
    std::string cache_path = utt.audio_path + ".alfc";
    if (cfg.data.feature_cache && std::filesystem::exists(cache_path)) {
      mel = features::load_feature_cache(cache_path);
    } else {
      auto wav = corpus::read_wav(utt.audio_path);
      mel = features::log_mel_i16(wav.samples);
      if (cfg.data.feature_cache) features::save_feature_cache(cache_path, mel);
    }
    if (cfg.data.per_utterance_norm) features::normalize_per_utterance(mel);
    item.blocks = features::extract_blocks(mel, features::BlockGeometry{}, mel.min_value());
    for (auto& b : item.blocks) b.utterance_id = utt.id;
    ds.all.push_back(std::move(item));
  }
  return ds;
}

// ---------------------------------------------------------------------------
// reports
// ---------------------------------------------------------------------------

nlohmann::json RunReport::to_json() const {
  nlohmann::json j;
  j["stage"] = stage;
  j["seed"] = seed;
  j["config_hash"] = config_hash;
  j["losses"] = losses;
  j["metrics"] = metrics;
  j["extra"] = extra;
  j["wall_clock_s"] = wall_clock_s;
  return j;
}

void RunReport::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write report: " + path);
  out << to_json().dump(2) << "\n";
}

namespace {

void write_run_outputs(const RunConfig& cfg, const RunReport& report) {
  std::filesystem::create_directories(cfg.out_dir);
  report.save(cfg.out_dir + "/report.json");
  std::ofstream out(cfg.out_dir + "/config.resolved.json");
  out << cfg.to_json().dump(2) << "\n";
}

// Spectran embeddings for one utterance's blocks on the given tape.
VarT<float> embed_utterance_blocks(Pipeline& pipe, TapeT<float>& tape, const UtteranceData& item) {
  return pipe.spectran_model.embed_blocks(tape, item.blocks);
}

mmtx::MultimodalInput assemble_for(Pipeline& pipe, const UtteranceData& item,
                                   const std::string& modality) {
  int n_blocks = modality == "text" ? 0 : int(item.blocks.size());
  std::vector<int> tokens;
  if (modality != "audio") {
    int limit = pipe.cfg.model.max_positions - 3 - n_blocks;
    if (limit < 1)
      throw std::runtime_error("assemble: max_positions too small for utterance " + item.utt.id);
    tokens = trimmed_tokens(item.utt.token_ids, limit);
  }
  if (tokens.empty() && n_blocks == 0)
    throw std::runtime_error("assemble: utterance " + item.utt.id + " empty under modality " +
                             modality);
  return mmtx::assemble(tokens, n_blocks, pipe.cfg.model.max_positions);
}

// Pooled frozen text states for CALP; eval mode, no gradients.
TensorT<float> pooled_text_state(Pipeline& pipe, const UtteranceData& item) {
  if (item.utt.token_ids.empty())
    throw std::runtime_error("calp: utterance " + item.utt.id + " has an empty token sequence");
  TapeT<float> tape;
  auto input = mmtx::assemble(
      trimmed_tokens(item.utt.token_ids, pipe.cfg.model.max_positions - 2), 0,
      pipe.cfg.model.max_positions);
  auto hidden = pipe.mm.encode(tape, input, VarT<float>{});
  return pipe.mm.pooled_text_state(tape, input, hidden).value();
}

}  // namespace

// ---------------------------------------------------------------------------
// stage 0: language-only masked LM pretraining
// ---------------------------------------------------------------------------

RunReport stage0_lm(const Dataset& dataset, const RunConfig& cfg) {
  auto start = std::chrono::steady_clock::now();
  Pipeline pipe(cfg, dataset.vocab.size(), dataset.n_classes);

  auto train = dataset.split("train");
  if (train.empty()) throw std::runtime_error("stage0: empty training split");

  Rng master(cfg.seed);
  BatchSampler sampler({train.begin(), train.end()}, master.fork(11));
  Rng mask_rng = master.fork(12);
  Rng dropout_rng = master.fork(13);

  AdamConfig adam_cfg;
  adam_cfg.lr = cfg.lm.lr;
  AdamT<float> adam(pipe.store.with_prefix("mm."), adam_cfg);

  mmtx::MaskingConfig mask_cfg{cfg.lm.p_lex, 0.0, 3};
  RunReport report;
  report.stage = "pretrain-lm";
  report.seed = cfg.seed;
  report.config_hash = cfg.hash();
  int empty_plans = 0;

  for (int step = 0; step < cfg.lm.steps; ++step) {
    TapeT<float> tape;
    tape.training = true;
    tape.rng = &dropout_rng;

    VarT<float> total;
    int used = 0;
    for (const auto* item : sampler.next(cfg.lm.batch_size)) {
      auto input = assemble_for(pipe, *item, "text");
      auto plan = mmtx::apply_masks(input, {}, mask_cfg, mask_rng);
      if (plan.lexical_slots.empty()) {
        ++empty_plans;
        continue;
      }
      auto parts = mmtx::alt_loss(pipe.mm, tape, input, plan, VarT<float>{});
      total = used == 0 ? parts.total : add(total, parts.total);
      ++used;
    }
    if (used == 0) {
      report.losses.push_back(0.0);
      continue;
    }
    VarT<float> loss = scale(total, 1.0 / double(used));
    tape.backward(loss.id);
    report.losses.push_back(double(loss.value().data[0]));
    adam.step();
    adam.zero_grads();
  }

  report.extra["empty_mask_plans"] = empty_plans;
  report.extra["vocab_size"] = dataset.vocab.size();
  report.extra["uniform_baseline"] = std::log(double(dataset.vocab.size()));
  report.wall_clock_s = seconds_since(start);
  pipe.save(cfg.out_dir + "/checkpoint");
  dataset.vocab.save(cfg.out_dir + "/vocab.txt");
  write_run_outputs(cfg, report);
  return report;
}

// ---------------------------------------------------------------------------
// stage 1: contrastive audio-language pretraining
// ---------------------------------------------------------------------------

RunReport stage1_calp(const Dataset& dataset, const RunConfig& cfg, const std::string& lm_ckpt) {
  auto start = std::chrono::steady_clock::now();
  Pipeline pipe(cfg, dataset.vocab.size(), dataset.n_classes);
  if (!lm_ckpt.empty()) {
    pipe.load(lm_ckpt);
  } else if (cfg.calp.alpha != 0.0) {
    throw std::invalid_argument("stage1: language weight alpha > 0 requires a stage-0 checkpoint");
  }

  auto train = dataset.split("train");
  std::vector<calp::CalpSource> sources;
  std::unordered_map<std::string, size_t> pooled_index;
  int skipped_short = 0;
  for (const auto* item : train) {
    if (item->blocks.size() < 2) {
      ++skipped_short;
      continue;
    }
    sources.push_back({item->utt.id, &item->blocks, &item->utt.token_ids});
  }
  if (int(sources.size()) < cfg.calp.batch_size)
    throw std::runtime_error("stage1: not enough utterances with two consecutive blocks");

  // language side frozen during CALP; pooled states are therefore constants
  std::vector<TensorT<float>> pooled;
  if (cfg.calp.alpha != 0.0) {
    for (const auto& src : sources) {
      for (const auto* item : train)
        if (item->utt.id == src.utterance_id) {
          pooled_index[src.utterance_id] = pooled.size();
          pooled.push_back(pooled_text_state(pipe, *item));
          break;
        }
    }
  }

  pipe.set_trainable("mm.", false);
  pipe.set_trainable("head.", false);
  std::vector<ParamT<float>*> trainables = pipe.store.with_prefix("spectran.");
  for (auto* p : pipe.store.with_prefix("calp.")) trainables.push_back(p);

  Rng master(cfg.seed);
  Rng sample_rng = master.fork(21);
  Rng dropout_rng = master.fork(22);
  AdamConfig adam_cfg;
  adam_cfg.lr = cfg.calp.lr;
  AdamT<float> adam(trainables, adam_cfg);

  calp::CalpConfig loss_cfg = cfg.calp_config();
  RunReport report;
  report.stage = "pretrain-calp";
  report.seed = cfg.seed;
  report.config_hash = cfg.hash();
  std::vector<double> retrieval_log, audio_curve, lang_curve;

  for (int step = 0; step < cfg.calp.steps; ++step) {
    auto triples = calp::sample_triples(sources, cfg.calp.batch_size, sample_rng);
    TapeT<float> tape;
    tape.training = true;
    tape.rng = &dropout_rng;

    std::vector<VarT<float>> rows_t, rows_t1;
    TensorT<float> pooled_batch(int64_t(triples.size()), cfg.model.d_model);
    for (size_t i = 0; i < triples.size(); ++i) {
      rows_t.push_back(pipe.spectran_model.embed_block(tape, triples[i].a_t));
      rows_t1.push_back(pipe.spectran_model.embed_block(tape, triples[i].a_t1));
      if (cfg.calp.alpha != 0.0) {
        const auto& row = pooled[pooled_index.at(triples[i].utterance_id)];
        for (int64_t c = 0; c < cfg.model.d_model; ++c)
          pooled_batch.at(int64_t(i), c) = row.at(0, c);
      }
    }
    VarT<float> u_t = pipe.calp_proj.project_audio(tape, concat_rows(rows_t));
    VarT<float> u_t1 = pipe.calp_proj.project_audio(tape, concat_rows(rows_t1));
    VarT<float> v = cfg.calp.alpha != 0.0
                        ? pipe.calp_proj.project_language(tape, leaf(tape, pooled_batch))
                        : VarT<float>{};

    VarT<float> audio_term =
        mean_all(ntxent_rows(matmul(u_t, transpose(u_t1)), loss_cfg.tau, loss_cfg.include_positive));
    VarT<float> loss = audio_term;
    if (cfg.calp.alpha != 0.0) {
      VarT<float> lang_term =
          mean_all(ntxent_rows(matmul(u_t, transpose(v)), loss_cfg.tau, loss_cfg.include_positive));
      loss = add(audio_term, scale(lang_term, cfg.calp.alpha));
      lang_curve.push_back(double(lang_term.value().data[0]));
    }
    audio_curve.push_back(double(audio_term.value().data[0]));
    tape.backward(loss.id);
    report.losses.push_back(double(loss.value().data[0]));
    adam.step();
    adam.zero_grads();

    if (cfg.calp.eval_interval > 0 && (step + 1) % cfg.calp.eval_interval == 0 &&
        cfg.calp.alpha != 0.0) {
      retrieval_log.push_back(calp::retrieval_top1(u_t.value(), v.value()));
    }
  }

  report.extra["skipped_short_utterances"] = skipped_short;
  report.extra["audio_term_curve"] = audio_curve;
  report.extra["lang_term_curve"] = lang_curve;
  report.extra["retrieval_top1"] = retrieval_log;
  report.wall_clock_s = seconds_since(start);
  pipe.save(cfg.out_dir + "/checkpoint");
  write_run_outputs(cfg, report);
  return report;
}

// ---------------------------------------------------------------------------
// stage 2: joint masked audio/language pretraining
// ---------------------------------------------------------------------------

RunReport stage2_alt(const Dataset& dataset, const RunConfig& cfg, const std::string& init_ckpt) {
  auto start = std::chrono::steady_clock::now();
  Pipeline pipe(cfg, dataset.vocab.size(), dataset.n_classes);
  if (!init_ckpt.empty()) pipe.load(init_ckpt);

  auto train = dataset.split("train");
  if (train.empty()) throw std::runtime_error("stage2: empty training split");

  pipe.set_trainable("calp.", false);
  pipe.set_trainable("head.", false);
  std::vector<ParamT<float>*> trainables = pipe.store.with_prefix("spectran.");
  for (auto* p : pipe.store.with_prefix("mm.")) trainables.push_back(p);
  if (cfg.alt.spectran_warmup > 0) pipe.set_trainable("spectran.", false);

  Rng master(cfg.seed);
  BatchSampler sampler({train.begin(), train.end()}, master.fork(31));
  Rng mask_rng = master.fork(32);
  Rng dropout_rng = master.fork(33);
  AdamConfig adam_cfg;
  adam_cfg.lr = cfg.alt.lr;
  AdamT<float> adam(trainables, adam_cfg);

  mmtx::MaskingConfig mask_cfg{cfg.alt.p_lex, cfg.alt.p_audio, cfg.alt.span};
  RunReport report;
  report.stage = "pretrain-alt";
  report.seed = cfg.seed;
  report.config_hash = cfg.hash();
  std::vector<double> mlm_curve, mam_curve;
  int empty_plans = 0;

  for (int step = 0; step < cfg.alt.steps; ++step) {
    if (step == cfg.alt.spectran_warmup) pipe.set_trainable("spectran.", true);
    TapeT<float> tape;
    tape.training = true;
    tape.rng = &dropout_rng;

    VarT<float> total;
    int used = 0, mlm_n = 0, mam_n = 0;
    double mlm_sum = 0, mam_sum = 0;
    for (const auto* item : sampler.next(cfg.alt.batch_size)) {
      auto input = assemble_for(pipe, *item, cfg.modality);
      auto plan = mmtx::apply_masks(
          input, cfg.modality == "text" ? std::vector<features::AcousticBlock>{} : item->blocks,
          mask_cfg, mask_rng);
      if (plan.empty()) {
        ++empty_plans;
        continue;
      }
      VarT<float> acoustic = input.n_blocks > 0 ? embed_utterance_blocks(pipe, tape, *item)
                                                : VarT<float>{};
      auto parts = mmtx::alt_loss(pipe.mm, tape, input, plan, acoustic);
      total = used == 0 ? parts.total : add(total, parts.total);
      ++used;
      if (parts.has_mlm) {
        mlm_sum += parts.mlm;
        ++mlm_n;
      }
      if (parts.has_mam) {
        mam_sum += parts.mam;
        ++mam_n;
      }
    }
    if (used == 0) {
      report.losses.push_back(0.0);
      mlm_curve.push_back(0.0);
      mam_curve.push_back(0.0);
      continue;
    }
    VarT<float> loss = scale(total, 1.0 / double(used));
    tape.backward(loss.id);
    report.losses.push_back(double(loss.value().data[0]));
    mlm_curve.push_back(mlm_n ? mlm_sum / mlm_n : 0.0);
    mam_curve.push_back(mam_n ? mam_sum / mam_n : 0.0);
    adam.step();
    adam.zero_grads();
  }

  report.extra["mlm_curve"] = mlm_curve;
  report.extra["mam_curve"] = mam_curve;
  report.extra["empty_mask_plans"] = empty_plans;
  report.wall_clock_s = seconds_since(start);
  pipe.save(cfg.out_dir + "/checkpoint");
  write_run_outputs(cfg, report);
  return report;
}

// ---------------------------------------------------------------------------
// stage 3: supervised fine-tuning
// ---------------------------------------------------------------------------

namespace {

// Stratified (by full label pattern) deterministic subsample.
std::vector<const UtteranceData*> subsample_supervision(
    const std::vector<const UtteranceData*>& train, double fraction, Rng rng) {
  if (fraction >= 1.0) return train;
  std::map<std::string, std::vector<const UtteranceData*>> groups;
  for (const auto* item : train) {
    std::string key;
    for (int v : item->utt.label_vector) key += char('0' + v);
    groups[key].push_back(item);
  }
  std::vector<const UtteranceData*> out;
  for (auto& [key, members] : groups) {
    rng.shuffle(members);
    size_t keep = std::max<size_t>(1, size_t(std::floor(fraction * double(members.size()) + 0.5)));
    for (size_t i = 0; i < keep && i < members.size(); ++i) out.push_back(members[i]);
  }
  return out;
}

TensorT<float> label_tensor(const UtteranceData& item) {
  TensorT<float> t(1, int64_t(item.utt.label_vector.size()));
  for (size_t c = 0; c < item.utt.label_vector.size(); ++c)
    t.at(0, int64_t(c)) = float(item.utt.label_vector[c]);
  return t;
}

}  // namespace

heads::ConfusionCounts evaluate_counts(Pipeline& pipe, const Dataset& dataset,
                                       const std::string& split, const std::string& modality,
                                       double threshold) {
  auto items = dataset.split(split);
  if (items.empty()) throw std::invalid_argument("evaluate: unknown or empty split " + split);
  heads::ConfusionCounts counts(dataset.n_classes);
  for (const auto* item : items) {
    TapeT<float> tape;  // eval mode: no dropout, frozen everything
    auto input = assemble_for(pipe, *item, modality);
    VarT<float> acoustic =
        input.n_blocks > 0 ? embed_utterance_blocks(pipe, tape, *item) : VarT<float>{};
    auto hidden = pipe.mm.encode(tape, input, acoustic);
    auto logits = pipe.head.forward(tape, pipe.mm.cls_state(hidden));
    std::vector<double> z;
    for (int64_t c = 0; c < logits.cols(); ++c) z.push_back(double(logits.value().at(0, c)));
    counts.add(item->utt.label_vector, heads::predict(z, threshold));
  }
  return counts;
}

RunReport stage3_finetune(const Dataset& dataset, const RunConfig& cfg,
                          const std::string& init_ckpt) {
  auto start = std::chrono::steady_clock::now();
  Pipeline pipe(cfg, dataset.vocab.size(), dataset.n_classes);
  if (!init_ckpt.empty()) pipe.load(init_ckpt);

  auto train_full = dataset.split("train");
  if (train_full.empty()) throw std::runtime_error("stage3: empty training split");

  Rng master(cfg.seed);
  auto train = subsample_supervision(train_full, cfg.finetune.supervision_fraction,
                                     master.fork(41));

  pipe.set_trainable("calp.", false);
  if (cfg.finetune.freeze) {
    pipe.set_trainable("spectran.", false);
    pipe.set_trainable("mm.", false);
  }
  std::vector<ParamT<float>*> trainables = pipe.store.with_prefix("head.");
  if (!cfg.finetune.freeze) {
    for (auto* p : pipe.store.with_prefix("spectran.")) trainables.push_back(p);
    for (auto* p : pipe.store.with_prefix("mm.")) trainables.push_back(p);
  }

  BatchSampler sampler({train.begin(), train.end()}, master.fork(42));
  Rng dropout_rng = master.fork(43);
  AdamConfig adam_cfg;
  adam_cfg.lr = cfg.finetune.lr;
  AdamT<float> adam(trainables, adam_cfg);

  int steps_per_epoch =
      std::max(1, int((train.size() + size_t(cfg.finetune.batch_size) - 1) /
                      size_t(cfg.finetune.batch_size)));
  int total_steps =
      cfg.finetune.steps > 0 ? cfg.finetune.steps : cfg.finetune.epochs * steps_per_epoch;

  RunReport report;
  report.stage = "finetune";
  report.seed = cfg.seed;
  report.config_hash = cfg.hash();
  std::vector<double> val_wa_curve;

  for (int step = 0; step < total_steps; ++step) {
    TapeT<float> tape;
    tape.training = true;
    tape.rng = &dropout_rng;

    VarT<float> total;
    int used = 0;
    for (const auto* item : sampler.next(cfg.finetune.batch_size)) {
      auto input = assemble_for(pipe, *item, cfg.modality);
      VarT<float> acoustic =
          input.n_blocks > 0 ? embed_utterance_blocks(pipe, tape, *item) : VarT<float>{};
      auto hidden = pipe.mm.encode(tape, input, acoustic);
      auto logits = pipe.head.forward(tape, pipe.mm.cls_state(hidden));
      auto l = heads::bce_loss(logits, label_tensor(*item));
      total = used == 0 ? l : add(total, l);
      ++used;
    }
    VarT<float> loss = scale(total, 1.0 / double(used));
    tape.backward(loss.id);
    report.losses.push_back(double(loss.value().data[0]));
    adam.step();
    adam.zero_grads();

    if ((step + 1) % steps_per_epoch == 0 && !dataset.split("val").empty()) {
      auto counts = evaluate_counts(pipe, dataset, "val", cfg.modality, cfg.finetune.threshold);
      val_wa_curve.push_back(heads::compute_metrics(counts).weighted_accuracy);
    }
  }

  auto test_counts = evaluate_counts(pipe, dataset, "test", cfg.modality, cfg.finetune.threshold);
  auto m = heads::compute_metrics(test_counts);
  report.metrics = {{"test_wa", m.weighted_accuracy},
                    {"test_acc", m.accuracy},
                    {"test_f1_micro", m.f1_micro}};
  auto train_counts = evaluate_counts(pipe, dataset, "train", cfg.modality, cfg.finetune.threshold);
  report.metrics["train_wa"] = heads::compute_metrics(train_counts).weighted_accuracy;
  report.extra["val_wa_curve"] = val_wa_curve;
  report.extra["supervision_items"] = train.size();
  report.wall_clock_s = seconds_since(start);
  pipe.save(cfg.out_dir + "/checkpoint");
  write_run_outputs(cfg, report);
  return report;
}

// ---------------------------------------------------------------------------
// evaluation
// ---------------------------------------------------------------------------

RunReport evaluate(const Dataset& dataset, const RunConfig& cfg, const std::string& ckpt,
                   const std::string& split) {
  auto start = std::chrono::steady_clock::now();
  if (ckpt.empty()) throw std::invalid_argument("evaluate: checkpoint path required");
  Pipeline pipe(cfg, dataset.vocab.size(), dataset.n_classes);
  pipe.load(ckpt);

  auto counts = evaluate_counts(pipe, dataset, split, cfg.modality, cfg.finetune.threshold);
  auto m = heads::compute_metrics(counts);

  RunReport report;
  report.stage = "eval";
  report.seed = cfg.seed;
  report.config_hash = cfg.hash();
  report.metrics = {{"wa", m.weighted_accuracy}, {"acc", m.accuracy}, {"f1_micro", m.f1_micro}};
  nlohmann::json per_class = nlohmann::json::array();
  for (int c = 0; c < counts.n_classes; ++c) {
    per_class.push_back({{"class", dataset.label_names[size_t(c)]},
                         {"tp", counts.tp[size_t(c)]},
                         {"fp", counts.fp[size_t(c)]},
                         {"tn", counts.tn[size_t(c)]},
                         {"fn", counts.fn[size_t(c)]}});
  }
  report.extra["per_class"] = per_class;
  report.extra["split"] = split;
  report.extra["modality"] = cfg.modality;
  report.extra["checkpoint"] = ckpt;
  for (int c : m.degenerate_classes) report.extra["degenerate_classes"].push_back(c);
  report.wall_clock_s = seconds_since(start);
  write_run_outputs(cfg, report);
  return report;
}

double calp_retrieval_probe(Pipeline& pipe, const Dataset& dataset, int batch_size, int n_batches,
                            uint64_t seed) {
  auto train = dataset.split("train");
  std::vector<calp::CalpSource> sources;
  std::unordered_map<std::string, const UtteranceData*> by_id;
  for (const auto* item : train) {
    if (item->blocks.size() < 2) continue;
    sources.push_back({item->utt.id, &item->blocks, &item->utt.token_ids});
    by_id[item->utt.id] = item;
  }
  Rng rng(seed);
  double total = 0;
  for (int b = 0; b < n_batches; ++b) {
    auto triples = calp::sample_triples(sources, batch_size, rng);
    TapeT<float> tape;
    std::vector<VarT<float>> rows_t;
    TensorT<float> pooled_batch(int64_t(triples.size()), pipe.cfg.model.d_model);
    for (size_t i = 0; i < triples.size(); ++i) {
      rows_t.push_back(pipe.spectran_model.embed_block(tape, triples[i].a_t));
      auto row = pooled_text_state(pipe, *by_id.at(triples[i].utterance_id));
      for (int64_t c = 0; c < pipe.cfg.model.d_model; ++c)
        pooled_batch.at(int64_t(i), c) = row.at(0, c);
    }
    auto u_t = pipe.calp_proj.project_audio(tape, concat_rows(rows_t));
    auto v = pipe.calp_proj.project_language(tape, leaf(tape, pooled_batch));
    total += calp::retrieval_top1(u_t.value(), v.value());
  }
  return total / double(n_batches);
}

// ---------------------------------------------------------------------------
// gradient-check command
// ---------------------------------------------------------------------------

namespace {

template <class S>
GradCheckReport gradcheck_impl(bool corrupt, uint64_t seed, double tolerance, double h) {
  RunConfig cfg;
  cfg.seed = seed;
  cfg.model.d_model = 16;
  cfg.model.n_layers = 1;
  cfg.model.n_heads = 2;
  cfg.model.d_ff = 32;
  cfg.model.dropout = 0.0;
  cfg.model.max_positions = 64;
  cfg.model.spectran_layers = 1;
  cfg.model.spectran_heads = 2;
  cfg.model.spectran_ff = 32;
  cfg.model.d_a = 8;
  cfg.model.d_shared = 8;

  PipelineT<S> pipe(cfg, 12, 3);
  // healthy weight scale so attention gradients clear the e-8 noise floor of
  // the relative-error metric
  Rng reinit(seed ^ 0x51ull);
  for (auto* p : pipe.store.all()) p->value = TensorT<S>::randn(p->value.shape, reinit, 0.4);

  Rng data_rng(seed ^ 0x52ull);
  GradCheckReport out;
  auto run = [&](const std::function<double(bool)>& fn, std::vector<ParamT<S>*> params,
                 int probes) {
    auto wrapped = [&, fn](bool with_grad) {
      double v = fn(with_grad);
      if (with_grad && corrupt) {
        for (auto* p : params)
          for (auto& gv : p->grad.data) gv += S(1);
      }
      return v;
    };
    return nncore::grad_check<S>(wrapped, params, probes, h, seed ^ 0x53ull);
  };

  {  // CALP through projections and normalization, M = 4
    auto& a_t = pipe.store.create("probe.calp.a_t", {4, cfg.model.d_a});
    auto& a_t1 = pipe.store.create("probe.calp.a_t1", {4, cfg.model.d_a});
    auto& lang = pipe.store.create("probe.calp.lang", {4, cfg.model.d_model});
    for (auto* p : {&a_t, &a_t1}) p->value = TensorT<S>::randn(p->value.shape, data_rng, 1.0);
    lang.value = TensorT<S>::randn(lang.value.shape, data_rng, 1.0);
    calp::CalpConfig ccfg = cfg.calp_config();
    std::vector<ParamT<S>*> params{&a_t, &a_t1, &lang, pipe.calp_proj.audio_w,
                                   pipe.calp_proj.lang_w};
    auto fn = [&](bool with_grad) {
      TapeT<S> tape;
      auto u_t = pipe.calp_proj.project_audio(tape, leaf_param(tape, a_t));
      auto u_t1 = pipe.calp_proj.project_audio(tape, leaf_param(tape, a_t1));
      auto v = pipe.calp_proj.project_language(tape, leaf_param(tape, lang));
      auto l = calp::calp_loss_var(tape, u_t, u_t1, v, ccfg);
      if (with_grad) tape.backward(l.id);
      return double(l.value().data[0]);
    };
    out.calp_err = run(fn, params, 50);
  }

  {  // MLM + MAM through the full multimodal encoder
    auto input = mmtx::assemble({5, 6, 7, 8, 9}, 2, cfg.model.max_positions);
    features::AcousticBlock b1, b2;
    b1.values.resize(3200);
    b2.values.resize(3200);
    for (auto& v : b1.values) v = float(data_rng.gauss());
    for (auto& v : b2.values) v = float(data_rng.gauss());
    Rng mask_rng(seed ^ 0x54ull);
    mmtx::MaskPlan plan;
    do {
      auto fresh = mmtx::assemble({5, 6, 7, 8, 9}, 2, cfg.model.max_positions);
      plan = mmtx::apply_masks(fresh, {b1, b2}, {0.4, 0.6, 2}, mask_rng);
      input = fresh;
    } while (plan.lexical_slots.empty() || plan.acoustic_indices.empty());
    auto& acoustic = pipe.store.create("probe.alt.acoustic", {2, cfg.model.d_a});
    acoustic.value = TensorT<S>::randn(acoustic.value.shape, data_rng, 1.0);
    std::vector<ParamT<S>*> params = pipe.store.with_prefix("mm.");
    params.push_back(&acoustic);
    auto fn = [&](bool with_grad) {
      TapeT<S> tape;
      auto parts = mmtx::alt_loss(pipe.mm, tape, input, plan, leaf_param(tape, acoustic));
      if (with_grad) tape.backward(parts.total.id);
      return double(parts.total.value().data[0]);
    };
    out.alt_err = run(fn, params, 80);
  }

  {  // BCE through the supervised head
    auto& cls = pipe.store.create("probe.bce.cls", {1, cfg.model.d_model});
    cls.value = TensorT<S>::randn(cls.value.shape, data_rng, 1.0);
    TensorT<S> labels(1, 3);
    labels.at(0, 0) = S(1);
    labels.at(0, 2) = S(1);
    std::vector<ParamT<S>*> params = pipe.store.with_prefix("head.");
    params.push_back(&cls);
    auto fn = [&](bool with_grad) {
      TapeT<S> tape;
      auto l = heads::bce_loss(pipe.head.forward(tape, leaf_param(tape, cls)), labels);
      if (with_grad) tape.backward(l.id);
      return double(l.value().data[0]);
    };
    out.bce_err = run(fn, params, 40);
  }

  out.pass = out.worst() <= tolerance;
  return out;
}

}  // namespace

GradCheckReport gradcheck_run(bool use_f64, bool corrupt, uint64_t seed, double tolerance) {
  if (use_f64) return gradcheck_impl<double>(corrupt, seed, tolerance, 1e-3);
  return gradcheck_impl<float>(corrupt, seed, tolerance, 1e-2);
}

// ---------------------------------------------------------------------------
// ablation harnesses
// ---------------------------------------------------------------------------

namespace {

RunConfig arm_config(const RunConfig& base, const std::string& manifest, uint64_t seed,
                     const std::string& out_dir) {
  RunConfig cfg = base;
  cfg.seed = seed;
  cfg.data.manifest = manifest;
  cfg.out_dir = out_dir;
  return cfg;
}

AblationArm finetune_arm(const std::string& name, const Dataset& ds, const RunConfig& cfg,
                         const std::string& init_ckpt) {
  auto report = stage3_finetune(ds, cfg, init_ckpt);
  AblationArm arm;
  arm.name = name;
  arm.test_wa = report.metrics.at("test_wa").get<double>();
  arm.test_acc = report.metrics.at("test_acc").get<double>();
  arm.test_f1 = report.metrics.at("test_f1_micro").get<double>();
  return arm;
}

}  // namespace

std::vector<AblationArm> run_pipeline_ablation(const std::string& manifest, const RunConfig& base,
                                               uint64_t seed, const std::string& work_dir) {
  std::vector<AblationArm> arms;
  RunConfig cfg = arm_config(base, manifest, seed, work_dir + "/lm");
  Dataset ds = load_dataset(cfg);

  stage0_lm(ds, cfg);
  std::string lm_ckpt = cfg.out_dir + "/checkpoint";

  {  // supervised head only, random frozen backbone
    RunConfig c = arm_config(base, manifest, seed, work_dir + "/supervised_only");
    arms.push_back(finetune_arm("supervised_only", ds, c, ""));
  }
  {  // stage-2 pretraining only (multimodal transformer from the LM init)
    RunConfig c2 = arm_config(base, manifest, seed, work_dir + "/alt_only");
    c2.modality = "both";
    stage2_alt(ds, c2, lm_ckpt);
    RunConfig c3 = arm_config(base, manifest, seed, work_dir + "/alt_only_ft");
    arms.push_back(finetune_arm("stage2_only", ds, c3, c2.out_dir + "/checkpoint"));
  }
  {  // full pipeline: LM, CALP, ALT, fine-tune
    RunConfig c1 = arm_config(base, manifest, seed, work_dir + "/calp");
    stage1_calp(ds, c1, lm_ckpt);
    RunConfig c2 = arm_config(base, manifest, seed, work_dir + "/full_alt");
    c2.modality = "both";
    stage2_alt(ds, c2, c1.out_dir + "/checkpoint");
    RunConfig c3 = arm_config(base, manifest, seed, work_dir + "/full_ft");
    arms.push_back(finetune_arm("full_pipeline", ds, c3, c2.out_dir + "/checkpoint"));
  }
  return arms;
}

std::vector<AblationArm> run_alpha_ablation(const std::string& manifest, const RunConfig& base,
                                            uint64_t seed, const std::string& work_dir) {
  std::vector<AblationArm> arms;
  RunConfig cfg = arm_config(base, manifest, seed, work_dir + "/lm");
  Dataset ds = load_dataset(cfg);
  stage0_lm(ds, cfg);
  std::string lm_ckpt = cfg.out_dir + "/checkpoint";

  for (double alpha : {0.25, 0.0}) {
    std::string tag = alpha == 0.0 ? "alpha0" : "alpha025";
    RunConfig c1 = arm_config(base, manifest, seed, work_dir + "/" + tag + "_calp");
    c1.calp.alpha = alpha;
    stage1_calp(ds, c1, lm_ckpt);
    RunConfig c2 = arm_config(base, manifest, seed, work_dir + "/" + tag + "_alt");
    c2.modality = "both";
    stage2_alt(ds, c2, c1.out_dir + "/checkpoint");
    RunConfig c3 = arm_config(base, manifest, seed, work_dir + "/" + tag + "_ft");
    c3.modality = "audio";  // cross-modal transfer is measured audio-only
    arms.push_back(finetune_arm(tag, ds, c3, c2.out_dir + "/checkpoint"));
  }
  return arms;
}

std::vector<AblationArm> run_patch_sweep(const std::string& manifest, const RunConfig& base,
                                         const std::vector<features::PatchGeometry>& geometries,
                                         uint64_t seed, const std::string& work_dir) {
  std::vector<AblationArm> arms;
  for (size_t gi = 0; gi < geometries.size(); ++gi) {
    const auto& g = geometries[gi];
    std::string tag = "patch_" + std::to_string(g.patch_frames) + "x" +
                      std::to_string(g.patch_bands) + "_s" + std::to_string(g.stride_frames) +
                      "x" + std::to_string(g.stride_bands);
    RunConfig cfg = arm_config(base, manifest, seed, work_dir + "/" + tag + "/lm");
    cfg.model.patch = g;
    Dataset ds = load_dataset(cfg);
    stage0_lm(ds, cfg);
    RunConfig c1 = arm_config(cfg, manifest, seed, work_dir + "/" + tag + "/calp");
    stage1_calp(ds, c1, cfg.out_dir + "/checkpoint");
    RunConfig c2 = arm_config(cfg, manifest, seed, work_dir + "/" + tag + "/alt");
    stage2_alt(ds, c2, c1.out_dir + "/checkpoint");
    RunConfig c3 = arm_config(cfg, manifest, seed, work_dir + "/" + tag + "/ft");
    arms.push_back(finetune_arm(tag, ds, c3, c2.out_dir + "/checkpoint"));
  }
  return arms;
}

}  // namespace alp::trainer
