#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "alp/synth.h"
#include "alp/trainer.h"

using namespace alp;
using namespace alp::trainer;

namespace {

std::filesystem::path temp_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / name;
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

std::vector<char> read_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// One shared tiny corpus for the whole suite.
const std::string& corpus_manifest() {
  static std::string path = [] {
    auto dir = temp_dir("alp_trainer_corpus");
    corpus::SynthOptions opt;
    opt.n_utterances = 60;
    opt.n_classes = 3;
    opt.snr_db = 25.0;
    opt.seed = 404;
    opt.out_dir = dir.string();
    corpus::synth_corpus(opt);
    return (dir / "manifest.jsonl").string();
  }();
  return path;
}

RunConfig tiny_config(const std::string& out_dir) {
  RunConfig cfg;
  cfg.seed = 9;
  cfg.out_dir = out_dir;
  cfg.data.manifest = corpus_manifest();
  // per-band MVN strips the stationary band-energy structure that makes the
  // tone corpus predictable; the synthetic experiments run on raw log-mel
  cfg.data.per_utterance_norm = false;
  cfg.model.d_model = 16;
  cfg.model.n_layers = 1;
  cfg.model.n_heads = 2;
  cfg.model.d_ff = 32;
  cfg.model.dropout = 0.1;
  cfg.model.max_positions = 64;
  cfg.model.spectran_layers = 1;
  cfg.model.spectran_heads = 2;
  cfg.model.spectran_ff = 32;
  cfg.model.d_a = 16;
  cfg.model.d_shared = 16;
  cfg.lm.steps = 40;
  cfg.lm.batch_size = 8;
  cfg.lm.lr = 1e-3;
  cfg.calp.steps = 15;
  cfg.calp.batch_size = 8;
  cfg.calp.lr = 1e-3;
  cfg.calp.eval_interval = 5;
  cfg.alt.steps = 15;
  cfg.alt.batch_size = 4;
  cfg.alt.lr = 1e-3;
  cfg.finetune.steps = 15;
  cfg.finetune.batch_size = 8;
  cfg.finetune.lr = 1e-3;
  return cfg;
}

}  // namespace

TEST_CASE("config round trip preserves every field") {
  RunConfig cfg = tiny_config("x");
  cfg.calp.alpha = 0.5;
  cfg.finetune.supervision_fraction = 0.4;
  cfg.modality = "audio";
  RunConfig back = RunConfig::from_json(cfg.to_json());
  CHECK(back.to_json() == cfg.to_json());
  CHECK(back.hash() == cfg.hash());
  CHECK(back.hash() != tiny_config("x").hash());
}

TEST_CASE("config validation") {
  RunConfig cfg = tiny_config("x");
  cfg.modality = "vision";
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = tiny_config("x");
  cfg.finetune.supervision_fraction = 0.0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = tiny_config("x");
  cfg.model.d_model = 15;  // not divisible by heads
  CHECK_THROWS_AS(RunConfig::from_json(cfg.to_json()), std::invalid_argument);
}

TEST_CASE("dataset loading produces blocks and splits") {
  RunConfig cfg = tiny_config(temp_dir("alp_tr_ds").string());
  Dataset ds = load_dataset(cfg);
  CHECK(ds.n_classes == 3);
  CHECK(ds.all.size() == 60);
  CHECK(ds.split("train").size() == 48);
  CHECK(ds.split("val").size() == 6);
  CHECK(ds.split("test").size() == 6);
  for (const auto& item : ds.all) {
    CHECK(!item.blocks.empty());
    // synthetic audio is 1.5 s - 3.0 s: 148-298 frames, so 4-9 full blocks
    CHECK(item.blocks.size() >= 4);
    CHECK(item.blocks.size() <= 9);
    CHECK(item.utt.label_vector.size() == 3);
  }
}

TEST_CASE("stage0: zero steps leaves the checkpoint at initialization") {
  auto dir = temp_dir("alp_tr_lm0");
  RunConfig cfg = tiny_config(dir.string());
  cfg.lm.steps = 0;
  Dataset ds = load_dataset(cfg);
  stage0_lm(ds, cfg);

  Pipeline fresh(cfg, ds.vocab.size(), ds.n_classes);
  Pipeline loaded(cfg, ds.vocab.size(), ds.n_classes);
  loaded.load(dir.string() + "/checkpoint");
  for (auto* p : fresh.store.all()) {
    const auto& q = loaded.store.get(p->name);
    CHECK(p->value.data == q.value.data);
  }
}

TEST_CASE("stage0: MLM loss falls below the uniform baseline") {
  auto dir = temp_dir("alp_tr_lm");
  RunConfig cfg = tiny_config(dir.string());
  cfg.lm.steps = 200;
  Dataset ds = load_dataset(cfg);
  auto report = stage0_lm(ds, cfg);
  double baseline = std::log(double(ds.vocab.size()));
  CHECK(report.losses.back() < baseline);
  CHECK(report.extra.at("uniform_baseline").get<double>() ==
        doctest::Approx(baseline).epsilon(1e-12));
}

TEST_CASE("stage0 determinism: same seed gives identical checkpoints") {
  auto d1 = temp_dir("alp_tr_det1");
  auto d2 = temp_dir("alp_tr_det2");
  RunConfig c1 = tiny_config(d1.string());
  RunConfig c2 = tiny_config(d2.string());
  Dataset ds = load_dataset(c1);
  auto r1 = stage0_lm(ds, c1);
  auto r2 = stage0_lm(ds, c2);
  CHECK(r1.losses == r2.losses);
  CHECK(read_bytes(d1 / "checkpoint" / "params.bin") == read_bytes(d2 / "checkpoint" / "params.bin"));
}

TEST_CASE("stage1: alpha=0 trains audio only and leaves the language encoder untouched") {
  auto lm_dir = temp_dir("alp_tr_c_lm");
  RunConfig lm_cfg = tiny_config(lm_dir.string());
  Dataset ds = load_dataset(lm_cfg);
  stage0_lm(ds, lm_cfg);

  auto dir = temp_dir("alp_tr_calp0");
  RunConfig cfg = tiny_config(dir.string());
  cfg.calp.alpha = 0.0;
  auto report = stage1_calp(ds, cfg, lm_dir.string() + "/checkpoint");
  for (double l : report.losses) CHECK(std::isfinite(l));
  CHECK(report.extra.at("lang_term_curve").empty());

  // language-side tensors bit-identical to the stage-0 checkpoint
  Pipeline before(cfg, ds.vocab.size(), ds.n_classes);
  before.load(lm_dir.string() + "/checkpoint");
  Pipeline after(cfg, ds.vocab.size(), ds.n_classes);
  after.load(dir.string() + "/checkpoint");
  for (auto* p : before.store.with_prefix("mm.")) {
    CHECK(after.store.get(p->name).value.data == p->value.data);
  }
  // and the audio side moved
  bool spectran_moved = false;
  for (auto* p : before.store.with_prefix("spectran.")) {
    if (after.store.get(p->name).value.data != p->value.data) spectran_moved = true;
  }
  CHECK(spectran_moved);
}

TEST_CASE("stage1: language weight without a stage-0 checkpoint is an error") {
  RunConfig cfg = tiny_config(temp_dir("alp_tr_calp_err").string());
  Dataset ds = load_dataset(cfg);
  CHECK_THROWS_AS(stage1_calp(ds, cfg, ""), std::invalid_argument);
}

TEST_CASE("stage2: deterministic loss traces and separate MLM/MAM curves") {
  auto lm_dir = temp_dir("alp_tr_a_lm");
  RunConfig lm_cfg = tiny_config(lm_dir.string());
  Dataset ds = load_dataset(lm_cfg);
  stage0_lm(ds, lm_cfg);

  auto d1 = temp_dir("alp_tr_alt1");
  auto d2 = temp_dir("alp_tr_alt2");
  RunConfig c1 = tiny_config(d1.string());
  RunConfig c2 = tiny_config(d2.string());
  auto r1 = stage2_alt(ds, c1, lm_dir.string() + "/checkpoint");
  auto r2 = stage2_alt(ds, c2, lm_dir.string() + "/checkpoint");
  CHECK(r1.losses == r2.losses);
  CHECK(r1.extra.at("mlm_curve").get<std::vector<double>>() ==
        r2.extra.at("mlm_curve").get<std::vector<double>>());
}

TEST_CASE("stage2: MAM-only training decreases the MAM loss in trend") {
  auto lm_dir = temp_dir("alp_tr_mam_lm");
  RunConfig lm_cfg = tiny_config(lm_dir.string());
  Dataset ds = load_dataset(lm_cfg);
  stage0_lm(ds, lm_cfg);

  auto dir = temp_dir("alp_tr_mam");
  RunConfig cfg = tiny_config(dir.string());
  cfg.alt.p_lex = 0.0;  // text masking off
  cfg.alt.steps = 150;
  cfg.alt.batch_size = 4;
  auto report = stage2_alt(ds, cfg, lm_dir.string() + "/checkpoint");
  auto mlm = report.extra.at("mlm_curve").get<std::vector<double>>();
  auto mam = report.extra.at("mam_curve").get<std::vector<double>>();
  for (double v : mlm) CHECK(v == 0.0);  // no lexical masking, no MLM term
  double early = 0, late = 0;
  int third = int(mam.size()) / 3;
  for (int i = 0; i < third; ++i) early += mam[size_t(i)];
  for (int i = int(mam.size()) - third; i < int(mam.size()); ++i) late += mam[size_t(i)];
  CHECK(late / third < early / third);
}

TEST_CASE("stage3: freeze keeps every backbone tensor bit-identical") {
  auto lm_dir = temp_dir("alp_tr_f_lm");
  RunConfig lm_cfg = tiny_config(lm_dir.string());
  Dataset ds = load_dataset(lm_cfg);
  stage0_lm(ds, lm_cfg);

  auto dir = temp_dir("alp_tr_ft");
  RunConfig cfg = tiny_config(dir.string());
  cfg.finetune.freeze = true;
  stage3_finetune(ds, cfg, lm_dir.string() + "/checkpoint");

  Pipeline before(cfg, ds.vocab.size(), ds.n_classes);
  before.load(lm_dir.string() + "/checkpoint");
  Pipeline after(cfg, ds.vocab.size(), ds.n_classes);
  after.load(dir.string() + "/checkpoint");
  for (const std::string prefix : {"spectran.", "mm.", "calp."})
    for (auto* p : before.store.with_prefix(prefix))
      CHECK(after.store.get(p->name).value.data == p->value.data);
  bool head_moved = false;
  for (auto* p : before.store.with_prefix("head."))
    if (after.store.get(p->name).value.data != p->value.data) head_moved = true;
  CHECK(head_moved);
}

TEST_CASE("stage3: unfreeze moves backbone tensors") {
  auto lm_dir = temp_dir("alp_tr_uf_lm");
  RunConfig lm_cfg = tiny_config(lm_dir.string());
  Dataset ds = load_dataset(lm_cfg);
  stage0_lm(ds, lm_cfg);

  auto dir = temp_dir("alp_tr_uft");
  RunConfig cfg = tiny_config(dir.string());
  cfg.finetune.freeze = false;
  stage3_finetune(ds, cfg, lm_dir.string() + "/checkpoint");
  Pipeline before(cfg, ds.vocab.size(), ds.n_classes);
  before.load(lm_dir.string() + "/checkpoint");
  Pipeline after(cfg, ds.vocab.size(), ds.n_classes);
  after.load(dir.string() + "/checkpoint");
  bool moved = false;
  for (auto* p : before.store.with_prefix("mm."))
    if (after.store.get(p->name).value.data != p->value.data) moved = true;
  CHECK(moved);
}

TEST_CASE("supervision fraction subsamples deterministically and stratified") {
  auto d1 = temp_dir("alp_tr_sub1");
  auto d2 = temp_dir("alp_tr_sub2");
  RunConfig c1 = tiny_config(d1.string());
  c1.finetune.supervision_fraction = 0.25;
  RunConfig c2 = tiny_config(d2.string());
  c2.finetune.supervision_fraction = 0.25;
  Dataset ds = load_dataset(c1);
  auto r1 = stage3_finetune(ds, c1, "");
  auto r2 = stage3_finetune(ds, c2, "");
  CHECK(r1.extra.at("supervision_items") == r2.extra.at("supervision_items"));
  CHECK(r1.losses == r2.losses);
  // 48 train utterances, 3 balanced classes -> 4 per class at 25%
  CHECK(r1.extra.at("supervision_items").get<size_t>() == 12);
}

TEST_CASE("evaluation is deterministic and honors the modality selector") {
  auto lm_dir = temp_dir("alp_tr_ev_lm");
  RunConfig lm_cfg = tiny_config(lm_dir.string());
  Dataset ds = load_dataset(lm_cfg);
  stage0_lm(ds, lm_cfg);
  auto ft_dir = temp_dir("alp_tr_ev_ft");
  RunConfig ft_cfg = tiny_config(ft_dir.string());
  stage3_finetune(ds, ft_cfg, lm_dir.string() + "/checkpoint");
  std::string ckpt = ft_dir.string() + "/checkpoint";

  for (const std::string modality : {"both", "audio", "text"}) {
    RunConfig ev = tiny_config(temp_dir("alp_tr_ev_" + modality).string());
    ev.modality = modality;
    auto r1 = evaluate(ds, ev, ckpt, "test");
    auto r2 = evaluate(ds, ev, ckpt, "test");
    CHECK(r1.metrics == r2.metrics);
    CHECK(r1.metrics.at("wa").get<double>() >= 0.0);
  }
  RunConfig ev = tiny_config(temp_dir("alp_tr_ev_bad").string());
  CHECK_THROWS_AS(evaluate(ds, ev, ckpt, "dev"), std::invalid_argument);
}

TEST_CASE("gradcheck command: pass, corrupt self-test, precision monotonicity") {
  auto r64 = gradcheck_run(true, false, 3);
  CHECK(r64.pass);
  CHECK(r64.worst() <= 1e-4);

  auto corrupted = gradcheck_run(true, true, 3);
  CHECK_FALSE(corrupted.pass);

  auto r32 = gradcheck_run(false, false, 3);
  CHECK(r64.worst() < r32.worst());
}

TEST_CASE("reports carry config hash and land on disk") {
  auto dir = temp_dir("alp_tr_rep");
  RunConfig cfg = tiny_config(dir.string());
  cfg.lm.steps = 3;
  Dataset ds = load_dataset(cfg);
  auto report = stage0_lm(ds, cfg);
  CHECK(report.config_hash == cfg.hash());
  CHECK(std::filesystem::exists(dir / "report.json"));
  CHECK(std::filesystem::exists(dir / "config.resolved.json"));
  CHECK(std::filesystem::exists(dir / "checkpoint" / "index.json"));
  CHECK(std::filesystem::exists(dir / "vocab.txt"));
  std::ifstream in(dir / "report.json");
  auto loaded = nlohmann::json::parse(in);
  CHECK(loaded.at("stage") == "pretrain-lm");
  CHECK(loaded.at("losses").size() == 3);
}
