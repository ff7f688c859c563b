// Acceptance suite: one pass/fail line per criterion, nonzero exit when any
// criterion fails. Tolerances and thresholds are pinned in code. The
// synthetic-corpus experiments (criteria 7-9) run full pipelines and take
// the bulk of the wall clock.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "alp/calp.h"
#include "alp/heads.h"
#include "alp/mmtx.h"
#include "alp/synth.h"
#include "alp/trainer.h"

using namespace alp;
using nncore::TensorT;

namespace {

int g_failures = 0;

void report(int criterion, bool pass, const std::string& detail) {
  std::printf("criterion %2d: %s  %s\n", criterion, pass ? "PASS" : "FAIL", detail.c_str());
  std::fflush(stdout);
  if (!pass) ++g_failures;
}

double now_seconds() {
  using clock = std::chrono::steady_clock;
  static auto start = clock::now();
  return std::chrono::duration<double>(clock::now() - start).count();
}

std::string work_dir() {
  static std::string dir = [] {
    auto d = std::filesystem::temp_directory_path() / "alp_acceptance";
    std::filesystem::remove_all(d);
    std::filesystem::create_directories(d);
    return d.string();
  }();
  return dir;
}

TensorT<double> random_unit_rows(int64_t m, int64_t d, Rng& rng) {
  TensorT<double> t(m, d);
  for (int64_t r = 0; r < m; ++r) {
    double n2 = 0;
    for (int64_t c = 0; c < d; ++c) {
      t.at(r, c) = rng.gauss();
      n2 += t.at(r, c) * t.at(r, c);
    }
    for (int64_t c = 0; c < d; ++c) t.at(r, c) /= std::sqrt(n2);
  }
  return t;
}

calp::CalpBatchT<double> random_batch(int64_t m, int64_t d, Rng& rng) {
  calp::CalpBatchT<double> b;
  b.u_t = random_unit_rows(m, d, rng);
  b.u_t1 = random_unit_rows(m, d, rng);
  b.v = random_unit_rows(m, d, rng);
  for (int64_t i = 0; i < m; ++i) b.utterance_ids.push_back("u" + std::to_string(i));
  return b;
}

// Shared model/budget configuration for the synthetic-corpus experiments,
// calibrated once on the oracle runs and frozen.
trainer::RunConfig experiment_config() {
  trainer::RunConfig cfg;
  cfg.data.per_utterance_norm = false;
  cfg.model.d_model = 32;
  cfg.model.n_layers = 2;
  cfg.model.n_heads = 2;
  cfg.model.d_ff = 128;
  cfg.model.dropout = 0.0;
  cfg.model.max_positions = 64;
  cfg.model.spectran_layers = 2;
  cfg.model.spectran_heads = 2;
  cfg.model.spectran_ff = 128;
  cfg.model.d_a = 32;
  cfg.model.d_shared = 32;
  cfg.lm.steps = 250;
  cfg.lm.batch_size = 16;
  cfg.lm.lr = 1e-3;
  cfg.calp.steps = 500;
  cfg.calp.batch_size = 16;
  cfg.calp.lr = 3e-3;
  cfg.calp.eval_interval = 100;
  cfg.alt.steps = 300;
  cfg.alt.batch_size = 8;
  cfg.alt.lr = 1e-3;
  cfg.finetune.steps = 80;
  cfg.finetune.batch_size = 8;
  cfg.finetune.lr = 1e-3;
  cfg.finetune.freeze = false;
  cfg.finetune.supervision_fraction = 0.12;
  cfg.modality = "both";
  return cfg;
}

// --------------------------------------------------------------------------

void criterion_1_gradcheck() {
  double t0 = now_seconds();
  auto r = trainer::gradcheck_run(true, false, 1);
  double elapsed = now_seconds() - t0;
  char buf[160];
  std::snprintf(buf, sizeof(buf),
                "gradcheck 64-bit: calp %.2e, alt %.2e, bce %.2e (tol 1e-4), %.1fs (limit 120s)",
                r.calp_err, r.alt_err, r.bce_err, elapsed);
  report(1, r.pass && elapsed <= 120.0, buf);
}

void criterion_2_bound() {
  Rng rng(2024);
  calp::CalpConfig cfg;
  cfg.alpha = 0.25;
  bool ok = true;
  int checked = 0;
  double worst_slack = 1e300;
  for (double tau : {0.07, 0.1, 1.0}) {
    cfg.tau = tau;
    for (int trial = 0; trial < 67 && checked < 200; ++trial) {
      int64_t m = trial % 3 == 0 ? 2 : (trial % 3 == 1 ? 4 : 8);
      auto b = random_batch(m, 8, rng);
      auto losses = calp::calp_loss_per_sample(b, cfg);
      auto bounds = calp::calp_bound(b, cfg);
      for (size_t i = 0; i < losses.size(); ++i) {
        ok = ok && losses[i] <= bounds[i] + 1e-9;
        worst_slack = std::min(worst_slack, bounds[i] - losses[i]);
      }
      ++checked;
    }
  }
  // identical embeddings: loss = (1 + alpha) ln(M - 1)
  double worst_identity = 0;
  cfg.tau = 0.1;
  for (int64_t m : {2, 5, 8}) {
    calp::CalpBatchT<double> b;
    TensorT<double> rows(m, 6);
    for (int64_t i = 0; i < m; ++i) rows.at(i, 2) = 1.0;
    b.u_t = b.u_t1 = b.v = rows;
    for (int64_t i = 0; i < m; ++i) b.utterance_ids.push_back("u" + std::to_string(i));
    double expect = (1.0 + cfg.alpha) * std::log(double(m - 1));
    worst_identity = std::max(worst_identity, std::fabs(calp::calp_loss(b, cfg) - expect));
  }
  ok = ok && worst_identity <= 1e-9;
  char buf[160];
  std::snprintf(buf, sizeof(buf),
                "Eq-2 bound on %d batches (min slack %.3f), identity dev %.1e (tol 1e-9)",
                checked * 3, worst_slack, worst_identity);
  report(2, ok, buf);
}

void criterion_3_alpha_zero() {
  Rng rng(3031);
  calp::CalpConfig cfg;
  cfg.tau = 0.1;
  cfg.alpha = 0.0;
  double worst = 0;
  for (int trial = 0; trial < 50; ++trial) {
    auto b = random_batch(4 + (trial % 5), 8, rng);
    // independent audio-only NT-Xent evaluation
    int64_t m = b.size();
    double expect = 0;
    for (int64_t i = 0; i < m; ++i) {
      double pos = 0, lse = 0;
      for (int64_t c = 0; c < 8; ++c) pos += b.u_t.at(i, c) * b.u_t1.at(i, c);
      for (int64_t j = 0; j < m; ++j) {
        if (j == i) continue;
        double s = 0;
        for (int64_t c = 0; c < 8; ++c) s += b.u_t.at(i, c) * b.u_t1.at(j, c);
        lse += std::exp(s / cfg.tau);
      }
      expect += -pos / cfg.tau + std::log(lse);
    }
    expect /= double(m);
    worst = std::max(worst, std::fabs(calp::calp_loss(b, cfg) - expect));
  }
  char buf[120];
  std::snprintf(buf, sizeof(buf), "alpha=0 equals the audio-only term, max dev %.1e (tol 1e-12)",
                worst);
  report(3, worst <= 1e-12, buf);
}

void criterion_4_masking() {
  Rng rng(41);
  long lex_masked = 0, lex_total = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    auto input = mmtx::assemble(std::vector<int>(100, 5), 0, 256);
    auto plan = mmtx::apply_masks(input, {}, {0.15, 0.0, 3}, rng);
    lex_masked += long(plan.lexical_slots.size());
    lex_total += 100;
  }
  double lex_rate = double(lex_masked) / double(lex_total);

  // with span 1 every masked acoustic index is a span start
  std::vector<features::AcousticBlock> blocks(100);
  for (auto& b : blocks) b.values.assign(3200, 0.f);
  Rng rng2(42);
  long starts = 0, positions = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    auto input = mmtx::assemble({5}, 100, 256);
    auto plan = mmtx::apply_masks(input, blocks, {0.0, 0.10, 1}, rng2);
    starts += long(plan.acoustic_indices.size());
    positions += 100;
  }
  double start_rate = double(starts) / double(positions);

  // boundary clipping: spans never run past the last block, and a start at
  // the final index yields exactly that index
  bool clipped_ok = true;
  bool found_terminal = false;
  std::vector<features::AcousticBlock> short_blocks(20);
  for (auto& b : short_blocks) b.values.assign(3200, 0.f);
  for (uint64_t seed = 0; seed < 20000; ++seed) {
    auto input = mmtx::assemble({5}, 20, 64);
    Rng r(seed);
    auto plan = mmtx::apply_masks(input, short_blocks, {0.0, 0.10, 3}, r);
    for (int64_t idx : plan.acoustic_indices) clipped_ok = clipped_ok && idx >= 0 && idx < 20;
    if (plan.acoustic_indices == std::vector<int64_t>{19}) found_terminal = true;
  }
  bool ok = std::fabs(lex_rate - 0.15) <= 0.005 && std::fabs(start_rate - 0.10) <= 0.005 &&
            clipped_ok && found_terminal;
  char buf[160];
  std::snprintf(buf, sizeof(buf),
                "lexical rate %.4f (0.15+-0.005), span-start rate %.4f (0.10+-0.005), clipping ok",
                lex_rate, start_rate);
  report(4, ok, buf);
}

void criterion_5_metrics() {
  Rng rng(51);
  double worst = 0;
  int compared = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    int n_classes = 2 + int(rng.below(5));
    int n = 10 + int(rng.below(60));
    heads::ConfusionCounts counts(n_classes);
    std::vector<std::vector<int>> labels, preds;
    for (int i = 0; i < n; ++i) {
      std::vector<int> l(size_t(n_classes), 0), p(size_t(n_classes), 0);
      for (int k = 0; k < n_classes; ++k) {
        l[size_t(k)] = int(rng.below(2));
        p[size_t(k)] = int(rng.below(2));
      }
      labels.push_back(l);
      preds.push_back(p);
      counts.add(l, p);
    }
    bool degenerate = false;
    for (int k = 0; k < n_classes; ++k)
      if (counts.positives(k) == 0 || counts.negatives(k) == 0) degenerate = true;
    if (degenerate) continue;

    // brute force from the raw pairs
    double tp_total = 0, tn_total = 0;
    for (int k = 0; k < n_classes; ++k)
      for (int i = 0; i < n; ++i) (labels[size_t(i)][size_t(k)] ? tp_total : tn_total) += 1;
    double wa = 0, acc = 0, f1 = 0;
    for (int k = 0; k < n_classes; ++k) {
      double tp = 0, fp = 0, tn = 0, fn = 0;
      for (int i = 0; i < n; ++i) {
        int y = labels[size_t(i)][size_t(k)], q = preds[size_t(i)][size_t(k)];
        tp += (y && q);
        fp += (!y && q);
        tn += (!y && !q);
        fn += (y && !q);
      }
      wa += 0.5 * (tp / (tp + fn) + tn / (tn + fp));
      acc += (tp + tn) / double(n);
      f1 += ((tp + tn) / (tp_total + tn_total)) * (tp / (tp + 0.5 * (fp + fn)));
    }
    auto m = heads::compute_metrics(counts);
    worst = std::max({worst, std::fabs(m.weighted_accuracy - wa / n_classes),
                      std::fabs(m.accuracy - acc / n_classes), std::fabs(m.f1_micro - f1)});
    ++compared;
  }

  // constant predictors sit at WA exactly one half
  double worst_const = 0;
  for (int trial = 0; trial < 50; ++trial) {
    int n_classes = 2 + int(rng.below(4));
    heads::ConfusionCounts counts(n_classes);
    std::vector<int> constant(size_t(n_classes), 0);
    for (int k = 0; k < n_classes; ++k) constant[size_t(k)] = int(rng.below(2));
    for (int i = 0; i < 40; ++i) {
      std::vector<int> l(size_t(n_classes), 0);
      for (int k = 0; k < n_classes; ++k) l[size_t(k)] = int(rng.below(2));
      counts.add(l, constant);
    }
    bool degenerate = false;
    for (int k = 0; k < n_classes; ++k)
      if (counts.positives(k) == 0 || counts.negatives(k) == 0) degenerate = true;
    if (degenerate) continue;
    worst_const =
        std::max(worst_const, std::fabs(heads::compute_metrics(counts).weighted_accuracy - 0.5));
  }
  char buf[160];
  std::snprintf(buf, sizeof(buf),
                "%d random sets, max dev %.1e (tol 1e-12); constant-predictor WA dev %.1e",
                compared, worst, worst_const);
  report(5, worst <= 1e-12 && worst_const == 0.0, buf);
}

void criterion_6_geometry() {
  features::LogMel mel;
  mel.n_frames = 170;
  mel.n_mels = 64;
  mel.values.assign(size_t(mel.n_frames) * 64, 0.f);
  auto blocks = features::extract_blocks(mel);
  // enumeration oracle: starts 0, 30, ... while start + 50 <= 170
  std::vector<int> expected_starts;
  for (int s = 0; s + 50 <= 170; s += 30) expected_starts.push_back(s);
  bool ok = blocks.size() == expected_starts.size();
  for (size_t i = 0; ok && i < blocks.size(); ++i)
    ok = blocks[i].start_frame == expected_starts[i];

  features::AcousticBlock block;
  block.values.assign(3200, 0.f);
  auto patches = features::extract_patches(block);
  // grid oracle
  int nt = 0, nb = 0;
  for (int t = 0; t + 10 <= 50; t += 5) ++nt;
  for (int b = 0; b + 16 <= 64; b += 8) ++nb;
  ok = ok && int(patches.patches.size()) == nt * nb && nt * nb == 63;
  for (size_t i = 0; ok && i < patches.patches.size(); ++i)
    ok = patches.patches[i].position_index == int(i) && patches.patches[i].values.size() == 160;
  char buf[160];
  std::snprintf(buf, sizeof(buf),
                "blocks at {0,30,..} (%zu of %zu expected), %zu patches of length 160 (want 63)",
                blocks.size(), expected_starts.size(), patches.patches.size());
  report(6, ok, buf);
}

void criterion_7_overfit() {
  double t0 = now_seconds();
  std::string dir = work_dir() + "/overfit_corpus";
  corpus::SynthOptions opt;
  opt.n_utterances = 40;  // 32 train / 4 val / 4 test
  opt.n_classes = 3;
  opt.snr_db = 30.0;
  opt.seed = 77;
  opt.out_dir = dir;
  corpus::synth_corpus(opt);

  trainer::RunConfig cfg = experiment_config();
  cfg.seed = 7;
  cfg.data.manifest = dir + "/manifest.jsonl";
  cfg.out_dir = work_dir() + "/overfit_run";
  cfg.finetune.steps = 500;
  cfg.finetune.supervision_fraction = 1.0;
  auto ds = trainer::load_dataset(cfg);
  auto rep = trainer::stage3_finetune(ds, cfg, "");
  double train_wa = rep.metrics.at("train_wa").get<double>();
  double elapsed = now_seconds() - t0;
  char buf[160];
  std::snprintf(buf, sizeof(buf), "32-utterance overfit train WA %.4f (need >= 0.95), %.0fs (limit 300s)",
                train_wa, elapsed);
  report(7, train_wa >= 0.95 && elapsed <= 300.0, buf);
}

void criterion_8_retrieval() {
  std::string dir = work_dir() + "/calp_corpus";
  corpus::SynthOptions opt;
  opt.n_utterances = 150;
  opt.n_classes = 3;
  opt.snr_db = 30.0;
  opt.seed = 11;
  opt.out_dir = dir;
  corpus::synth_corpus(opt);

  trainer::RunConfig cfg = experiment_config();
  cfg.seed = 7;
  cfg.data.manifest = dir + "/manifest.jsonl";
  cfg.lm.steps = 300;
  cfg.calp.steps = 2000;
  auto ds = trainer::load_dataset(cfg);

  cfg.out_dir = work_dir() + "/calp_lm";
  trainer::stage0_lm(ds, cfg);
  std::string lm_ckpt = cfg.out_dir + "/checkpoint";
  cfg.out_dir = work_dir() + "/calp_stage1";
  trainer::stage1_calp(ds, cfg, lm_ckpt);

  trainer::Pipeline pipe(cfg, ds.vocab.size(), ds.n_classes);
  pipe.load(cfg.out_dir + "/checkpoint");
  double top1 = trainer::calp_retrieval_probe(pipe, ds, 32, 5, 99);
  char buf[160];
  std::snprintf(buf, sizeof(buf),
                "audio->text top-1 at M=32 after 2000 steps: %.3f (chance 0.031, need >= 0.31)",
                top1);
  report(8, top1 >= 0.31, buf);
}

void criterion_9_orderings() {
  // pipeline ordering corpus: clean audio, noisy text labels
  std::string dir_a = work_dir() + "/ordering_corpus";
  corpus::SynthOptions opt;
  opt.n_utterances = 240;
  opt.n_classes = 3;
  opt.snr_db = 30.0;
  opt.seed = 21;
  opt.text_label_noise = 0.35;
  opt.out_dir = dir_a;
  corpus::synth_corpus(opt);

  // alpha ordering corpus: weak audio, clean text
  std::string dir_b = work_dir() + "/alpha_corpus";
  opt.snr_db = 8.0;
  opt.text_label_noise = 0.0;
  opt.out_dir = dir_b;
  corpus::synth_corpus(opt);

  trainer::RunConfig base = experiment_config();
  std::map<std::string, double> means;
  std::map<std::string, std::vector<double>> values;
  for (uint64_t seed = 7; seed <= 11; ++seed) {
    auto arms = trainer::run_pipeline_ablation(
        dir_a + "/manifest.jsonl", base, seed,
        work_dir() + "/pipe_seed" + std::to_string(seed));
    trainer::RunConfig alpha_base = base;
    alpha_base.alt.steps = 200;
    auto alpha_arms = trainer::run_alpha_ablation(
        dir_b + "/manifest.jsonl", alpha_base, seed,
        work_dir() + "/alpha_seed" + std::to_string(seed));
    for (const auto& a : arms) values[a.name].push_back(a.test_wa);
    for (const auto& a : alpha_arms) values[a.name].push_back(a.test_wa);
    std::printf("  seed %llu:", (unsigned long long)seed);
    for (const auto& a : arms) std::printf(" %s %.3f", a.name.c_str(), a.test_wa);
    for (const auto& a : alpha_arms) std::printf(" %s %.3f", a.name.c_str(), a.test_wa);
    std::printf("\n");
    std::fflush(stdout);
  }
  for (const auto& [name, vals] : values) {
    double mean = 0;
    for (double v : vals) mean += v;
    means[name] = mean / double(vals.size());
  }
  bool ok = means.at("full_pipeline") >= means.at("stage2_only") &&
            means.at("stage2_only") >= means.at("supervised_only") &&
            means.at("alpha025") >= means.at("alpha0");
  char buf[200];
  std::snprintf(buf, sizeof(buf),
                "5-seed means: full %.3f >= stage2-only %.3f >= supervised %.3f; "
                "alpha0.25 %.3f >= alpha0 %.3f (audio-only)",
                means.at("full_pipeline"), means.at("stage2_only"), means.at("supervised_only"),
                means.at("alpha025"), means.at("alpha0"));
  report(9, ok, buf);
}

void criterion_10_determinism() {
  std::string dir = work_dir() + "/det_corpus";
  corpus::SynthOptions opt;
  opt.n_utterances = 60;
  opt.n_classes = 3;
  opt.snr_db = 30.0;
  opt.seed = 5;
  opt.out_dir = dir;
  corpus::synth_corpus(opt);

  trainer::RunConfig cfg = experiment_config();
  cfg.data.manifest = dir + "/manifest.jsonl";
  cfg.seed = 13;
  cfg.lm.steps = 40;
  cfg.calp.steps = 30;
  cfg.finetune.steps = 30;
  auto ds = trainer::load_dataset(cfg);

  auto run_once = [&](const std::string& tag) {
    trainer::RunConfig c = cfg;
    c.out_dir = work_dir() + "/det_" + tag + "_lm";
    trainer::stage0_lm(ds, c);
    std::string lm = c.out_dir + "/checkpoint";
    trainer::RunConfig c1 = cfg;
    c1.out_dir = work_dir() + "/det_" + tag + "_calp";
    trainer::stage1_calp(ds, c1, lm);
    trainer::RunConfig c3 = cfg;
    c3.out_dir = work_dir() + "/det_" + tag + "_ft";
    auto rep = trainer::stage3_finetune(ds, c3, c1.out_dir + "/checkpoint");
    return std::make_pair(rep, c3.out_dir + "/checkpoint/params.bin");
  };
  auto [rep1, ckpt1] = run_once("a");
  auto [rep2, ckpt2] = run_once("b");

  double metric_dev =
      std::fabs(rep1.metrics.at("test_wa").get<double>() - rep2.metrics.at("test_wa").get<double>());
  bool losses_equal = rep1.losses == rep2.losses;
  std::ifstream f1(ckpt1, std::ios::binary), f2(ckpt2, std::ios::binary);
  std::vector<char> b1{std::istreambuf_iterator<char>(f1), std::istreambuf_iterator<char>()};
  std::vector<char> b2{std::istreambuf_iterator<char>(f2), std::istreambuf_iterator<char>()};
  bool bytes_equal = !b1.empty() && b1 == b2;
  char buf[160];
  std::snprintf(buf, sizeof(buf),
                "repeat run: metric dev %.1e (tol 1e-6), losses %s, checkpoints %s",
                metric_dev, losses_equal ? "identical" : "DIFFER",
                bytes_equal ? "bit-identical" : "DIFFER");
  report(10, metric_dev <= 1e-6 && losses_equal && bytes_equal, buf);
}

}  // namespace

int main() {
  std::printf("acceptance suite\n");
  criterion_1_gradcheck();
  criterion_2_bound();
  criterion_3_alpha_zero();
  criterion_4_masking();
  criterion_5_metrics();
  criterion_6_geometry();
  criterion_10_determinism();
  criterion_7_overfit();
  criterion_8_retrieval();
  criterion_9_orderings();
  std::printf("%s (%d criterion failure%s), %.0fs total\n", g_failures == 0 ? "ALL PASS" : "FAILURES",
              g_failures, g_failures == 1 ? "" : "s", now_seconds());
  return g_failures == 0 ? 0 : 1;
}
