// Command-line entry point for the audio-language pretraining pipeline:
// synthetic corpus generation, the three pretraining stages, supervised
// fine-tuning, evaluation, gradient checking and the ablation harness.

#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "alp/synth.h"
#include "alp/trainer.h"

using alp::trainer::RunConfig;

namespace {

struct GlobalOpts {
  std::string config_path;
  int64_t seed = -1;
  std::string out_dir;
  std::string manifest;
};

RunConfig resolve_config(const GlobalOpts& g) {
  RunConfig cfg = g.config_path.empty() ? RunConfig{} : RunConfig::load(g.config_path);
  if (g.seed >= 0) cfg.seed = uint64_t(g.seed);
  if (!g.out_dir.empty()) cfg.out_dir = g.out_dir;
  if (!g.manifest.empty()) cfg.data.manifest = g.manifest;
  cfg.validate();
  return cfg;
}

void print_losses_summary(const alp::trainer::RunReport& report) {
  if (report.losses.empty()) return;
  std::printf("%s: %zu steps, first loss %.4f, last loss %.4f (%.1fs)\n", report.stage.c_str(),
              report.losses.size(), report.losses.front(), report.losses.back(),
              report.wall_clock_s);
}

alp::features::PatchGeometry parse_geometry(const std::string& text) {
  alp::features::PatchGeometry g;
  if (std::sscanf(text.c_str(), "%dx%d:%dx%d", &g.patch_frames, &g.patch_bands, &g.stride_frames,
                  &g.stride_bands) != 4)
    throw CLI::ValidationError("geometry must look like 10x16:5x8");
  return g;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"audio-language pretraining pipeline"};
  app.require_subcommand(1);

  GlobalOpts g;
  app.add_option("--config", g.config_path, "JSON run configuration");
  app.add_option("--seed", g.seed, "override the config seed");
  app.add_option("--out", g.out_dir, "override the output directory");
  app.add_option("--manifest", g.manifest, "override data.manifest");

  // synth
  auto* synth = app.add_subcommand("synth", "generate a synthetic paired audio-text corpus");
  alp::corpus::SynthOptions synth_opts;
  std::string synth_dir;
  synth->add_option("--dir", synth_dir, "output corpus directory")->required();
  synth->add_option("--n", synth_opts.n_utterances, "number of utterances");
  synth->add_option("--classes", synth_opts.n_classes, "number of emotion classes");
  synth->add_option("--snr", synth_opts.snr_db, "signal-to-noise ratio in dB");
  synth->add_flag("!--text-uninformative", synth_opts.text_informative,
                  "decouple transcripts from the class labels");
  synth->add_option("--text-label-noise", synth_opts.text_label_noise,
                    "fraction of transcripts drawn from a random class");

  // pretraining / fine-tuning / eval
  auto* lm = app.add_subcommand("pretrain-lm", "stage 0: language-only masked LM");
  auto* calp_cmd = app.add_subcommand("pretrain-calp", "stage 1: contrastive audio-language");
  auto* alt_cmd = app.add_subcommand("pretrain-alt", "stage 2: joint masked audio+language");
  auto* ft = app.add_subcommand("finetune", "stage 3: supervised emotion heads");
  auto* ev = app.add_subcommand("eval", "evaluate a fine-tuned checkpoint");
  std::string init_ckpt, eval_ckpt, eval_split = "test";
  calp_cmd->add_option("--init", init_ckpt, "stage-0 checkpoint directory");
  alt_cmd->add_option("--init", init_ckpt, "checkpoint to start from (stage 0 or stage 1)");
  ft->add_option("--init", init_ckpt, "checkpoint to start from (empty = from scratch)");
  ev->add_option("--ckpt", eval_ckpt, "fine-tuned checkpoint directory")->required();
  ev->add_option("--split", eval_split, "train | val | test");

  // gradcheck
  auto* gc = app.add_subcommand("gradcheck", "finite-difference verification of every loss");
  bool gc_f32 = false, gc_corrupt = false;
  double gc_tolerance = 1e-4;
  gc->add_flag("--f32", gc_f32, "run in 32-bit mode instead of 64-bit");
  gc->add_flag("--corrupt", gc_corrupt, "inject a wrong gradient (harness self-test)");
  gc->add_option("--tolerance", gc_tolerance, "max relative error accepted");

  // ablate
  auto* ab = app.add_subcommand("ablate", "pipeline / alpha / patch-geometry comparisons");
  std::string ab_mode = "pipeline";
  int ab_seeds = 1;
  std::string ab_work = "ablation";
  std::vector<std::string> ab_geometries;
  ab->add_option("--mode", ab_mode, "pipeline | alpha | patches");
  ab->add_option("--seeds", ab_seeds, "number of seeds to average over");
  ab->add_option("--work", ab_work, "working directory for intermediate runs");
  ab->add_option("--geometry", ab_geometries, "patch geometries, e.g. 10x16:5x8 (patches mode)");

  for (auto* sub : app.get_subcommands(nullptr)) sub->fallthrough();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*synth) {
      synth_opts.out_dir = synth_dir;
      if (g.seed >= 0) synth_opts.seed = uint64_t(g.seed);
      auto manifest = alp::corpus::synth_corpus(synth_opts);
      std::printf("synth: wrote %zu utterances (%zu train / %zu val / %zu test) to %s\n",
                  manifest.records.size(), manifest.split_records("train").size(),
                  manifest.split_records("val").size(), manifest.split_records("test").size(),
                  synth_dir.c_str());
      return 0;
    }

    if (*gc) {
      auto r = alp::trainer::gradcheck_run(!gc_f32, gc_corrupt, g.seed >= 0 ? uint64_t(g.seed) : 1,
                                           gc_tolerance);
      std::printf("gradcheck (%s): calp %.3e, alt %.3e, bce %.3e -> %s\n",
                  gc_f32 ? "f32" : "f64", r.calp_err, r.alt_err, r.bce_err,
                  r.pass ? "PASS" : "FAIL");
      return r.pass ? 0 : 1;
    }

    RunConfig cfg = resolve_config(g);

    if (*ab) {
      RunConfig base = cfg;
      std::filesystem::create_directories(ab_work);
      auto print_arms = [](const std::vector<alp::trainer::AblationArm>& arms) {
        for (const auto& a : arms)
          std::printf("  %-18s test WA %.4f  Acc %.4f  F1 %.4f\n", a.name.c_str(), a.test_wa,
                      a.test_acc, a.test_f1);
      };
      if (ab_mode == "patches") {
        std::vector<alp::features::PatchGeometry> geometries;
        if (ab_geometries.empty())
          ab_geometries = {"10x16:5x8", "25x16:25x16", "50x64:1x1", "5x8:5x8"};
        for (const auto& s : ab_geometries) geometries.push_back(parse_geometry(s));
        auto arms = alp::trainer::run_patch_sweep(base.data.manifest, base, geometries, base.seed,
                                                  ab_work);
        std::printf("patch-geometry sweep (seed %llu):\n", (unsigned long long)base.seed);
        print_arms(arms);
        return 0;
      }
      std::map<std::string, std::vector<double>> wa_by_arm;
      for (int s = 0; s < ab_seeds; ++s) {
        uint64_t seed = base.seed + uint64_t(s);
        std::string work = ab_work + "/seed" + std::to_string(seed);
        auto arms = ab_mode == "alpha"
                        ? alp::trainer::run_alpha_ablation(base.data.manifest, base, seed, work)
                        : alp::trainer::run_pipeline_ablation(base.data.manifest, base, seed, work);
        std::printf("seed %llu:\n", (unsigned long long)seed);
        print_arms(arms);
        for (const auto& a : arms) wa_by_arm[a.name].push_back(a.test_wa);
      }
      std::printf("means over %d seed(s):\n", ab_seeds);
      for (const auto& [name, values] : wa_by_arm) {
        double mean = 0;
        for (double v : values) mean += v;
        std::printf("  %-18s mean test WA %.4f\n", name.c_str(), mean / double(values.size()));
      }
      return 0;
    }

    auto dataset = alp::trainer::load_dataset(cfg);
    if (*lm) {
      print_losses_summary(alp::trainer::stage0_lm(dataset, cfg));
    } else if (*calp_cmd) {
      print_losses_summary(alp::trainer::stage1_calp(dataset, cfg, init_ckpt));
    } else if (*alt_cmd) {
      print_losses_summary(alp::trainer::stage2_alt(dataset, cfg, init_ckpt));
    } else if (*ft) {
      auto report = alp::trainer::stage3_finetune(dataset, cfg, init_ckpt);
      print_losses_summary(report);
      std::printf("test WA %.4f  Acc %.4f  F1 %.4f\n", report.metrics["test_wa"].get<double>(),
                  report.metrics["test_acc"].get<double>(),
                  report.metrics["test_f1_micro"].get<double>());
    } else if (*ev) {
      auto report = alp::trainer::evaluate(dataset, cfg, eval_ckpt, eval_split);
      std::printf("eval %s (%s): WA %.4f  Acc %.4f  F1 %.4f\n", eval_split.c_str(),
                  cfg.modality.c_str(), report.metrics["wa"].get<double>(),
                  report.metrics["acc"].get<double>(), report.metrics["f1_micro"].get<double>());
    }
    return 0;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}
