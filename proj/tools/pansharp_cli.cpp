#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "pansharp/gradsuite.hpp"
#include "pansharp/pipeline.hpp"

namespace fs = std::filesystem;

namespace {

int cmd_gradcheck() {
  ps::GradReport report = ps::run_grad_suite();
  for (const auto& e : report.entries)
    std::printf("%-22s %11.3e  (tol %.0e)  %s\n", e.name.c_str(), e.err, e.tol,
                e.pass() ? "ok" : "FAIL");
  if (!report.pass()) {
    std::fprintf(stderr, "gradient check failed\n");
    return 2;
  }
  return 0;
}

std::string default_ckpt(const ps::RunConfig& cfg) {
  std::string s2 = ps::stage_dir(cfg, 2);
  if (fs::exists(fs::path(s2) / "manifest.json")) return s2;
  return ps::stage_dir(cfg, 1);
}

void print_summary(const ps::EvalReport& report) {
  for (const auto& col : report.columns)
    std::printf("%-10s %12.6f +/- %.6f\n", col.c_str(), report.mean.at(col),
                report.stddev.at(col));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"two-stage pansharpening on synthetic data"};
  app.require_subcommand(1);

  std::string config_path, out_override, ckpt_override;
  std::uint64_t seed_override = 0;
  bool seed_set = false;
  app.add_option("--config", config_path, "configuration file (key = value with [sections])");
  app.add_option("--seed", seed_override, "override the run seed")
      ->each([&](const std::string&) { seed_set = true; });
  app.add_option("--out", out_override, "override the output directory");

  auto* gen = app.add_subcommand("gen-data", "generate the synthetic dataset");
  auto* pre = app.add_subcommand("pretrain", "pretrain and freeze the three backbones");
  auto* train = app.add_subcommand("train", "run one training stage");
  int stage = 0;
  train->add_option("--stage", stage, "training stage")->required()->check(CLI::Range(1, 2));
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on a split");
  std::string split;
  eval->add_option("--split", split, "evaluation split")
      ->required()
      ->check(CLI::IsMember({"reduced", "full"}));
  eval->add_option("--ckpt", ckpt_override, "checkpoint directory (default: newest stage)");
  auto* grad = app.add_subcommand("gradcheck", "finite-difference gradient suite");
  auto* params = app.add_subcommand("params", "parameter accounting for a checkpoint");
  params->add_option("--ckpt", ckpt_override, "checkpoint directory (default: newest stage)");
  auto* ablate = app.add_subcommand("ablate", "train + evaluate an ablated stage-2 variant");
  std::string variant;
  ablate->add_option("variant", variant, "ablation to run")
      ->required()
      ->check(CLI::IsMember({"no-ctf", "no-cti", "single-stage", "replace-inr"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help
    std::cerr << e.what() << "\n\n" << app.help();
    return 1;
  }

  try {
    ps::RunConfig cfg;
    if (!config_path.empty()) cfg = ps::load_config(config_path);
    if (seed_set) cfg.seed = seed_override;
    if (!out_override.empty()) cfg.out_dir = out_override;
    ps::validate(cfg);

    if (gen->parsed()) {
      ps::DatasetManifest m = ps::ensure_dataset(cfg);
      std::printf("dataset at %s: %zu train, %zu reduced, %zu full\n", cfg.data_dir.c_str(),
                  m.train_ids.size(), m.test_reduced_ids.size(), m.test_full_ids.size());
      return 0;
    }
    if (pre->parsed()) {
      ps::pretrain_backbones(cfg);
      std::printf("pretrained backbones saved under %s/ckpt\n", cfg.out_dir.c_str());
      return 0;
    }
    if (train->parsed()) {
      ps::TrainResult r = stage == 1 ? ps::train_stage1(cfg) : ps::train_stage2(cfg);
      double last = r.losses.empty() ? 0.0 : r.losses.back();
      std::printf("stage %d done: %zu steps, final loss %.6f, checkpoint %s\n", stage,
                  r.losses.size(), last, r.ckpt_dir.c_str());
      return 0;
    }
    if (eval->parsed()) {
      std::string ckpt = ckpt_override.empty() ? default_ckpt(cfg) : ckpt_override;
      ps::EvalReport report = ps::evaluate(cfg, ckpt, split);
      std::printf("%s split, %zu samples, checkpoint %s\n", split.c_str(),
                  report.rows.size() - 1, ckpt.c_str());
      print_summary(report);
      return 0;
    }
    if (grad->parsed()) return cmd_gradcheck();
    if (params->parsed()) {
      std::string ckpt = ckpt_override.empty() ? default_ckpt(cfg) : ckpt_override;
      ps::ParamReport rep = ps::count_params(ckpt);
      std::printf("total %lld  trainable %lld  fraction %.4f\n",
                  static_cast<long long>(rep.total), static_cast<long long>(rep.trainable),
                  rep.fraction);
      return 0;
    }
    if (ablate->parsed()) {
      ps::RunConfig acfg = cfg;
      if (variant == "no-ctf") acfg.no_ctf = true;
      if (variant == "no-cti") acfg.no_cti = true;
      if (variant == "single-stage") acfg.single_stage = true;
      if (variant == "replace-inr") acfg.replace_inr = true;
      acfg.out_dir = (fs::path(cfg.out_dir) / ("ablate_" + variant)).string();
      // the variant shares the dataset and the baseline stage-1/pretrain
      // artifacts of the parent run
      fs::create_directories(fs::path(acfg.out_dir) / "ckpt");
      for (const char* which : {"spe", "spa", "vit"}) {
        fs::path src = ps::pretrain_dir(cfg, which), dst = ps::pretrain_dir(acfg, which);
        if (fs::exists(src) && !fs::exists(dst)) fs::copy(src, dst, fs::copy_options::recursive);
      }
      if (!acfg.single_stage) {
        fs::path src = ps::stage_dir(cfg, 1), dst = ps::stage_dir(acfg, 1);
        if (fs::exists(src) && !fs::exists(dst)) fs::copy(src, dst, fs::copy_options::recursive);
      }
      ps::TrainResult r = ps::train_stage2(acfg);
      ps::EvalReport report = ps::evaluate(acfg, r.ckpt_dir, "reduced");
      std::printf("ablation %s: reduced-split summary\n", variant.c_str());
      print_summary(report);
      return 0;
    }
    return 0;
  } catch (const std::invalid_argument& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
