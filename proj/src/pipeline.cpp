#include "pansharp/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include "json.hpp"
#include "pansharp/metrics.hpp"
#include "pansharp/mfin.hpp"
#include "pansharp/ops.hpp"
#include "pansharp/optimizer.hpp"
#include "pansharp/sspen.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace ps {

std::string pretrain_dir(const RunConfig& cfg, const std::string& which) {
  return (fs::path(cfg.out_dir) / "ckpt" / ("pretrain_" + which)).string();
}

std::string stage_dir(const RunConfig& cfg, int stage) {
  return (fs::path(cfg.out_dir) / "ckpt" / ("stage" + std::to_string(stage))).string();
}

DatasetManifest ensure_dataset(const RunConfig& cfg) {
  if (fs::exists(fs::path(cfg.data_dir) / "manifest.json")) return read_manifest(cfg.data_dir);
  SceneSpec spec;
  spec.seed = cfg.seed;
  spec.size = 4 * cfg.h;
  spec.bands = cfg.bands;
  return build_dataset(spec, cfg.n_train, cfg.n_reduced, cfg.n_full, cfg.data_dir);
}

void pretrain_backbones(const RunConfig& cfg) {
  SspenConfig scfg = sspen_config(cfg);
  {
    ParamStore store;
    Rng rng(derive_seed(cfg.seed, 201));
    EdsrBackbone net(store, "sspen.backbone_spe", cfg.bands, scfg, rng, true);
    pretrain_edsr(store, net, "sspen.backbone_spe", cfg.bands, derive_seed(cfg.seed, 202),
                  cfg.pretrain_steps);
    CheckpointInfo info;
    info.stage = "pretrain-edsr-spe";
    info.config_hash = config_hash(cfg);
    save_checkpoint(pretrain_dir(cfg, "spe"), store, info);
  }
  {
    ParamStore store;
    Rng rng(derive_seed(cfg.seed, 203));
    EdsrBackbone net(store, "sspen.backbone_spa", cfg.bands + 1, scfg, rng, true);
    pretrain_edsr(store, net, "sspen.backbone_spa", cfg.bands + 1, derive_seed(cfg.seed, 204),
                  cfg.pretrain_steps);
    CheckpointInfo info;
    info.stage = "pretrain-edsr-spa";
    info.config_hash = config_hash(cfg);
    save_checkpoint(pretrain_dir(cfg, "spa"), store, info);
  }
  {
    ParamStore store;
    Rng rng(derive_seed(cfg.seed, 205));
    MfinConfig mcfg = mfin_config(cfg);
    VitBackbone net(store, "mfin.vit", mcfg, rng, true);
    pretrain_vit(store, net, "mfin.vit", mcfg, derive_seed(cfg.seed, 206), cfg.pretrain_steps);
    CheckpointInfo info;
    info.stage = "pretrain-vit";
    info.config_hash = config_hash(cfg);
    save_checkpoint(pretrain_dir(cfg, "vit"), store, info);
  }
}

namespace {

void require_checkpoint(const std::string& dir, const std::string& what) {
  if (!fs::exists(fs::path(dir) / "manifest.json"))
    throw std::runtime_error("missing " + what + " checkpoint at " + dir);
}

void write_loss_csv(const RunConfig& cfg, int stage, const std::vector<double>& losses) {
  fs::create_directories(cfg.out_dir);
  fs::path path = fs::path(cfg.out_dir) / "loss.csv";
  bool append = stage == 2 && fs::exists(path);
  std::ofstream out(path, append ? std::ios::app : std::ios::trunc);
  if (!append) out << "stage,step,loss\n";
  out.precision(10);
  for (std::size_t i = 0; i < losses.size(); ++i)
    out << stage << "," << i << "," << losses[i] << "\n";
}

int metric_window(std::int64_t extent) {
  return static_cast<int>(std::min<std::int64_t>(metrics::kDefaultWindow, extent));
}

}  // namespace

TrainResult train_stage1(const RunConfig& cfg) {
  validate(cfg);
  ensure_dataset(cfg);
  std::vector<SamplePair> train = read_split(cfg.data_dir, "train");
  if (train.empty()) throw std::runtime_error("empty train split");

  ParamStore store;
  Rng rng(derive_seed(cfg.seed, 301));
  Sspen net(store, sspen_config(cfg), rng);
  require_checkpoint(pretrain_dir(cfg, "spe"), "pretrained spectral backbone");
  require_checkpoint(pretrain_dir(cfg, "spa"), "pretrained spatial backbone");
  load_checkpoint(pretrain_dir(cfg, "spe"), store);
  load_checkpoint(pretrain_dir(cfg, "spa"), store);

  AdamConfig acfg;
  acfg.lr = cfg.lr1;
  Adam opt(store, acfg);
  TrainResult result;
  for (int step = 0; step < cfg.steps; ++step) {
    opt.zero_grad();
    double batch_loss = 0.0;
    for (int j = 0; j < cfg.batch; ++j) {
      const SamplePair& s =
          train[static_cast<std::size_t>((step * cfg.batch + j) % static_cast<int>(train.size()))];
      Tape tape;
      Tensor loss = ops::scale(ops::l1_loss(net.forward(s.lrms, s.pan).O1, *s.gt),
                               1.0 / cfg.batch);
      if (!std::isfinite(loss.value()))
        throw std::runtime_error("stage-1 training diverged: non-finite loss at step " +
                                 std::to_string(step));
      backward(loss);
      batch_loss += loss.value();
    }
    opt.step();
    result.losses.push_back(batch_loss);
  }
  write_loss_csv(cfg, 1, result.losses);

  CheckpointInfo info;
  info.stage = "stage1";
  info.config_hash = config_hash(cfg);
  info.step = opt.step_count();
  result.ckpt_dir = stage_dir(cfg, 1);
  save_checkpoint(result.ckpt_dir, store, info, opt.state());
  return result;
}

TrainResult train_stage2(const RunConfig& cfg) {
  validate(cfg);
  if (!cfg.single_stage && !fs::exists(fs::path(stage_dir(cfg, 1)) / "manifest.json"))
    throw std::runtime_error("stage-2 lineage error: stage-1 checkpoint missing at " +
                             stage_dir(cfg, 1));
  ensure_dataset(cfg);
  std::vector<SamplePair> train = read_split(cfg.data_dir, "train");
  if (train.empty()) throw std::runtime_error("empty train split");

  ParamStore store;
  Rng rng(derive_seed(cfg.seed, 401));
  Sspen sspen(store, sspen_config(cfg), rng);
  Mfin mfin(store, mfin_config(cfg), rng);

  CheckpointInfo info;
  info.stage = "stage2";
  info.config_hash = config_hash(cfg);
  if (cfg.single_stage) {
    // "w/o two-stage": no stage-1 parent; the tap heads stay trainable
    require_checkpoint(pretrain_dir(cfg, "spe"), "pretrained spectral backbone");
    require_checkpoint(pretrain_dir(cfg, "spa"), "pretrained spatial backbone");
    load_checkpoint(pretrain_dir(cfg, "spe"), store);
    load_checkpoint(pretrain_dir(cfg, "spa"), store);
  } else {
    std::string parent = stage_dir(cfg, 1);
    if (!fs::exists(fs::path(parent) / "manifest.json"))
      throw std::runtime_error("stage-2 lineage error: stage-1 checkpoint missing at " + parent);
    load_checkpoint(parent, store);
    store.set_trainable("sspen.", false);  // retain stage-1 weights, frozen
    info.parent_hash = checkpoint_hash(parent);
  }
  require_checkpoint(pretrain_dir(cfg, "vit"), "pretrained vit backbone");
  load_checkpoint(pretrain_dir(cfg, "vit"), store);

  AdamConfig acfg;
  acfg.lr = cfg.lr2;
  Adam opt(store, acfg);
  TrainResult result;
  for (int step = 0; step < cfg.steps; ++step) {
    opt.zero_grad();
    double batch_loss = 0.0;
    for (int j = 0; j < cfg.batch; ++j) {
      const SamplePair& s =
          train[static_cast<std::size_t>((step * cfg.batch + j) % static_cast<int>(train.size()))];
      Tape tape;
      SspenPriors pr = sspen.priors(s.lrms, s.pan);
      Tensor o2 = mfin.forward(pr.A, pr.B, pr.q).O2;
      Tensor loss = ops::scale(ops::l1_loss(o2, *s.gt), 1.0 / cfg.batch);
      if (!std::isfinite(loss.value()))
        throw std::runtime_error("stage-2 training diverged: non-finite loss at step " +
                                 std::to_string(step));
      backward(loss);
      batch_loss += loss.value();
    }
    opt.step();
    result.losses.push_back(batch_loss);
  }
  write_loss_csv(cfg, 2, result.losses);

  info.step = opt.step_count();
  result.ckpt_dir = stage_dir(cfg, 2);
  save_checkpoint(result.ckpt_dir, store, info, opt.state());
  return result;
}

namespace {

EvalReport finish_report(const RunConfig& cfg, const std::string& split, EvalReport report,
                         bool write_reports) {
  for (const auto& col : report.columns) {
    std::vector<double> vals;
    for (const auto& row : report.rows) vals.push_back(row.values.at(col));
    metrics::Summary s = metrics::summarize(vals);
    report.mean[col] = s.mean;
    report.stddev[col] = s.stddev;
  }
  EvalRow summary;
  summary.id = "summary";
  for (const auto& col : report.columns) summary.values[col] = report.mean[col];
  report.rows.push_back(summary);

  if (write_reports) {
    fs::create_directories(cfg.out_dir);
    std::ofstream csv(fs::path(cfg.out_dir) / "report.csv");
    csv << "id";
    for (const auto& col : report.columns) csv << "," << col;
    csv << "\n";
    csv.precision(10);
    for (const auto& row : report.rows) {
      csv << row.id;
      for (const auto& col : report.columns) csv << "," << row.values.at(col);
      csv << "\n";
    }

    json j;
    j["split"] = split;
    for (const auto& col : report.columns)
      j["metrics"][col] = {{"mean", report.mean[col]}, {"std", report.stddev[col]}};
    json rows = json::array();
    for (const auto& row : report.rows) {
      json r;
      r["id"] = row.id;
      for (const auto& [k, v] : row.values) r[k] = v;
      rows.push_back(r);
    }
    j["rows"] = rows;
    std::ofstream jf(fs::path(cfg.out_dir) / "report.json");
    jf << j.dump(2) << "\n";
  }
  return report;
}

EvalReport run_split(const RunConfig& cfg, const std::string& split,
                     const std::function<Tensor(const SamplePair&)>& predict,
                     bool write_reports) {
  ensure_dataset(cfg);
  std::vector<SamplePair> samples = read_split(cfg.data_dir, split);
  if (samples.empty()) throw std::runtime_error("empty split: " + split);

  EvalReport report;
  if (split == "full")
    report.columns = {"d_lambda", "d_s", "qnr"};
  else
    report.columns = {"psnr", "sam", "ergas", "q2n"};

  for (const SamplePair& s : samples) {
    Tensor pred = predict(s);
    EvalRow row;
    row.id = s.id;
    if (split == "full") {
      int win = metric_window(std::min(s.lrms.dim(0), s.lrms.dim(1)));
      Tensor pan_lr = degrade(s.pan, kDefaultSigma, kRatio);
      double dl = metrics::d_lambda(pred, s.lrms, 1.0, win);
      double ds = metrics::d_s(pred, s.pan, s.lrms, pan_lr, 1.0, win);
      row.values["d_lambda"] = dl;
      row.values["d_s"] = ds;
      row.values["qnr"] = metrics::qnr(dl, ds, 1.0, 1.0);
    } else {
      if (!s.gt) throw std::runtime_error("split " + split + " lacks ground truth");
      int win = metric_window(std::min(s.gt->dim(0), s.gt->dim(1)));
      row.values["psnr"] = metrics::psnr(pred, *s.gt, 1.0);
      row.values["sam"] = metrics::sam_degrees(pred, *s.gt);
      row.values["ergas"] = metrics::ergas(pred, *s.gt, kRatio);
      row.values["q2n"] = metrics::q2n(pred, *s.gt, win);
    }
    report.rows.push_back(std::move(row));
  }
  return finish_report(cfg, split, std::move(report), write_reports);
}

}  // namespace

EvalReport evaluate(const RunConfig& cfg, const std::string& ckpt, const std::string& split) {
  validate(cfg);
  require_checkpoint(ckpt, "evaluation");

  std::ifstream mf(fs::path(ckpt) / "manifest.json");
  json manifest = json::parse(mf);
  std::string stage = manifest.at("stage").get<std::string>();

  ParamStore store;
  Rng rng(derive_seed(cfg.seed, 501));
  if (stage == "stage1") {
    auto net = std::make_shared<Sspen>(store, sspen_config(cfg), rng);
    load_checkpoint(ckpt, store);
    return run_split(cfg, split,
                     [net](const SamplePair& s) { return net->forward(s.lrms, s.pan).O1; },
                     /*write_reports=*/true);
  }
  if (stage == "stage2") {
    auto sspen = std::make_shared<Sspen>(store, sspen_config(cfg), rng);
    auto mfin = std::make_shared<Mfin>(store, mfin_config(cfg), rng);
    load_checkpoint(ckpt, store);
    return run_split(cfg, split,
                     [sspen, mfin](const SamplePair& s) {
                       SspenPriors pr = sspen->priors(s.lrms, s.pan);
                       return mfin->forward(pr.A, pr.B, pr.q).O2;
                     },
                     /*write_reports=*/true);
  }
  throw std::runtime_error("checkpoint stage '" + stage + "' cannot be evaluated");
}

EvalReport evaluate_baseline(const RunConfig& cfg, const std::string& split, bool write_reports) {
  return run_split(cfg, split,
                   [](const SamplePair& s) { return ops::upsample_bicubic(s.lrms, kRatio); },
                   write_reports);
}

ParamReport count_params(const std::string& ckpt_dir) {
  require_checkpoint(ckpt_dir, "parameter accounting");
  std::ifstream mf(fs::path(ckpt_dir) / "manifest.json");
  json manifest = json::parse(mf);
  ParamReport rep;
  for (const auto& entry : manifest.at("params")) {
    std::int64_t n = 1;
    for (const auto& d : entry.at("shape")) n *= d.get<std::int64_t>();
    rep.total += n;
    if (entry.at("trainable").get<bool>()) rep.trainable += n;
  }
  rep.fraction = rep.total > 0 ? static_cast<double>(rep.trainable) / static_cast<double>(rep.total)
                               : 0.0;
  return rep;
}

}  // namespace ps
