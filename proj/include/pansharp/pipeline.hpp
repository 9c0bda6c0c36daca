#pragma once

#include <map>
#include <string>
#include <vector>

#include "pansharp/checkpoint.hpp"
#include "pansharp/config.hpp"
#include "pansharp/waldsim.hpp"

namespace ps {

// Artifact layout under cfg.out_dir.
std::string pretrain_dir(const RunConfig& cfg, const std::string& which);  // spe|spa|vit
std::string stage_dir(const RunConfig& cfg, int stage);

// Builds the dataset if the manifest is missing; returns its manifest.
DatasetManifest ensure_dataset(const RunConfig& cfg);

// Pretrains and freezes the three backbones, writing one checkpoint each.
void pretrain_backbones(const RunConfig& cfg);

struct TrainResult {
  std::string ckpt_dir;
  std::vector<double> losses;  // per optimization step
};

TrainResult train_stage1(const RunConfig& cfg);
TrainResult train_stage2(const RunConfig& cfg);

struct EvalRow {
  std::string id;
  std::map<std::string, double> values;  // metric name -> value
};

struct EvalReport {
  std::vector<std::string> columns;  // metric column order
  std::vector<EvalRow> rows;         // per sample, then one "summary" mean row
  std::map<std::string, double> mean, stddev;
};

// split: "reduced" (reference metrics vs GT) or "full" (no-reference).
// stage 0 picks the newest trained stage; 1 or 2 force one. Writes report.csv
// and report.json under cfg.out_dir.
EvalReport evaluate(const RunConfig& cfg, const std::string& ckpt, const std::string& split);

// Metrics of the plain bicubic upsampling baseline on a split (no model).
EvalReport evaluate_baseline(const RunConfig& cfg, const std::string& split,
                             bool write_reports = false);

struct ParamReport {
  std::int64_t total = 0;
  std::int64_t trainable = 0;
  double fraction = 0.0;
};

// Exact counts from a checkpoint manifest.
ParamReport count_params(const std::string& ckpt_dir);

}  // namespace ps
