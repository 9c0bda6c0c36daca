#pragma once

#include <cstdint>
#include <string>

#include "pansharp/mfin.hpp"
#include "pansharp/sspen.hpp"

namespace ps {

struct RunConfig {
  // data
  std::string data_dir = "data";
  int h = 8;             // LRMS extent; GT/PAN are 4h
  std::int64_t bands = 4;
  int n_train = 8;
  int n_reduced = 20;
  int n_full = 4;

  // model
  std::int64_t d_c = 32;
  int n_blocks = 8;
  std::int64_t d_prime = 8;
  std::int64_t m = 32;
  int layers = 8;        // L
  std::int64_t dim = 64; // D
  int heads = 4;
  std::int64_t k = 24;
  int interval = 4;      // t
  std::int64_t inr_width = 64;

  // training
  int steps = 500;
  int pretrain_steps = 200;
  int batch = 4;
  double lr1 = 5e-4;
  double lr2 = 1e-4;
  std::uint64_t seed = 7;

  // ablations
  bool no_ctf = false;
  bool no_cti = false;
  bool single_stage = false;
  bool replace_inr = false;
  bool no_tail2_residual = false;

  std::string out_dir = "out";
};

// key = value lines grouped by [section] headers; '#' starts a comment.
RunConfig load_config(const std::string& path);
void apply_config_line(RunConfig& cfg, const std::string& key, const std::string& value);
void validate(const RunConfig& cfg);

std::string config_hash(const RunConfig& cfg);

SspenConfig sspen_config(const RunConfig& cfg);
MfinConfig mfin_config(const RunConfig& cfg);

}  // namespace ps
