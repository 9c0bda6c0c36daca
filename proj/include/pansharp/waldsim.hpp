#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "pansharp/tensor.hpp"

namespace ps {

inline constexpr int kRatio = 4;          // LRMS-to-PAN scale, fixed
inline constexpr double kDefaultSigma = 1.7;

struct SceneSpec {
  std::uint64_t seed = 0;
  std::int64_t size = 64;                 // H = W, multiple of 4*ratio
  std::int64_t bands = 4;                 // 4 or 8
  int blob_count = 6;
  double noise_sigma = 0.01;
  double gradient_amp = 0.15;             // linear ramp amplitude; 0 disables
  std::vector<double> pan_weights;        // length bands, nonnegative, sums to 1
};

struct SamplePair {
  std::string id;
  Tensor pan;                             // [H,W,1]
  Tensor lrms;                            // [h,w,s]
  std::optional<Tensor> gt;               // [H,W,s]
};

struct DatasetManifest {
  int ratio = kRatio;
  std::int64_t bands = 4;
  std::uint64_t seed = 0;
  int version = 1;
  std::vector<std::string> train_ids;
  std::vector<std::string> test_reduced_ids;
  std::vector<std::string> test_full_ids;
};

// Deterministic synthetic multispectral scene in [0,1]: band-correlated
// Gaussian blobs over linear gradients with low-amplitude per-band texture.
Tensor synth_scene(const SceneSpec& spec);

// Wald-protocol degradation: per-band truncated Gaussian blur (radius
// ceil(3*sigma), kernel normalized to sum 1, reflect padding) followed by
// decimation keeping every ratio-th pixel at phase offset ratio/2.
Tensor degrade(const Tensor& gt, double sigma, int ratio);

// The per-band blur kernel used by degrade, for oracles and linearity checks.
std::vector<double> gaussian_kernel_1d(double sigma);

Tensor synth_pan(const Tensor& gt, const std::vector<double>& weights);

std::vector<double> uniform_pan_weights(std::int64_t bands);

DatasetManifest build_dataset(const SceneSpec& spec, int n_train, int n_test_reduced,
                              int n_test_full, const std::string& out_dir);

DatasetManifest read_manifest(const std::string& dir);
SamplePair read_sample(const std::string& dir, const std::string& id, bool with_gt);
std::vector<SamplePair> read_split(const std::string& dir, const std::string& split);

}  // namespace ps
