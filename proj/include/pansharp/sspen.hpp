#pragma once

#include <string>
#include <vector>

#include "pansharp/nn.hpp"
#include "pansharp/tensor.hpp"

namespace ps {

struct SspenConfig {
  std::int64_t bands = 4;     // s, MS band count
  std::int64_t channels = 32; // backbone feature width
  int n_blocks = 8;           // residual blocks per backbone (all tapped)
  std::int64_t d_prime = 8;   // tap channels after reduction
  std::int64_t m = 32;        // prior channels
  std::int64_t inr_width = 64;
  int inr_layers = 4;
  double w0 = 30.0;
};

// Residual CNN backbone: head conv, n (conv-ReLU-conv + skip) blocks, tail
// conv back to the input band count. Frozen after pretraining.
class EdsrBackbone {
 public:
  EdsrBackbone() = default;
  EdsrBackbone(ParamStore& ps, const std::string& prefix, std::int64_t in_ch,
               const SspenConfig& cfg, Rng& rng, bool trainable);

  // Body features; appends each post-block feature to `taps` when given.
  Tensor features(const Tensor& x, std::vector<Tensor>* taps = nullptr) const;
  // Image-space reconstruction, used only for pretraining.
  Tensor reconstruct(const Tensor& x) const;

  Conv2d head, tail;
  std::vector<std::pair<Conv2d, Conv2d>> blocks;
};

// Tap head on one backbone block: 1x1 channel reduction, depthwise 3x3, GELU.
class LpeBlock {
 public:
  LpeBlock() = default;
  LpeBlock(ParamStore& ps, const std::string& prefix, const SspenConfig& cfg, Rng& rng);
  Tensor operator()(const Tensor& c) const;

  Conv2d reduce;
  DepthwiseConv2d dw;
};

struct SspenOutput {
  Tensor A;   // [h,w,m] local spectral prior
  Tensor B;   // [H,W,m] local spatial prior
  Tensor O1;  // [H,W,s]
};

struct SspenPriors {
  Tensor A, B;
  Tensor q;    // [H,W,s+1]
  Tensor mup;  // [H,W,s] bicubic residual input
};

// Q = concat(bicubic x4 upsample of M, P) along channels.
Tensor make_q(const Tensor& m_img, const Tensor& pan);

// Stage-1 network: two frozen backbones with trainable tap heads feeding the
// prior projections, and a sine-activated coordinate MLP decoding O1.
class Sspen {
 public:
  Sspen(ParamStore& ps, const SspenConfig& cfg, Rng& rng);

  SspenOutput forward(const Tensor& m_img, const Tensor& pan) const;
  // Priors only; stage 2 consumes these without decoding O1.
  SspenPriors priors(const Tensor& m_img, const Tensor& pan) const;

  // Decodes priors at an arbitrary grid: per output coordinate, the nearest
  // feature vector of each prior plus the two relative offsets feed the MLP.
  Tensor inr_decode(const Tensor& a, const Tensor& b, std::int64_t out_h,
                    std::int64_t out_w) const;

  const SspenConfig& config() const { return cfg_; }

  EdsrBackbone spectral, spatial;            // frozen
  std::vector<LpeBlock> lpe_spe, lpe_spa;    // trainable, stage 1
  Conv2d proj_spe, proj_spa;                 // 1x1, n*d' -> m
  std::vector<Linear> inr;                   // trainable, stage 1

 private:
  SspenConfig cfg_;
};

// Symmetric pixel-center lattice over [-1,1].
std::vector<double> inr_coord_grid(std::int64_t n);

// Sine-activated coordinate MLP shared by both decoding tails. Input is the
// two nearest prior features plus four relative offsets.
std::vector<Linear> make_inr_mlp(ParamStore& ps, const std::string& prefix, std::int64_t m,
                                 std::int64_t width, int layers, std::int64_t out_dim, double w0,
                                 Rng& rng);
Tensor inr_mlp_decode(const std::vector<Linear>& layers, double w0, std::int64_t m,
                      std::int64_t out_dim, const Tensor& a, const Tensor& b, std::int64_t out_h,
                      std::int64_t out_w);

// Seeded super-resolution pretraining on held-out synthetic scenes; trains the
// backbone's parameters, freezes them, and returns the per-step loss curve.
// Aborts with std::runtime_error if the loss turns non-finite.
std::vector<double> pretrain_edsr(ParamStore& ps, EdsrBackbone& net, const std::string& prefix,
                                  std::int64_t in_ch, std::uint64_t seed, int steps,
                                  double lr = 1e-3);

}  // namespace ps
