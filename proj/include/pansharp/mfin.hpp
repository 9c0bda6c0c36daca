#pragma once

#include <string>
#include <vector>

#include "pansharp/nn.hpp"
#include "pansharp/sspen.hpp"
#include "pansharp/tensor.hpp"

namespace ps {

struct MfinConfig {
  std::int64_t bands = 4;   // s
  std::int64_t m = 32;      // prior channels (must match stage 1)
  std::int64_t lr_h = 8;    // LRMS extents; token count T = lr_h * lr_w
  std::int64_t lr_w = 8;
  int layers = 8;           // L
  std::int64_t dim = 64;    // D
  int heads = 4;
  int mlp_ratio = 2;
  std::int64_t k = 24;      // adapter token dim
  int interval = 4;         // t; adapters run every t blocks, J = L / t
  int patch = 4;
  std::int64_t inr_width = 64;
  int inr_layers = 4;
  double w0 = 30.0;
  bool tail2_residual = true;  // O2 += bicubic-upsampled M
  bool use_ctf = true;   // ablation: false leaves branch tokens untouched
  bool use_cti = true;   // ablation: false never injects into the backbone
  bool replace_inr = false;    // ablation: conv fusion head instead of the INR tail
};

// Frozen pre-norm ViT over Q: 4x4 patch embedding, learned positional
// embedding, L transformer blocks, plus a restoration head for pretraining.
class VitBackbone {
 public:
  VitBackbone() = default;
  VitBackbone(ParamStore& ps, const std::string& prefix, const MfinConfig& cfg, Rng& rng,
              bool trainable);

  Tensor embed(const Tensor& q) const;          // [H,W,s+1] -> [T,D]
  Tensor block(const Tensor& tokens, int i) const;
  Tensor restore(const Tensor& tokens, std::int64_t out_h, std::int64_t out_w) const;
  Tensor reconstruct(const Tensor& q) const;    // embed -> all blocks -> restore (+q)

  Linear patch_embed;
  Tensor pos;
  struct Block {
    LayerNormLayer ln1, ln2;
    MultiHeadAttention attn;
    Linear fc1, fc2;
  };
  std::vector<Block> blocks;
  Linear restore_head;

 private:
  MfinConfig cfg_;
};

// Cascade fusion: the other branch gates this branch's tokens, the ViT tokens
// query the gated result, and a bottleneck FFN refines it.
class Ctf {
 public:
  Ctf() = default;
  Ctf(ParamStore& ps, const std::string& prefix, const MfinConfig& cfg, Rng& rng);

  Tensor gate(const Tensor& f) const;  // w_j, per-token values in (0,1)
  // own: tokens of this branch; other: the gating branch; f_vit: query tokens
  Tensor operator()(const Tensor& own, const Tensor& other, const Tensor& f_vit) const;

  Linear gate_fc1, gate_fc2;
  LayerNormLayer ln_q, ln_kv;  // pre-norm on the cross-attention operands
  MultiHeadAttention attn;
  Linear ffn_fc1, ffn_fc2;
};

// Injection back into the backbone, gated by a scalar initialized to zero.
class Cti {
 public:
  Cti() = default;
  Cti(ParamStore& ps, const std::string& prefix, const MfinConfig& cfg, Rng& rng);

  Tensor operator()(const Tensor& f_spe_next, const Tensor& f_spa_next,
                    const Tensor& f_vit) const;

  Linear fuse;
  LayerNormLayer ln_q, ln_kv;
  MultiHeadAttention attn;
  Tensor s;  // scalar gate, created at exactly 0
};

class Adapter {
 public:
  Adapter() = default;
  Adapter(ParamStore& ps, const std::string& prefix, const MfinConfig& cfg, Rng& rng);

  // Advances both branch token sets in place; returns the updated ViT stream.
  Tensor operator()(Tensor& f_spe, Tensor& f_spa, const Tensor& stream,
                    const MfinConfig& cfg) const;

  Linear down, up;  // D->k boundary, zero-initialized k->D boundary
  Ctf ctf_spe, ctf_spa;
  Cti cti;
};

struct MfinOutput {
  Tensor A_hat;  // [h,w,m]
  Tensor B_hat;  // [H,W,m]
  Tensor O2;     // [H,W,s]
};

// Stage-2 network: frozen ViT over Q with J cascaded adapters reading the
// stage-1 priors, decoded by its own tail.
class Mfin {
 public:
  Mfin(ParamStore& ps, const MfinConfig& cfg, Rng& rng);

  std::pair<Tensor, Tensor> tokenize_priors(const Tensor& a, const Tensor& b) const;
  MfinOutput forward(const Tensor& a, const Tensor& b, const Tensor& q) const;

  const MfinConfig& config() const { return cfg_; }

  VitBackbone vit;                 // frozen
  Linear tok_spe, tok_spa;         // prior tokenizers (1x1 and 4x4 patches)
  Tensor pos_spe;                  // learned positional embedding, A branch
  std::vector<Adapter> adapters;
  Linear head_spe, head_spa;       // un-tokenizers to m channels
  std::vector<Linear> inr;         // tail MLP
  Conv2d conv_tail1, conv_tail2, conv_tail3;  // replace-INR ablation head

 private:
  MfinConfig cfg_;
};

// Seeded restoration pretraining (denoising + super-resolution of Q-shaped
// inputs); trains the backbone, freezes it, returns the loss curve.
std::vector<double> pretrain_vit(ParamStore& ps, VitBackbone& net, const std::string& prefix,
                                 const MfinConfig& cfg, std::uint64_t seed, int steps,
                                 double lr = 1e-3);

}  // namespace ps
