#include "pansharp/sspen.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "pansharp/optimizer.hpp"
#include "pansharp/ops.hpp"
#include "pansharp/waldsim.hpp"

namespace ps {

EdsrBackbone::EdsrBackbone(ParamStore& ps, const std::string& prefix, std::int64_t in_ch,
                           const SspenConfig& cfg, Rng& rng, bool trainable) {
  head = Conv2d(ps, prefix + ".head", in_ch, cfg.channels, 3, rng, trainable);
  for (int i = 0; i < cfg.n_blocks; ++i) {
    std::string bp = prefix + ".block" + std::to_string(i);
    blocks.emplace_back(Conv2d(ps, bp + ".conv1", cfg.channels, cfg.channels, 3, rng, trainable),
                        Conv2d(ps, bp + ".conv2", cfg.channels, cfg.channels, 3, rng, trainable));
  }
  tail = Conv2d(ps, prefix + ".tail", cfg.channels, in_ch, 3, rng, trainable);
}

Tensor EdsrBackbone::features(const Tensor& x, std::vector<Tensor>* taps) const {
  Tensor f = head(x);
  for (const auto& [c1, c2] : blocks) {
    f = ops::add(f, c2(ops::relu(c1(f))));
    if (taps) taps->push_back(f);
  }
  return f;
}

Tensor EdsrBackbone::reconstruct(const Tensor& x) const {
  return ops::add(x, tail(features(x)));
}

LpeBlock::LpeBlock(ParamStore& ps, const std::string& prefix, const SspenConfig& cfg, Rng& rng) {
  reduce = Conv2d(ps, prefix + ".reduce", cfg.channels, cfg.d_prime, 1, rng, true);
  dw = DepthwiseConv2d(ps, prefix + ".dw", cfg.d_prime, 3, rng, true);
}

Tensor LpeBlock::operator()(const Tensor& c) const { return ops::gelu(dw(reduce(c))); }

Tensor make_q(const Tensor& m_img, const Tensor& pan) {
  if (m_img.rank() != 3 || pan.rank() != 3 || pan.dim(2) != 1)
    throw std::invalid_argument("make_q: m[h,w,s] and pan[H,W,1] required");
  if (pan.dim(0) != 4 * m_img.dim(0) || pan.dim(1) != 4 * m_img.dim(1))
    throw std::invalid_argument("make_q: pan extents must be 4x the MS extents");
  return ops::concat_lastdim({ops::upsample_bicubic(m_img, 4), pan});
}

Sspen::Sspen(ParamStore& ps, const SspenConfig& cfg, Rng& rng) : cfg_(cfg) {
  spectral = EdsrBackbone(ps, "sspen.backbone_spe", cfg.bands, cfg, rng, false);
  spatial = EdsrBackbone(ps, "sspen.backbone_spa", cfg.bands + 1, cfg, rng, false);
  for (int i = 0; i < cfg.n_blocks; ++i) {
    lpe_spe.emplace_back(ps, "sspen.lpe_spe." + std::to_string(i), cfg, rng);
    lpe_spa.emplace_back(ps, "sspen.lpe_spa." + std::to_string(i), cfg, rng);
  }
  std::int64_t tap_ch = cfg.n_blocks * cfg.d_prime;
  proj_spe = Conv2d(ps, "sspen.proj_spe", tap_ch, cfg.m, 1, rng, true);
  proj_spa = Conv2d(ps, "sspen.proj_spa", tap_ch, cfg.m, 1, rng, true);

  inr = make_inr_mlp(ps, "sspen.inr", cfg.m, cfg.inr_width, cfg.inr_layers, cfg.bands, cfg.w0,
                     rng);
}

std::vector<Linear> make_inr_mlp(ParamStore& ps, const std::string& prefix, std::int64_t m,
                                 std::int64_t width, int layers, std::int64_t out_dim, double w0,
                                 Rng& rng) {
  std::vector<Linear> mlp;
  std::int64_t in_dim = 2 * m + 4;
  for (int l = 0; l < layers; ++l) {
    std::int64_t in = l == 0 ? in_dim : width;
    std::int64_t out = l == layers - 1 ? out_dim : width;
    Linear layer(ps, prefix + "." + std::to_string(l), in, out, rng, true);
    double bound = l == 0 ? siren_first_bound(in) : siren_hidden_bound(in, w0);
    for (double& v : layer.w.data()) v = rng.uniform(-bound, bound);
    mlp.push_back(layer);
  }
  return mlp;
}

std::vector<double> inr_coord_grid(std::int64_t n) {
  std::vector<double> g(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i)
    g[static_cast<std::size_t>(i)] = -1.0 + 2.0 * (static_cast<double>(i) + 0.5) / static_cast<double>(n);
  return g;
}

namespace {

// Offset from each output coordinate to the centre of its nearest source
// cell, in source-cell units; uses the same index rule as nearest_resize.
void fill_offsets(std::vector<double>& data, std::int64_t out_h, std::int64_t out_w,
                  std::int64_t src_h, std::int64_t src_w, std::size_t base, std::size_t stride) {
  auto gy = inr_coord_grid(out_h), gx = inr_coord_grid(out_w);
  auto off = [](double coord, std::int64_t i, std::int64_t n_src, std::int64_t n_out) {
    std::int64_t j = std::min<std::int64_t>(
        n_src - 1, static_cast<std::int64_t>((static_cast<double>(i) + 0.5) * n_src / n_out));
    double center = -1.0 + 2.0 * (static_cast<double>(j) + 0.5) / static_cast<double>(n_src);
    return (coord - center) * static_cast<double>(n_src) / 2.0;
  };
  for (std::int64_t y = 0; y < out_h; ++y)
    for (std::int64_t x = 0; x < out_w; ++x) {
      std::size_t at = base + static_cast<std::size_t>(y * out_w + x) * stride;
      data[at] = off(gy[static_cast<std::size_t>(y)], y, src_h, out_h);
      data[at + 1] = off(gx[static_cast<std::size_t>(x)], x, src_w, out_w);
    }
}

}  // namespace

Tensor inr_mlp_decode(const std::vector<Linear>& layers, double w0, std::int64_t m,
                      std::int64_t out_dim, const Tensor& a, const Tensor& b, std::int64_t out_h,
                      std::int64_t out_w) {
  if (out_h < a.dim(0) || out_w < a.dim(1) || out_h < b.dim(0) || out_w < b.dim(1))
    throw std::invalid_argument("inr_decode: output extents below feature extents");
  Tensor fa = ops::nearest_resize(a, out_h, out_w);
  Tensor fb = ops::nearest_resize(b, out_h, out_w);

  Tensor offsets({out_h, out_w, 4});
  fill_offsets(offsets.data(), out_h, out_w, a.dim(0), a.dim(1), 0, 4);
  fill_offsets(offsets.data(), out_h, out_w, b.dim(0), b.dim(1), 2, 4);

  Tensor x = ops::concat_lastdim({fa, fb, offsets});
  x = ops::reshape(x, {out_h * out_w, 2 * m + 4});
  for (std::size_t l = 0; l < layers.size(); ++l) {
    x = layers[l](x);
    if (l + 1 < layers.size()) x = ops::sine_act(x, l == 0 ? w0 : 1.0);
  }
  return ops::reshape(x, {out_h, out_w, out_dim});
}

Tensor Sspen::inr_decode(const Tensor& a, const Tensor& b, std::int64_t out_h,
                         std::int64_t out_w) const {
  return inr_mlp_decode(inr, cfg_.w0, cfg_.m, cfg_.bands, a, b, out_h, out_w);
}

SspenPriors Sspen::priors(const Tensor& m_img, const Tensor& pan) const {
  SspenPriors pr;
  pr.mup = ops::upsample_bicubic(m_img, 4);
  pr.q = ops::concat_lastdim({pr.mup, pan});

  auto run_branch = [this](const EdsrBackbone& net, const std::vector<LpeBlock>& lpe,
                           const Conv2d& proj, const Tensor& x) {
    std::vector<Tensor> taps;
    net.features(x, &taps);
    if (taps.size() != lpe.size()) throw std::runtime_error("tap count mismatch");
    std::vector<Tensor> heads;
    for (std::size_t i = 0; i < taps.size(); ++i) heads.push_back(lpe[i](taps[i]));
    return proj(ops::concat_lastdim(heads));
  };
  pr.A = run_branch(spectral, lpe_spe, proj_spe, m_img);
  pr.B = run_branch(spatial, lpe_spa, proj_spa, pr.q);
  return pr;
}

SspenOutput Sspen::forward(const Tensor& m_img, const Tensor& pan) const {
  SspenPriors pr = priors(m_img, pan);
  SspenOutput out;
  out.A = pr.A;
  out.B = pr.B;
  out.O1 = ops::add(inr_decode(out.A, out.B, pan.dim(0), pan.dim(1)), pr.mup);
  return out;
}

std::vector<double> pretrain_edsr(ParamStore& ps, EdsrBackbone& net, const std::string& prefix,
                                  std::int64_t in_ch, std::uint64_t seed, int steps, double lr) {
  const int corpus = 8;
  std::vector<Tensor> hr, lr_up;
  for (int i = 0; i < corpus; ++i) {
    SceneSpec spec;
    spec.seed = derive_seed(seed, static_cast<std::uint64_t>(i));
    spec.size = 32;
    spec.bands = in_ch;
    Tensor gt = synth_scene(spec);
    hr.push_back(gt);
    lr_up.push_back(ops::upsample_bicubic(degrade(gt, kDefaultSigma, kRatio), kRatio));
  }

  AdamConfig acfg;
  acfg.lr = lr;
  Adam opt(ps, acfg);
  std::vector<double> curve;
  for (int s = 0; s < steps; ++s) {
    int i = s % corpus;
    opt.zero_grad();
    Tape tape;
    Tensor loss = ops::l1_loss(net.reconstruct(lr_up[static_cast<std::size_t>(i)]),
                               hr[static_cast<std::size_t>(i)]);
    if (!std::isfinite(loss.value()))
      throw std::runtime_error("pretraining diverged: non-finite loss at step " +
                               std::to_string(s));
    backward(loss);
    curve.push_back(loss.value());
    opt.step();
  }
  ps.set_trainable(prefix, false);
  return curve;
}

}  // namespace ps
