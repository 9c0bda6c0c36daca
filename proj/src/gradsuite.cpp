#include "pansharp/gradsuite.hpp"

#include <cmath>

#include "pansharp/mfin.hpp"
#include "pansharp/nn.hpp"
#include "pansharp/ops.hpp"
#include "pansharp/sspen.hpp"

namespace ps {

namespace {

Tensor rand_t(std::vector<std::int64_t> shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

}  // namespace

double sampled_grad_check(const std::function<Tensor()>& forward, std::vector<Tensor> wrt,
                          int samples_per_tensor, std::uint64_t seed, double eps) {
  DtypeGuard fp64(Dtype::F64);
  Rng rng(seed ? seed : 1);

  for (Tensor& t : wrt) {
    t.set_requires_grad(true);
    t.zero_grad();
  }

  Tensor proj;
  auto loss_value = [&]() -> Tensor {
    Tensor out = forward();
    if (!proj.defined()) proj = rand_t(out.shape(), rng);
    return ops::sum(ops::mul(out, proj));
  };

  std::vector<std::vector<double>> analytic;
  {
    Tape tape;
    Tensor loss = loss_value();
    backward(loss);
    for (Tensor& t : wrt) analytic.push_back(t.grad());
  }

  double max_err = 0.0;
  for (std::size_t ti = 0; ti < wrt.size(); ++ti) {
    Tensor& t = wrt[ti];
    for (int s = 0; s < samples_per_tensor; ++s) {
      std::int64_t i = rng.uniform_int(t.numel());
      double saved = t.data()[static_cast<std::size_t>(i)];
      t.data()[static_cast<std::size_t>(i)] = saved + eps;
      double up = loss_value().value();
      t.data()[static_cast<std::size_t>(i)] = saved - eps;
      double dn = loss_value().value();
      t.data()[static_cast<std::size_t>(i)] = saved;
      double numeric = (up - dn) / (2.0 * eps);
      double a = analytic[ti][static_cast<std::size_t>(i)];
      double err = std::abs(a - numeric) / std::max({1.0, std::abs(a), std::abs(numeric)});
      max_err = std::max(max_err, err);
    }
  }
  return max_err;
}

GradReport run_grad_suite(bool include_end_to_end) {
  DtypeGuard fp64(Dtype::F64);
  GradReport report;
  Rng rng(424242);
  auto check = [&](const std::string& name, double err, double tol = 1e-4) {
    report.entries.push_back({name, err, tol});
  };
  using In = const std::vector<Tensor>&;

  check("add", grad_check([](In x) { return ops::add(x[0], x[1]); },
                          {rand_t({3, 4}, rng), rand_t({3, 4}, rng)}), 1e-6);
  check("sub", grad_check([](In x) { return ops::sub(x[0], x[1]); },
                          {rand_t({3, 4}, rng), rand_t({3, 4}, rng)}), 1e-6);
  check("mul", grad_check([](In x) { return ops::mul(x[0], x[1]); },
                          {rand_t({3, 4}, rng), rand_t({3, 4}, rng)}), 1e-6);
  check("scale", grad_check([](In x) { return ops::scale(x[0], -1.7); }, {rand_t({3, 4}, rng)}),
        1e-6);
  check("mul_scalar", grad_check([](In x) { return ops::mul_scalar(x[0], x[1]); },
                                 {rand_t({1}, rng), rand_t({3, 4}, rng)}), 1e-6);
  check("add_bias", grad_check([](In x) { return ops::add_bias(x[0], x[1]); },
                               {rand_t({3, 4}, rng), rand_t({4}, rng)}), 1e-6);
  check("matmul", grad_check([](In x) { return ops::matmul(x[0], x[1]); },
                             {rand_t({3, 4}, rng), rand_t({4, 2}, rng)}), 1e-6);
  check("matmul_nt", grad_check([](In x) { return ops::matmul_nt(x[0], x[1]); },
                                {rand_t({3, 4}, rng), rand_t({2, 4}, rng)}), 1e-6);
  check("matmul_tn", grad_check([](In x) { return ops::matmul_tn(x[0], x[1]); },
                                {rand_t({4, 3}, rng), rand_t({4, 2}, rng)}), 1e-6);
  check("conv2d", grad_check([](In x) { return ops::conv2d(x[0], x[1]); },
                             {rand_t({5, 5, 2}, rng), rand_t({3, 3, 2, 3}, rng)}));
  check("depthwise_conv2d", grad_check([](In x) { return ops::depthwise_conv2d(x[0], x[1]); },
                                       {rand_t({5, 5, 3}, rng), rand_t({3, 3, 3}, rng)}));
  check("upsample_bicubic", grad_check([](In x) { return ops::upsample_bicubic(x[0], 4); },
                                       {rand_t({3, 3, 2}, rng)}), 1e-6);
  check("nearest_resize", grad_check([](In x) { return ops::nearest_resize(x[0], 7, 5); },
                                     {rand_t({3, 3, 2}, rng)}), 1e-6);
  check("relu", grad_check([](In x) { return ops::relu(x[0]); },
                           {rand_t({4, 4}, rng, 0.1, 1.0)}));  // keep clear of the kink
  check("gelu", grad_check([](In x) { return ops::gelu(x[0]); }, {rand_t({4, 4}, rng)}));
  check("sigmoid", grad_check([](In x) { return ops::sigmoid(x[0]); }, {rand_t({4, 4}, rng)}));
  check("sine_act", grad_check([](In x) { return ops::sine_act(x[0], 30.0); },
                               {rand_t({4, 4}, rng)}));
  check("layer_norm", grad_check([](In x) { return ops::layer_norm(x[0], x[1], x[2], 1e-5); },
                                 {rand_t({3, 6}, rng), rand_t({6}, rng), rand_t({6}, rng)}));
  check("softmax_lastdim",
        grad_check([](In x) { return ops::softmax_lastdim(x[0]); }, {rand_t({3, 5}, rng)}));
  check("reshape", grad_check([](In x) { return ops::reshape(x[0], {6, 2}); },
                              {rand_t({3, 4}, rng)}), 1e-6);
  check("concat_lastdim", grad_check([](In x) { return ops::concat_lastdim({x[0], x[1]}); },
                                     {rand_t({3, 2}, rng), rand_t({3, 3}, rng)}), 1e-6);
  check("slice_lastdim", grad_check([](In x) { return ops::slice_lastdim(x[0], 1, 3); },
                                    {rand_t({3, 6}, rng)}), 1e-6);
  check("patchify", grad_check([](In x) { return ops::patchify(x[0], 2); },
                               {rand_t({4, 4, 3}, rng)}), 1e-6);
  check("unpatchify", grad_check([](In x) { return ops::unpatchify(x[0], 4, 4, 2, 3); },
                                 {rand_t({4, 12}, rng)}), 1e-6);
  check("abs_val", grad_check([](In x) { return ops::abs_val(x[0]); },
                              {rand_t({4, 4}, rng, 0.1, 1.0)}));
  check("l1_loss", grad_check([](In x) { return ops::l1_loss(x[0], x[1]); },
                              {rand_t({4, 4}, rng, 0.5, 1.0), rand_t({4, 4}, rng, -1.0, -0.5)}));
  check("mse_loss", grad_check([](In x) { return ops::mse_loss(x[0], x[1]); },
                               {rand_t({4, 4}, rng), rand_t({4, 4}, rng)}));
  check("attention", grad_check([](In x) { return scaled_dot_attention(x[0], x[1], x[2], 2); },
                                {rand_t({3, 4}, rng), rand_t({5, 4}, rng), rand_t({5, 4}, rng)}));

  if (include_end_to_end) {
    // tiny config: 16x16 LRMS, L=4, t=2, k=8
    SspenConfig scfg;
    scfg.bands = 2;
    scfg.channels = 8;
    scfg.n_blocks = 2;
    scfg.d_prime = 4;
    scfg.m = 8;
    scfg.inr_width = 16;

    Rng srng(7);
    ParamStore sstore;
    Sspen sspen(sstore, scfg, srng);
    Tensor m_img = rand_t({16, 16, 2}, srng, 0.0, 1.0);
    Tensor pan = rand_t({64, 64, 1}, srng, 0.0, 1.0);
    double e1 = sampled_grad_check(
        [&] { return sspen.forward(m_img, pan).O1; },
        {m_img, pan, sstore.at("sspen.lpe_spe.0.reduce.w").tensor,
         sstore.at("sspen.proj_spa.w").tensor, sstore.at("sspen.inr.0.w").tensor,
         sstore.at("sspen.inr.3.b").tensor},
        4, 99);
    check("stage1_end_to_end", e1, 1e-3);

    MfinConfig mcfg;
    mcfg.bands = 2;
    mcfg.m = 8;
    mcfg.lr_h = 16;
    mcfg.lr_w = 16;
    mcfg.layers = 4;
    mcfg.dim = 16;
    mcfg.heads = 2;
    mcfg.mlp_ratio = 2;
    mcfg.k = 8;
    mcfg.interval = 2;
    mcfg.inr_width = 16;

    Rng mrng(8);
    ParamStore mstore;
    Mfin mfin(mstore, mcfg, mrng);
    // give the zero-initialized boundary parameters generic values so the
    // checked gradients are not trivially zero
    for (const auto& p : mstore.all())
      if (p->name.find(".up.") != std::string::npos ||
          p->name.find(".cti.s") != std::string::npos ||
          p->name.find("mfin.head_") != std::string::npos)
        for (double& v : p->tensor.data()) v = mrng.uniform(-0.05, 0.05);

    Tensor a = rand_t({16, 16, 8}, mrng, 0.0, 1.0);
    Tensor b = rand_t({64, 64, 8}, mrng, 0.0, 1.0);
    Tensor q = rand_t({64, 64, 3}, mrng, 0.0, 1.0);
    double e2 = sampled_grad_check(
        [&] { return mfin.forward(a, b, q).O2; },
        {a, b, q, mstore.at("mfin.adapter0.down.w").tensor,
         mstore.at("mfin.adapter0.ctf_spe.gate_fc1.w").tensor,
         mstore.at("mfin.adapter1.cti.fuse.w").tensor, mstore.at("mfin.adapter1.cti.s").tensor,
         mstore.at("mfin.adapter0.up.w").tensor, mstore.at("mfin.head_spa.w").tensor,
         mstore.at("mfin.inr.1.w").tensor},
        4, 100);
    check("stage2_end_to_end", e2, 1e-3);
  }
  return report;
}

}  // namespace ps
