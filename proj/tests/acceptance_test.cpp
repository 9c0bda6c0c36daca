// Acceptance gate: one pass/fail line per criterion, nonzero exit on any
// failure. Criteria are property-based: gradient correctness, identity at
// adapter initialization, backbone freezing, token alignment, metric oracles,
// learning sanity on an overfit set, ablation direction, parameter
// accounting, and bitwise determinism of the scripted pipeline.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "pansharp/checkpoint.hpp"
#include "pansharp/config.hpp"
#include "pansharp/gradsuite.hpp"
#include "pansharp/metrics.hpp"
#include "pansharp/mfin.hpp"
#include "pansharp/ops.hpp"
#include "pansharp/pipeline.hpp"
#include "pansharp/sspen.hpp"
#include "pansharp/tensor.hpp"
#include "pansharp/waldsim.hpp"

namespace fs = std::filesystem;
using namespace ps;

namespace {

int g_failures = 0;

void report(int index, const std::string& name, bool pass, const std::string& detail) {
  std::printf("[%s] %d. %s: %s\n", pass ? "PASS" : "FAIL", index, name.c_str(), detail.c_str());
  std::fflush(stdout);
  if (!pass) ++g_failures;
}

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(4);
  os << v;
  return os.str();
}

Tensor random_tensor(std::vector<std::int64_t> shape, Rng& rng, double lo = 0.0,
                     double hi = 1.0) {
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

double mean_l1(const Tensor& a, const Tensor& b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.data().size(); ++i) acc += std::abs(a.data()[i] - b.data()[i]);
  return acc / static_cast<double>(a.data().size());
}

bool dirs_identical(const fs::path& a, const fs::path& b, std::string* why) {
  auto listing = [](const fs::path& root) {
    std::vector<fs::path> rel;
    for (const auto& e : fs::recursive_directory_iterator(root))
      if (e.is_regular_file()) rel.push_back(fs::relative(e.path(), root));
    std::sort(rel.begin(), rel.end());
    return rel;
  };
  std::vector<fs::path> la = listing(a), lb = listing(b);
  if (la != lb) {
    *why = "file listings differ";
    return false;
  }
  for (const auto& r : la) {
    std::ifstream fa(a / r, std::ios::binary), fb(b / r, std::ios::binary);
    std::string sa((std::istreambuf_iterator<char>(fa)), std::istreambuf_iterator<char>());
    std::string sb((std::istreambuf_iterator<char>(fb)), std::istreambuf_iterator<char>());
    if (sa != sb) {
      *why = "content differs: " + r.string();
      return false;
    }
  }
  return true;
}

// Shared model scale for the training-based criteria: small enough to keep
// the whole gate within its runtime budget, large enough to learn.
RunConfig small_model(const std::string& root) {
  RunConfig cfg;
  cfg.data_dir = root + "/data";
  cfg.out_dir = root + "/out";
  cfg.d_c = 8;
  cfg.n_blocks = 2;
  cfg.d_prime = 4;
  cfg.m = 8;
  cfg.layers = 4;
  cfg.dim = 16;
  cfg.heads = 2;
  cfg.k = 8;
  cfg.interval = 2;
  cfg.inr_width = 16;
  cfg.seed = 7;
  return cfg;
}

// ---------------------------------------------------------------------------

void criterion_gradients() {
  auto t0 = std::chrono::steady_clock::now();
  GradReport rep = run_grad_suite(/*include_end_to_end=*/true);
  double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  double worst = 0.0;
  std::string worst_name;
  bool all = true;
  for (const auto& e : rep.entries) {
    if (!e.pass()) all = false;
    if (e.err > worst) {
      worst = e.err;
      worst_name = e.name;
    }
  }
  bool pass = all && secs < 120.0;
  report(1, "gradient checks (ops + both end-to-end stage graphs)", pass,
         std::to_string(rep.entries.size()) + " entries, max rel err " + fmt(worst) + " (" +
             worst_name + "), " + fmt(secs) + " s (budget 120 s)");
}

void criterion_init_identity() {
  MfinConfig cfg;
  cfg.bands = 4;
  cfg.m = 8;
  cfg.lr_h = cfg.lr_w = 16;
  cfg.layers = 4;
  cfg.dim = 16;
  cfg.heads = 2;
  cfg.k = 8;
  cfg.interval = 2;
  cfg.inr_width = 16;
  ParamStore store;
  Rng rng(11);
  Mfin mfin(store, cfg, rng);

  double worst = 0.0;
  for (int trial = 0; trial < 5; ++trial) {
    Rng r(derive_seed(31, static_cast<std::uint64_t>(trial)));
    Tensor a = random_tensor({cfg.lr_h, cfg.lr_w, cfg.m}, r);
    Tensor b = random_tensor({4 * cfg.lr_h, 4 * cfg.lr_w, cfg.m}, r);
    Tensor q = random_tensor({4 * cfg.lr_h, 4 * cfg.lr_w, cfg.bands + 1}, r);

    auto [f_spe, f_spa] = mfin.tokenize_priors(a, b);
    Tensor frozen = mfin.vit.embed(q);
    Tensor adapted = frozen;
    std::size_t j = 0;
    for (int i = 0; i < cfg.layers; ++i) {
      frozen = mfin.vit.block(frozen, i);
      adapted = mfin.vit.block(adapted, i);
      if ((i + 1) % cfg.interval == 0) adapted = mfin.adapters[j++](f_spe, f_spa, adapted, cfg);
    }
    for (std::size_t i = 0; i < frozen.data().size(); ++i)
      worst = std::max(worst, std::abs(frozen.data()[i] - adapted.data()[i]));
  }
  report(2, "adapter stack is the identity at initialization", worst <= 1e-6,
         "max |adapted - frozen| = " + fmt(worst) + " over 5 random inputs (tol 1e-6)");
}

// Loads two checkpoints and verifies every parameter whose name starts with
// `prefix` carries bit-identical values in both.
bool frozen_identical(const std::string& ckpt_small, const std::string& ckpt_big,
                      ParamStore& small_store, ParamStore& big_store, const std::string& prefix,
                      std::string* why) {
  load_checkpoint(ckpt_small, small_store);
  load_checkpoint(ckpt_big, big_store);
  int compared = 0;
  for (const auto& p : small_store.all()) {
    if (p->name.rfind(prefix, 0) != 0) continue;
    const auto& other = big_store.at(p->name);
    if (p->tensor.data() != other.tensor.data()) {
      *why = "drift in " + p->name;
      return false;
    }
    ++compared;
  }
  if (compared == 0) {
    *why = "no parameters under prefix " + prefix;
    return false;
  }
  return true;
}

void criterion_freeze(const std::string& root) {
  RunConfig cfg = small_model(root + "/freeze");
  cfg.h = 4;
  cfg.bands = 3;
  cfg.n_train = 4;
  cfg.n_reduced = 2;
  cfg.n_full = 1;
  cfg.steps = 200;
  cfg.pretrain_steps = 30;
  cfg.batch = 2;
  ensure_dataset(cfg);
  pretrain_backbones(cfg);
  TrainResult s1 = train_stage1(cfg);
  TrainResult s2 = train_stage2(cfg);

  SspenConfig scfg = sspen_config(cfg);
  MfinConfig mcfg = mfin_config(cfg);
  bool pass = true;
  std::string why, detail;
  {
    // stage 1: both image backbones must match their pretrained values
    for (const char* which : {"spe", "spa"}) {
      std::string prefix = std::string("sspen.backbone_") + which;
      ParamStore pre_store, s1_store;
      Rng r1(1), r2(2);
      EdsrBackbone net(pre_store, prefix,
                       which == std::string("spe") ? cfg.bands : cfg.bands + 1, scfg, r1, false);
      Sspen full(s1_store, scfg, r2);
      if (!frozen_identical(pretrain_dir(cfg, which), s1.ckpt_dir, pre_store, s1_store, prefix,
                            &why))
        pass = false;
    }
  }
  {
    // stage 2: every stage-1 parameter and the transformer backbone are frozen
    ParamStore s1_store, s2_store;
    Rng r1(1), r2(2);
    Sspen sspen1(s1_store, scfg, r1);
    Sspen sspen2(s2_store, scfg, r2);
    Mfin mfin2(s2_store, mcfg, r2);
    if (!frozen_identical(s1.ckpt_dir, s2.ckpt_dir, s1_store, s2_store, "sspen.", &why))
      pass = false;
    ParamStore pre_store, s2b_store;
    Rng r3(3), r4(4);
    VitBackbone vit(pre_store, "mfin.vit", mcfg, r3, false);
    Sspen sspen3(s2b_store, scfg, r4);
    Mfin mfin3(s2b_store, mcfg, r4);
    if (!frozen_identical(pretrain_dir(cfg, "vit"), s2.ckpt_dir, pre_store, s2b_store, "mfin.vit",
                          &why))
      pass = false;
  }
  detail = pass ? "all frozen parameters bit-identical after 200 steps in each stage" : why;
  report(3, "frozen backbones never move during training", pass, detail);
}

void criterion_token_alignment() {
  bool pass = true;
  std::string detail;
  for (std::int64_t h : {8, 16, 32}) {
    MfinConfig cfg;
    cfg.bands = 4;
    cfg.m = 8;
    cfg.lr_h = cfg.lr_w = h;
    cfg.layers = 2;
    cfg.dim = 16;
    cfg.heads = 2;
    cfg.k = 8;
    cfg.interval = 2;
    cfg.inr_width = 16;
    ParamStore store;
    Rng rng(5);
    Mfin mfin(store, cfg, rng);
    Rng r(derive_seed(6, static_cast<std::uint64_t>(h)));
    Tensor a = random_tensor({h, h, cfg.m}, r);
    Tensor b = random_tensor({4 * h, 4 * h, cfg.m}, r);
    Tensor q = random_tensor({4 * h, 4 * h, cfg.bands + 1}, r);
    auto [f_spe, f_spa] = mfin.tokenize_priors(a, b);
    Tensor vit_tokens = mfin.vit.embed(q);
    std::int64_t want = h * h;
    if (f_spe.dim(0) != want || f_spa.dim(0) != want || vit_tokens.dim(0) != want) pass = false;
    detail += (detail.empty() ? "" : ", ") + std::to_string(h) + "->" +
              std::to_string(vit_tokens.dim(0));
  }
  report(4, "spectral, spatial and backbone token counts agree (h^2)", pass, detail);
}

void criterion_metric_oracles() {
  bool pass = true;
  std::string why = "all closed-form identities hold";
  auto expect = [&](bool ok, const std::string& what) {
    if (!ok && pass) {
      pass = false;
      why = what;
    }
  };

  Rng rng(17);
  Tensor x = random_tensor({16, 16, 4}, rng, 0.1, 1.0);

  expect(metrics::sam_degrees(x, x) <= 1e-9, "SAM(x,x) != 0");
  Tensor x3 = x.clone();
  for (double& v : x3.data()) v *= 3.0;
  expect(metrics::sam_degrees(x, x3) <= 1e-9, "SAM(x,3x) != 0");
  expect(metrics::ergas(x, x, kRatio) <= 1e-9, "ERGAS(x,x) != 0");
  expect(std::abs(metrics::q2n(x, x, 8) - 1.0) <= 1e-9, "Q2n(x,x) != 1");
  {
    Tensor pan = metrics::extract_band(x, 0);
    double dl = metrics::d_lambda(x, x, 1.0, 8);
    double ds = metrics::d_s(x, pan, x, pan, 1.0, 8);
    expect(std::abs(metrics::qnr(dl, ds, 1.0, 1.0) - 1.0) <= 1e-9, "QNR identity != 1");
  }
  {
    Tensor gt = random_tensor({16, 16, 3}, rng, 20.0, 200.0);
    Tensor off = gt.clone();
    for (double& v : off.data()) v += 10.0;
    double p = metrics::psnr(off, gt, 255.0);  // 20*log10(255/10)
    expect(std::abs(p - 28.13) <= 0.01, "PSNR offset-10 = " + fmt(p));
  }
  {
    // single band, reference mean 1, RMSE 0.04, ratio 4 -> ERGAS exactly 1
    Tensor gt = Tensor::full({8, 8, 1}, 1.0);
    Tensor pred = gt.clone();
    for (std::size_t i = 0; i < pred.data().size(); ++i)
      pred.data()[i] += (i % 2 == 0 ? 0.04 : -0.04);
    double e = metrics::ergas(pred, gt, 4);
    expect(std::abs(e - 1.0) <= 1e-6, "single-band ERGAS = " + fmt(e));
  }
  {
    Tensor a = random_tensor({16, 16, 1}, rng);
    Tensor b = random_tensor({16, 16, 1}, rng);
    double d = std::abs(metrics::q2n(a, b, 8) - metrics::uiqi(metrics::extract_band(a, 0),
                                                              metrics::extract_band(b, 0), 8));
    expect(d <= 1e-9, "single-band Q2n vs UIQI gap " + fmt(d));
  }
  report(5, "metric oracles (closed forms and identities)", pass, why);
}

void criterion_learning(const std::string& root) {
  struct {
    RunConfig cfg;
    double base_l1 = 0.0, o1_l1 = 0.0, o2_l1 = 0.0;
  } run;
  RunConfig& cfg = run.cfg;
  cfg = small_model(root + "/learn");
  cfg.h = 8;
  cfg.n_train = 8;
  cfg.n_reduced = 20;
  cfg.n_full = 2;
  cfg.d_c = 16;
  cfg.m = 16;
  cfg.inr_width = 32;
  cfg.steps = 500;
  cfg.pretrain_steps = 200;
  cfg.batch = 4;
  cfg.lr1 = 1e-3;  // overfit-set rates: the stage-2 pathway trains from its
  cfg.lr2 = 2e-3;  // zero-initialized start and needs a faster schedule than
                   // the conservative defaults to converge in the step budget
  auto t0 = std::chrono::steady_clock::now();
  ensure_dataset(cfg);
  pretrain_backbones(cfg);
  TrainResult s1 = train_stage1(cfg);
  TrainResult s2 = train_stage2(cfg);

  std::vector<SamplePair> train = read_split(cfg.data_dir, "train");
  ParamStore store1;
  Rng r1(derive_seed(cfg.seed, 501));
  Sspen net1(store1, sspen_config(cfg), r1);
  load_checkpoint(s1.ckpt_dir, store1);
  ParamStore store2;
  Rng r2(derive_seed(cfg.seed, 501));
  Sspen sspen2(store2, sspen_config(cfg), r2);
  Mfin mfin2(store2, mfin_config(cfg), r2);
  load_checkpoint(s2.ckpt_dir, store2);

  for (const SamplePair& s : train) {
    run.base_l1 += mean_l1(ops::upsample_bicubic(s.lrms, kRatio), *s.gt);
    run.o1_l1 += mean_l1(net1.forward(s.lrms, s.pan).O1, *s.gt);
    SspenPriors pr = sspen2.priors(s.lrms, s.pan);
    run.o2_l1 += mean_l1(mfin2.forward(pr.A, pr.B, pr.q).O2, *s.gt);
  }
  run.base_l1 /= static_cast<double>(train.size());
  run.o1_l1 /= static_cast<double>(train.size());
  run.o2_l1 /= static_cast<double>(train.size());
  double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  bool pass = run.o1_l1 <= 0.8 * run.base_l1 && run.o2_l1 < run.o1_l1 && secs < 900.0;
  report(6, "learning sanity on the 8-sample overfit set", pass,
         "L1 bicubic " + fmt(run.base_l1) + ", stage 1 " + fmt(run.o1_l1) + " (need <= " +
             fmt(0.8 * run.base_l1) + "), stage 2 " + fmt(run.o2_l1) + ", " + fmt(secs) +
             " s (budget 900 s)");
}

void criterion_ablation(const std::string& root) {
  // Dedicated run: a 16-sample training set keeps the comparison out of the
  // pure-overfit regime where the two variants are indistinguishable.
  RunConfig cfg = small_model(root + "/ablate");
  cfg.h = 8;
  cfg.n_train = 16;
  cfg.n_reduced = 20;
  cfg.n_full = 2;
  cfg.d_c = 16;
  cfg.m = 16;
  cfg.inr_width = 32;
  cfg.steps = 500;
  cfg.pretrain_steps = 400;
  cfg.batch = 4;
  cfg.lr1 = 1e-3;
  cfg.lr2 = 2e-3;
  ensure_dataset(cfg);
  pretrain_backbones(cfg);
  train_stage1(cfg);
  train_stage2(cfg);
  EvalReport full = evaluate(cfg, stage_dir(cfg, 2), "reduced");

  RunConfig acfg = cfg;
  acfg.no_cti = true;
  acfg.out_dir = cfg.out_dir + "_no_cti";
  fs::create_directories(fs::path(acfg.out_dir) / "ckpt");
  for (const char* which : {"spe", "spa", "vit"})
    fs::copy(pretrain_dir(cfg, which), pretrain_dir(acfg, which), fs::copy_options::recursive);
  fs::copy(stage_dir(cfg, 1), stage_dir(acfg, 1), fs::copy_options::recursive);
  TrainResult ab = train_stage2(acfg);
  EvalReport no_cti = evaluate(acfg, ab.ckpt_dir, "reduced");

  double sam_full = full.mean.at("sam"), sam_ab = no_cti.mean.at("sam");
  report(7, "removing the injection path does not improve spectral angle",
         sam_full <= sam_ab,
         "mean SAM full " + fmt(sam_full) + " vs without injection " + fmt(sam_ab) + " on " +
             std::to_string(full.rows.size() - 1) + " samples");
}

void criterion_param_accounting(const std::string& root) {
  auto linear = [](std::int64_t in, std::int64_t out) { return in * out + out; };
  auto conv = [](std::int64_t ks, std::int64_t in, std::int64_t out) {
    return ks * ks * in * out + out;
  };
  auto norm = [](std::int64_t d) { return 2 * d; };
  auto attention = [&](std::int64_t d) { return 4 * linear(d, d); };

  auto hand_count = [&](const RunConfig& cfg, std::int64_t& total, std::int64_t& stage2_train,
                        std::int64_t& union_train) {
    std::int64_t s = cfg.bands, Dc = cfg.d_c, n = cfg.n_blocks, dp = cfg.d_prime, m = cfg.m;
    std::int64_t W = cfg.inr_width, L = cfg.layers, D = cfg.dim, k = cfg.k;
    std::int64_t T = static_cast<std::int64_t>(cfg.h) * cfg.h;
    std::int64_t J = L / cfg.interval;
    std::int64_t patch_dim = 16 * (s + 1);

    auto backbone = [&](std::int64_t in) {
      return conv(3, in, Dc) + n * 2 * conv(3, Dc, Dc) + conv(3, Dc, in);
    };
    auto inr_tail = [&] {
      return linear(2 * m + 4, W) + 2 * linear(W, W) + linear(W, s);  // 4 layers
    };
    std::int64_t lpe_branch = n * (conv(1, Dc, dp) + (3 * 3 * dp + dp));
    std::int64_t stage1_train = 2 * lpe_branch + 2 * conv(1, n * dp, m) + inr_tail();
    std::int64_t sspen_total = backbone(s) + backbone(s + 1) + stage1_train;

    std::int64_t vit = linear(patch_dim, D) + T * D + linear(D, patch_dim) +
                       L * (2 * norm(D) + attention(D) + linear(D, 2 * D) + linear(2 * D, D));
    std::int64_t ctf = linear(k, k / 4) + linear(k / 4, k) + 2 * norm(k) + attention(k) +
                       linear(k, k / 2) + linear(k / 2, k);
    std::int64_t cti = linear(2 * k, k) + 2 * norm(k) + attention(k) + 1;
    std::int64_t adapter = linear(D, k) + 2 * ctf + cti + linear(k, D);
    std::int64_t mfin_train = linear(m, k) + linear(16 * m, k) + T * k + J * adapter +
                              linear(k, m) + linear(k, 16 * m) + inr_tail();

    total = sspen_total + vit + mfin_train;
    stage2_train = mfin_train;
    union_train = stage1_train + mfin_train;
  };

  // tiny configuration: exact match against a saved stage-2-style checkpoint
  RunConfig tiny = small_model(root + "/params");
  tiny.h = 16;
  std::int64_t want_total = 0, want_train = 0, want_union = 0;
  hand_count(tiny, want_total, want_train, want_union);

  ParamStore store;
  Rng rng(9);
  Sspen sspen(store, sspen_config(tiny), rng);
  Mfin mfin(store, mfin_config(tiny), rng);
  store.set_trainable("sspen.", false);  // stage-2 freeze pattern
  CheckpointInfo info;
  info.stage = "stage2";
  info.config_hash = config_hash(tiny);
  std::string dir = root + "/params/ckpt";
  save_checkpoint(dir, store, info);
  ParamReport rep = count_params(dir);
  bool tiny_ok = rep.total == want_total && rep.trainable == want_train;

  // default desk configuration: fraction of ever-trainable parameters
  RunConfig desk;
  ParamStore desk_store;
  Rng desk_rng(10);
  Sspen desk_sspen(desk_store, sspen_config(desk), desk_rng);
  Mfin desk_mfin(desk_store, mfin_config(desk), desk_rng);
  std::int64_t desk_total = 0, desk_train = 0, desk_union = 0;
  hand_count(desk, desk_total, desk_train, desk_union);
  double fraction = static_cast<double>(desk_store.count_trainable()) /
                    static_cast<double>(desk_store.count_total());
  bool desk_ok = desk_store.count_total() == desk_total &&
                 desk_store.count_trainable() == desk_union && fraction < 0.15;

  report(8, "parameter accounting", tiny_ok && desk_ok,
         "tiny total " + std::to_string(rep.total) + " (hand " + std::to_string(want_total) +
             "), tiny trainable " + std::to_string(rep.trainable) + " (hand " +
             std::to_string(want_train) + "); desk trainable fraction " + fmt(fraction) +
             " (< 0.15)");
}

void criterion_determinism(const std::string& root) {
  for (const char* tag : {"a", "b"}) {
    RunConfig cfg = small_model(root + "/det_" + std::string(tag));
    cfg.h = 4;
    cfg.n_train = 4;
    cfg.n_reduced = 2;
    cfg.n_full = 1;
    cfg.steps = 6;
    cfg.pretrain_steps = 8;
    cfg.batch = 2;
    ensure_dataset(cfg);
    pretrain_backbones(cfg);
    train_stage1(cfg);
    train_stage2(cfg);
    evaluate(cfg, stage_dir(cfg, 2), "reduced");
  }
  std::string why;
  bool pass = dirs_identical(root + "/det_a", root + "/det_b", &why);
  report(9, "scripted runs are byte-identical under a fixed seed", pass,
         pass ? "checkpoints, reports and data match bitwise" : why);
}

}  // namespace

int main() {
  fs::path root = fs::temp_directory_path() / "pansharp-acceptance";
  fs::remove_all(root);
  fs::create_directories(root);

  try {
    criterion_gradients();
    criterion_init_identity();
    criterion_freeze(root.string());
    criterion_token_alignment();
    criterion_metric_oracles();
    criterion_learning(root.string());
    criterion_ablation(root.string());
    criterion_param_accounting(root.string());
    criterion_determinism(root.string());
  } catch (const std::exception& e) {
    std::printf("[FAIL] unexpected exception: %s\n", e.what());
    ++g_failures;
  }

  fs::remove_all(root);
  if (g_failures > 0) {
    std::printf("%d criterion(s) failed\n", g_failures);
    return 1;
  }
  std::printf("all acceptance criteria passed\n");
  return 0;
}
