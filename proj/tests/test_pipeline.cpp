#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "pansharp/gradsuite.hpp"
#include "pansharp/metrics.hpp"
#include "pansharp/ops.hpp"
#include "pansharp/pipeline.hpp"

using namespace ps;
namespace fs = std::filesystem;

namespace {

RunConfig smoke_config(const std::string& root) {
  RunConfig cfg;
  cfg.data_dir = root + "/data";
  cfg.out_dir = root + "/out";
  cfg.h = 4;
  cfg.n_train = 4;
  cfg.n_reduced = 3;
  cfg.n_full = 2;
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
  cfg.steps = 12;
  cfg.pretrain_steps = 16;
  cfg.batch = 2;
  cfg.seed = 7;
  return cfg;
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

bool dirs_identical(const fs::path& a, const fs::path& b) {
  std::vector<std::string> names;
  for (const auto& e : fs::directory_iterator(a)) names.push_back(e.path().filename().string());
  std::sort(names.begin(), names.end());
  for (const auto& n : names) {
    if (!fs::exists(b / n)) return false;
    if (fs::is_directory(a / n)) {
      if (!dirs_identical(a / n, b / n)) return false;
    } else if (read_file(a / n) != read_file(b / n)) {
      return false;
    }
  }
  return true;
}

struct TempRoot {
  std::string path;
  explicit TempRoot(const std::string& name) : path("pipeline_test_" + name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempRoot() { fs::remove_all(path); }
};

}  // namespace

TEST_CASE("config parsing") {
  TempRoot root("config");
  SUBCASE("round-trips keys through sections") {
    std::ofstream f(root.path + "/a.cfg");
    f << "# comment\n[data]\nh = 8\nbands=4\n\n[model]\nk = 16\n\n[ablate]\nno_cti = true\n";
    f.close();
    RunConfig cfg = load_config(root.path + "/a.cfg");
    CHECK(cfg.h == 8);
    CHECK(cfg.k == 16);
    CHECK(cfg.no_cti);
    CHECK_FALSE(cfg.no_ctf);
  }
  SUBCASE("unknown keys and malformed lines are rejected") {
    std::ofstream f(root.path + "/b.cfg");
    f << "definitely_not_a_key = 3\n";
    f.close();
    CHECK_THROWS_AS(load_config(root.path + "/b.cfg"), std::invalid_argument);
    std::ofstream g(root.path + "/c.cfg");
    g << "no equals sign here\n";
    g.close();
    CHECK_THROWS_AS(load_config(root.path + "/c.cfg"), std::invalid_argument);
  }
  SUBCASE("invariants enforced") {
    RunConfig cfg;
    cfg.interval = 3;  // does not divide layers=8
    CHECK_THROWS_AS(validate(cfg), std::invalid_argument);
    cfg = RunConfig{};
    cfg.k = 128;  // exceeds dim
    CHECK_THROWS_AS(validate(cfg), std::invalid_argument);
    cfg = RunConfig{};
    cfg.m = 0;
    CHECK_THROWS_AS(validate(cfg), std::invalid_argument);
  }
  SUBCASE("hash tracks the configuration") {
    RunConfig a, b;
    CHECK(config_hash(a) == config_hash(b));
    b.k = 16;
    CHECK(config_hash(a) != config_hash(b));
  }
}

TEST_CASE("stage-1 training contracts") {
  TempRoot root("stage1");
  RunConfig cfg = smoke_config(root.path);
  ensure_dataset(cfg);
  pretrain_backbones(cfg);

  SUBCASE("zero steps checkpoint the untouched init") {
    RunConfig c0 = cfg;
    c0.steps = 0;
    TrainResult r1 = train_stage1(c0);
    std::string first = read_file(fs::path(r1.ckpt_dir) / "manifest.json");
    TrainResult r2 = train_stage1(c0);
    CHECK(read_file(fs::path(r2.ckpt_dir) / "manifest.json") == first);
    CHECK(r1.losses.empty());
  }
  SUBCASE("training reduces the loss and leaves backbones frozen") {
    TrainResult r = train_stage1(cfg);
    REQUIRE(r.losses.size() == 12);
    CHECK(r.losses.back() < r.losses.front());

    // frozen params must be bit-identical to the pretrained values
    ParamStore pre_store;
    Rng rng(1);
    SspenConfig scfg = sspen_config(cfg);
    EdsrBackbone pre(pre_store, "sspen.backbone_spe", cfg.bands, scfg, rng, true);
    load_checkpoint(pretrain_dir(cfg, "spe"), pre_store);

    ParamStore post_store;
    Rng rng2(2);
    Sspen post(post_store, scfg, rng2);
    load_checkpoint(r.ckpt_dir, post_store);
    for (const auto& p : pre_store.all())
      CHECK(post_store.at(p->name).tensor.data() == p->tensor.data());

    CHECK(fs::exists(fs::path(cfg.out_dir) / "loss.csv"));
    std::string loss_csv = read_file(fs::path(cfg.out_dir) / "loss.csv");
    CHECK(loss_csv.rfind("stage,step,loss", 0) == 0);
  }
}

TEST_CASE("stage-2 training contracts") {
  TempRoot root("stage2");
  RunConfig cfg = smoke_config(root.path);
  ensure_dataset(cfg);
  pretrain_backbones(cfg);

  SUBCASE("missing stage-1 parent is a lineage error") {
    CHECK_THROWS_WITH_AS(train_stage2(cfg), doctest::Contains("lineage"), std::runtime_error);
  }
  SUBCASE("stage 2 freezes all of stage 1 and records lineage") {
    TrainResult s1 = train_stage1(cfg);
    TrainResult s2 = train_stage2(cfg);
    REQUIRE(s2.losses.size() == 12);

    ParamStore s1_store;
    Rng r1(1);
    Sspen sspen1(s1_store, sspen_config(cfg), r1);
    load_checkpoint(s1.ckpt_dir, s1_store);

    ParamStore s2_store;
    Rng r2(2);
    Sspen sspen2(s2_store, sspen_config(cfg), r2);
    Mfin mfin2(s2_store, mfin_config(cfg), r2);
    CheckpointInfo info = load_checkpoint(s2.ckpt_dir, s2_store);
    CHECK(info.parent_hash == checkpoint_hash(s1.ckpt_dir));

    for (const auto& p : s1_store.all()) {
      CHECK(s2_store.at(p->name).tensor.data() == p->tensor.data());
      CHECK_FALSE(s2_store.at(p->name).trainable);
    }
    // the trainable sets of the two stages never overlap backbone names
    for (const auto& p : s2_store.all())
      if (p->trainable) CHECK(p->name.find("backbone") == std::string::npos);
  }
  SUBCASE("single-stage ablation trains without a parent") {
    RunConfig ss = cfg;
    ss.single_stage = true;
    ss.out_dir = root.path + "/out_ss";
    pretrain_backbones(ss);
    TrainResult r = train_stage2(ss);
    ParamStore store;
    Rng rng(3);
    Sspen sspen(store, sspen_config(ss), rng);
    Mfin mfin(store, mfin_config(ss), rng);
    CheckpointInfo info = load_checkpoint(r.ckpt_dir, store);
    CHECK(info.parent_hash.empty());
    CHECK(store.at("sspen.lpe_spe.0.reduce.w").trainable);  // taps trained here
    CHECK_FALSE(store.at("sspen.backbone_spe.head.w").trainable);
  }
}

TEST_CASE("evaluation reports") {
  TempRoot root("eval");
  RunConfig cfg = smoke_config(root.path);
  ensure_dataset(cfg);

  SUBCASE("baseline rows match per-sample metric computation") {
    EvalReport rep = evaluate_baseline(cfg, "reduced");
    REQUIRE(rep.rows.size() == 4);  // 3 samples + summary
    CHECK(rep.rows.back().id == "summary");
    std::vector<SamplePair> samples = read_split(cfg.data_dir, "reduced");
    for (std::size_t i = 0; i < samples.size(); ++i) {
      Tensor pred = ops::upsample_bicubic(samples[i].lrms, kRatio);
      CHECK(rep.rows[i].id == samples[i].id);
      CHECK(rep.rows[i].values.at("psnr") ==
            doctest::Approx(metrics::psnr(pred, *samples[i].gt, 1.0)).epsilon(1e-12));
      CHECK(rep.rows[i].values.at("sam") ==
            doctest::Approx(metrics::sam_degrees(pred, *samples[i].gt)).epsilon(1e-12));
      CHECK(rep.rows[i].values.at("ergas") ==
            doctest::Approx(metrics::ergas(pred, *samples[i].gt, kRatio)).epsilon(1e-12));
      CHECK(rep.rows[i].values.at("q2n") ==
            doctest::Approx(metrics::q2n(pred, *samples[i].gt, 16)).epsilon(1e-12));
    }
  }
  SUBCASE("trained checkpoints evaluate on both splits and write reports") {
    pretrain_backbones(cfg);
    TrainResult s1 = train_stage1(cfg);
    EvalReport reduced = evaluate(cfg, s1.ckpt_dir, "reduced");
    CHECK(reduced.rows.size() == 4);
    CHECK(fs::exists(fs::path(cfg.out_dir) / "report.csv"));
    CHECK(fs::exists(fs::path(cfg.out_dir) / "report.json"));
    std::string csv = read_file(fs::path(cfg.out_dir) / "report.csv");
    CHECK(csv.rfind("id,psnr,sam,ergas,q2n", 0) == 0);

    EvalReport full = evaluate(cfg, s1.ckpt_dir, "full");
    CHECK(full.rows.size() == 3);  // 2 samples + summary
    std::string csv2 = read_file(fs::path(cfg.out_dir) / "report.csv");
    CHECK(csv2.rfind("id,d_lambda,d_s,qnr", 0) == 0);
    for (const auto& row : full.rows) {
      if (row.id == "summary") continue;  // means do not preserve the product
      CHECK(row.values.at("qnr") ==
            doctest::Approx((1.0 - row.values.at("d_lambda")) * (1.0 - row.values.at("d_s")))
                .epsilon(1e-9));
    }
  }
  SUBCASE("pretrain checkpoints cannot be evaluated") {
    pretrain_backbones(cfg);
    CHECK_THROWS_AS(evaluate(cfg, pretrain_dir(cfg, "spe"), "reduced"), std::runtime_error);
  }
}

TEST_CASE("parameter accounting from checkpoints") {
  TempRoot root("params");
  RunConfig cfg = smoke_config(root.path);
  ensure_dataset(cfg);
  pretrain_backbones(cfg);

  SUBCASE("pretrained backbone checkpoints are fully frozen") {
    ParamReport rep = count_params(pretrain_dir(cfg, "spe"));
    CHECK(rep.trainable == 0);
    CHECK(rep.fraction == 0.0);
    CHECK(rep.total > 0);
  }
  SUBCASE("stage-2 counts agree with the in-memory store") {
    train_stage1(cfg);
    TrainResult s2 = train_stage2(cfg);
    ParamStore store;
    Rng rng(4);
    Sspen sspen(store, sspen_config(cfg), rng);
    Mfin mfin(store, mfin_config(cfg), rng);
    load_checkpoint(s2.ckpt_dir, store);
    ParamReport rep = count_params(s2.ckpt_dir);
    CHECK(rep.total == store.count_total());
    CHECK(rep.trainable == store.count_trainable());
    CHECK(rep.fraction == doctest::Approx(static_cast<double>(store.count_trainable()) /
                                          static_cast<double>(store.count_total())));
  }
}

TEST_CASE("checkpoint load-save is byte-identical") {
  TempRoot root("ckptrt");
  RunConfig cfg = smoke_config(root.path);
  ensure_dataset(cfg);
  pretrain_backbones(cfg);
  TrainResult s1 = train_stage1(cfg);

  ParamStore store;
  Rng rng(5);
  Sspen sspen(store, sspen_config(cfg), rng);
  std::map<std::string, Tensor> extra;
  CheckpointInfo info = load_checkpoint(s1.ckpt_dir, store, &extra);
  std::string copy = root.path + "/ckpt_copy";
  save_checkpoint(copy, store, info, extra);
  CHECK(dirs_identical(s1.ckpt_dir, copy));
  CHECK(dirs_identical(copy, s1.ckpt_dir));
}

TEST_CASE("full scripted run is deterministic under a fixed seed") {
  TempRoot a("det_a"), b("det_b");
  for (const std::string& rootpath : {a.path, b.path}) {
    RunConfig cfg = smoke_config(rootpath);
    cfg.steps = 6;
    cfg.pretrain_steps = 8;
    ensure_dataset(cfg);
    pretrain_backbones(cfg);
    train_stage1(cfg);
    train_stage2(cfg);
    evaluate(cfg, stage_dir(cfg, 2), "reduced");
  }
  CHECK(dirs_identical(fs::path(a.path) / "out", fs::path(b.path) / "out"));
  CHECK(dirs_identical(fs::path(a.path) / "data", fs::path(b.path) / "data"));
}
