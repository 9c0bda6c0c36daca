#include "pansharp/waldsim.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include "json.hpp"
#include "pansharp/nn.hpp"
#include "pansharp/ops.hpp"
#include "pansharp/pstf.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace ps {

namespace {

void validate_pan_weights(const std::vector<double>& w, std::int64_t bands) {
  if (static_cast<std::int64_t>(w.size()) != bands)
    throw std::invalid_argument("pan_weights length must equal band count");
  double s = 0.0;
  for (double v : w) {
    if (v < 0.0) throw std::invalid_argument("pan_weights must be nonnegative");
    s += v;
  }
  if (std::abs(s - 1.0) > 1e-6) throw std::invalid_argument("pan_weights must sum to 1");
}

}  // namespace

std::vector<double> uniform_pan_weights(std::int64_t bands) {
  return std::vector<double>(static_cast<std::size_t>(bands), 1.0 / static_cast<double>(bands));
}

Tensor synth_scene(const SceneSpec& spec) {
  std::int64_t n = spec.size;
  if (n % (4 * kRatio) != 0) throw std::invalid_argument("scene size must be a multiple of 16");
  std::int64_t s = spec.bands;
  Rng rng(spec.seed);
  Tensor scene = Tensor::full({n, n, s}, 0.5);

  // linear gradients, one direction per band
  for (std::int64_t b = 0; b < s; ++b) {
    double gx = rng.uniform(-1.0, 1.0);
    double gy = rng.uniform(-1.0, 1.0);
    if (spec.gradient_amp == 0.0) continue;
    for (std::int64_t y = 0; y < n; ++y)
      for (std::int64_t x = 0; x < n; ++x) {
        double u = static_cast<double>(x) / static_cast<double>(n - 1) - 0.5;
        double v = static_cast<double>(y) / static_cast<double>(n - 1) - 0.5;
        scene.data()[static_cast<std::size_t>((y * n + x) * s + b)] +=
            spec.gradient_amp * (gx * u + gy * v);
      }
  }

  // band-correlated Gaussian blobs: one spatial footprint, one spectral
  // signature per blob
  for (int blob = 0; blob < spec.blob_count; ++blob) {
    double cx = rng.uniform(0.0, static_cast<double>(n - 1));
    double cy = rng.uniform(0.0, static_cast<double>(n - 1));
    double radius = rng.uniform(static_cast<double>(n) / 16.0, static_cast<double>(n) / 4.0);
    double amp = rng.uniform(-0.3, 0.3);
    std::vector<double> sig(static_cast<std::size_t>(s));
    for (double& v : sig) v = rng.uniform(0.4, 1.0);
    for (std::int64_t y = 0; y < n; ++y)
      for (std::int64_t x = 0; x < n; ++x) {
        double d2 = (static_cast<double>(x) - cx) * (static_cast<double>(x) - cx) +
                    (static_cast<double>(y) - cy) * (static_cast<double>(y) - cy);
        double g = amp * std::exp(-d2 / (2.0 * radius * radius));
        if (std::abs(g) < 1e-8) continue;
        for (std::int64_t b = 0; b < s; ++b)
          scene.data()[static_cast<std::size_t>((y * n + x) * s + b)] +=
              g * sig[static_cast<std::size_t>(b)];
      }
  }

  // low-amplitude per-band texture
  if (spec.noise_sigma > 0.0) {
    for (double& v : scene.data()) v += spec.noise_sigma * rng.normal();
  }

  const bool f32 = default_dtype() == Dtype::F32;
  for (double& v : scene.data()) {
    v = std::clamp(v, 0.0, 1.0);
    if (f32) v = static_cast<double>(static_cast<float>(v));
  }
  return scene;
}

std::vector<double> gaussian_kernel_1d(double sigma) {
  if (sigma <= 0.0) throw std::invalid_argument("blur sigma must be positive");
  int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> k(static_cast<std::size_t>(2 * radius + 1));
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    double v = std::exp(-static_cast<double>(i) * i / (2.0 * sigma * sigma));
    k[static_cast<std::size_t>(i + radius)] = v;
    sum += v;
  }
  for (double& v : k) v /= sum;
  return k;
}

Tensor degrade(const Tensor& gt, double sigma, int ratio) {
  if (gt.rank() != 3) throw std::invalid_argument("degrade: gt[h,w,c] required");
  std::int64_t H = gt.dim(0), W = gt.dim(1), C = gt.dim(2);
  if (H % ratio != 0 || W % ratio != 0)
    throw std::invalid_argument("degrade: extents not divisible by ratio");
  std::vector<double> kernel = gaussian_kernel_1d(sigma);
  int radius = static_cast<int>(kernel.size() / 2);

  // separable blur, rows then columns, reflect-101 borders
  std::vector<double> tmp(gt.data().size(), 0.0);
  for (std::int64_t y = 0; y < H; ++y)
    for (std::int64_t x = 0; x < W; ++x)
      for (int t = -radius; t <= radius; ++t) {
        std::int64_t sx = ops::reflect_index(static_cast<int>(x) + t, static_cast<int>(W));
        double kv = kernel[static_cast<std::size_t>(t + radius)];
        for (std::int64_t c = 0; c < C; ++c)
          tmp[static_cast<std::size_t>((y * W + x) * C + c)] +=
              kv * gt.data()[static_cast<std::size_t>((y * W + sx) * C + c)];
      }
  std::vector<double> blurred(gt.data().size(), 0.0);
  for (std::int64_t y = 0; y < H; ++y)
    for (std::int64_t x = 0; x < W; ++x)
      for (int t = -radius; t <= radius; ++t) {
        std::int64_t sy = ops::reflect_index(static_cast<int>(y) + t, static_cast<int>(H));
        double kv = kernel[static_cast<std::size_t>(t + radius)];
        for (std::int64_t c = 0; c < C; ++c)
          blurred[static_cast<std::size_t>((y * W + x) * C + c)] +=
              kv * tmp[static_cast<std::size_t>((sy * W + x) * C + c)];
      }

  std::int64_t oh = H / ratio, ow = W / ratio;
  std::int64_t off = ratio / 2;
  Tensor out({oh, ow, C});
  const bool f32 = default_dtype() == Dtype::F32;
  for (std::int64_t y = 0; y < oh; ++y)
    for (std::int64_t x = 0; x < ow; ++x)
      for (std::int64_t c = 0; c < C; ++c) {
        double v = blurred[static_cast<std::size_t>(((y * ratio + off) * W + x * ratio + off) * C + c)];
        if (f32) v = static_cast<double>(static_cast<float>(v));
        out.data()[static_cast<std::size_t>((y * ow + x) * C + c)] = v;
      }
  return out;
}

Tensor synth_pan(const Tensor& gt, const std::vector<double>& weights) {
  if (gt.rank() != 3) throw std::invalid_argument("synth_pan: gt[h,w,c] required");
  std::int64_t H = gt.dim(0), W = gt.dim(1), C = gt.dim(2);
  validate_pan_weights(weights, C);
  Tensor pan({H, W, 1});
  const bool f32 = default_dtype() == Dtype::F32;
  for (std::int64_t i = 0; i < H * W; ++i) {
    double acc = 0.0;
    for (std::int64_t c = 0; c < C; ++c)
      acc += weights[static_cast<std::size_t>(c)] *
             gt.data()[static_cast<std::size_t>(i * C + c)];
    if (f32) acc = static_cast<double>(static_cast<float>(acc));
    pan.data()[static_cast<std::size_t>(i)] = acc;
  }
  return pan;
}

namespace {

std::string sample_file(const std::string& id, const char* part) {
  return id + "_" + part + ".pstf";
}

void write_sample(const std::string& dir, const SceneSpec& spec, std::uint64_t sample_index,
                  const std::string& id, bool with_gt) {
  SceneSpec local = spec;
  local.seed = derive_seed(spec.seed, sample_index);
  Tensor gt = synth_scene(local);
  std::vector<double> weights =
      spec.pan_weights.empty() ? uniform_pan_weights(spec.bands) : spec.pan_weights;
  Tensor pan = synth_pan(gt, weights);
  Tensor lrms = degrade(gt, kDefaultSigma, kRatio);
  save_pstf(dir + "/" + sample_file(id, "pan"), pan);
  save_pstf(dir + "/" + sample_file(id, "lrms"), lrms);
  if (with_gt) save_pstf(dir + "/" + sample_file(id, "gt"), gt);
}

}  // namespace

DatasetManifest build_dataset(const SceneSpec& spec, int n_train, int n_test_reduced,
                              int n_test_full, const std::string& out_dir) {
  if (!spec.pan_weights.empty()) validate_pan_weights(spec.pan_weights, spec.bands);
  fs::create_directories(out_dir);
  DatasetManifest m;
  m.bands = spec.bands;
  m.seed = spec.seed;
  std::uint64_t idx = 0;
  char buf[32];
  for (int i = 0; i < n_train; ++i) {
    std::snprintf(buf, sizeof(buf), "train_%04d", i);
    m.train_ids.emplace_back(buf);
    write_sample(out_dir, spec, idx++, buf, true);
  }
  for (int i = 0; i < n_test_reduced; ++i) {
    std::snprintf(buf, sizeof(buf), "red_%04d", i);
    m.test_reduced_ids.emplace_back(buf);
    write_sample(out_dir, spec, idx++, buf, true);
  }
  for (int i = 0; i < n_test_full; ++i) {
    std::snprintf(buf, sizeof(buf), "full_%04d", i);
    m.test_full_ids.emplace_back(buf);
    write_sample(out_dir, spec, idx++, buf, false);
  }

  // manifest written last: its presence marks a complete dataset
  json j;
  j["ratio"] = m.ratio;
  j["bands"] = m.bands;
  j["seed"] = m.seed;
  j["version"] = m.version;
  j["splits"]["train"] = m.train_ids;
  j["splits"]["test_reduced"] = m.test_reduced_ids;
  j["splits"]["test_full"] = m.test_full_ids;
  json files = json::object();
  auto add_files = [&](const std::vector<std::string>& ids, bool with_gt) {
    for (const std::string& id : ids) {
      json e;
      e["pan"] = sample_file(id, "pan");
      e["lrms"] = sample_file(id, "lrms");
      if (with_gt) e["gt"] = sample_file(id, "gt");
      files[id] = e;
    }
  };
  add_files(m.train_ids, true);
  add_files(m.test_reduced_ids, true);
  add_files(m.test_full_ids, false);
  j["files"] = files;
  std::ofstream f(out_dir + "/manifest.json", std::ios::trunc);
  if (!f) throw std::runtime_error("cannot write manifest.json in " + out_dir);
  f << j.dump(2) << "\n";
  return m;
}

DatasetManifest read_manifest(const std::string& dir) {
  std::ifstream f(dir + "/manifest.json");
  if (!f) throw std::runtime_error("missing manifest.json in " + dir);
  json j = json::parse(f);
  DatasetManifest m;
  m.ratio = j.at("ratio").get<int>();
  m.bands = j.at("bands").get<std::int64_t>();
  m.seed = j.at("seed").get<std::uint64_t>();
  m.version = j.at("version").get<int>();
  m.train_ids = j.at("splits").at("train").get<std::vector<std::string>>();
  m.test_reduced_ids = j.at("splits").at("test_reduced").get<std::vector<std::string>>();
  m.test_full_ids = j.at("splits").at("test_full").get<std::vector<std::string>>();
  for (const auto& [id, e] : j.at("files").items()) {
    for (const auto& [part, file] : e.items()) {
      std::string path = dir + "/" + file.get<std::string>();
      if (!fs::exists(path)) throw std::runtime_error("manifest references missing file: " + path);
    }
  }
  return m;
}

SamplePair read_sample(const std::string& dir, const std::string& id, bool with_gt) {
  SamplePair p;
  p.id = id;
  p.pan = load_pstf(dir + "/" + sample_file(id, "pan"));
  p.lrms = load_pstf(dir + "/" + sample_file(id, "lrms"));
  if (with_gt) p.gt = load_pstf(dir + "/" + sample_file(id, "gt"));
  if (p.pan.dim(0) != kRatio * p.lrms.dim(0) || p.pan.dim(1) != kRatio * p.lrms.dim(1))
    throw std::runtime_error("sample " + id + " violates the 4x ratio invariant");
  return p;
}

std::vector<SamplePair> read_split(const std::string& dir, const std::string& split) {
  DatasetManifest m = read_manifest(dir);
  const std::vector<std::string>* ids = nullptr;
  bool with_gt = true;
  if (split == "train") {
    ids = &m.train_ids;
  } else if (split == "reduced") {
    ids = &m.test_reduced_ids;
  } else if (split == "full") {
    ids = &m.test_full_ids;
    with_gt = false;
  } else {
    throw std::invalid_argument("unknown split: " + split);
  }
  std::vector<SamplePair> out;
  out.reserve(ids->size());
  for (const std::string& id : *ids) out.push_back(read_sample(dir, id, with_gt));
  return out;
}

}  // namespace ps
