#include "pansharp/checkpoint.hpp"

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "json.hpp"
#include "pansharp/pstf.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace ps {

namespace {

std::uint64_t fnv1a_file(const fs::path& path, std::uint64_t h) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  char buf[4096];
  while (in.read(buf, sizeof buf) || in.gcount() > 0) {
    for (std::streamsize i = 0; i < in.gcount(); ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 1099511628211ull;
    }
  }
  return h;
}

std::string hex64(std::uint64_t h) {
  std::ostringstream os;
  os << std::hex << h;
  return os.str();
}

}  // namespace

void save_checkpoint(const std::string& dir, const ParamStore& store, const CheckpointInfo& info,
                     const std::map<std::string, Tensor>& extra) {
  fs::create_directories(dir);
  json manifest;
  manifest["format"] = "pstf-dir";
  manifest["version"] = 1;
  manifest["stage"] = info.stage;
  manifest["config_hash"] = info.config_hash;
  manifest["parent_hash"] = info.parent_hash;
  manifest["step"] = info.step;

  std::uint64_t h = 1469598103934665603ull;
  json params = json::array();
  int idx = 0;
  for (const auto& p : store.all()) {
    std::ostringstream file;
    file << "p" << idx++ << ".pstf";
    save_pstf((fs::path(dir) / file.str()).string(), p->tensor);
    h = fnv1a_file(fs::path(dir) / file.str(), h);
    params.push_back({{"name", p->name},
                      {"shape", p->tensor.shape()},
                      {"trainable", p->trainable},
                      {"file", file.str()}});
  }
  manifest["params"] = params;

  json extras = json::array();
  idx = 0;
  for (const auto& [name, t] : extra) {
    std::ostringstream file;
    file << "x" << idx++ << ".pstf";
    save_pstf((fs::path(dir) / file.str()).string(), t);
    extras.push_back({{"name", name}, {"file", file.str()}});
  }
  manifest["extra"] = extras;
  manifest["content_hash"] = hex64(h);

  // manifest last, so a finished directory always has one
  std::ofstream out(fs::path(dir) / "manifest.json");
  out << manifest.dump(2) << "\n";
}

CheckpointInfo load_checkpoint(const std::string& dir, ParamStore& store,
                               std::map<std::string, Tensor>* extra) {
  std::ifstream in(fs::path(dir) / "manifest.json");
  if (!in) throw std::runtime_error("checkpoint manifest missing in " + dir);
  json manifest = json::parse(in);

  CheckpointInfo info;
  info.stage = manifest.at("stage").get<std::string>();
  info.config_hash = manifest.value("config_hash", "");
  info.parent_hash = manifest.value("parent_hash", "");
  info.step = manifest.value("step", std::int64_t{0});

  for (const auto& entry : manifest.at("params")) {
    std::string name = entry.at("name").get<std::string>();
    if (!store.contains(name))
      throw std::runtime_error("checkpoint parameter not in model: " + name);
    Parameter& p = store.at(name);
    Tensor t = load_pstf((fs::path(dir) / entry.at("file").get<std::string>()).string());
    if (t.shape() != p.tensor.shape())
      throw std::runtime_error("checkpoint shape mismatch for " + name);
    p.tensor.data() = t.data();
    p.trainable = entry.at("trainable").get<bool>();
  }

  if (extra) {
    extra->clear();
    for (const auto& entry : manifest.value("extra", json::array())) {
      (*extra)[entry.at("name").get<std::string>()] =
          load_pstf((fs::path(dir) / entry.at("file").get<std::string>()).string());
    }
  }
  return info;
}

std::string checkpoint_hash(const std::string& dir) {
  std::ifstream in(fs::path(dir) / "manifest.json");
  if (!in) throw std::runtime_error("checkpoint manifest missing in " + dir);
  json manifest = json::parse(in);
  return manifest.at("content_hash").get<std::string>();
}

}  // namespace ps
