#include "pansharp/config.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

namespace ps {

namespace {

std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

bool parse_bool(const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw std::invalid_argument("config: not a boolean: " + v);
}

}  // namespace

void apply_config_line(RunConfig& cfg, const std::string& key, const std::string& value) {
  auto as_i = [&] { return std::stoi(value); };
  auto as_i64 = [&] { return static_cast<std::int64_t>(std::stoll(value)); };
  auto as_d = [&] { return std::stod(value); };

  if (key == "data_dir") cfg.data_dir = value;
  else if (key == "h") cfg.h = as_i();
  else if (key == "bands") cfg.bands = as_i64();
  else if (key == "n_train") cfg.n_train = as_i();
  else if (key == "n_reduced") cfg.n_reduced = as_i();
  else if (key == "n_full") cfg.n_full = as_i();
  else if (key == "d_c") cfg.d_c = as_i64();
  else if (key == "n_blocks") cfg.n_blocks = as_i();
  else if (key == "d_prime") cfg.d_prime = as_i64();
  else if (key == "m") cfg.m = as_i64();
  else if (key == "layers") cfg.layers = as_i();
  else if (key == "dim") cfg.dim = as_i64();
  else if (key == "heads") cfg.heads = as_i();
  else if (key == "k") cfg.k = as_i64();
  else if (key == "interval") cfg.interval = as_i();
  else if (key == "inr_width") cfg.inr_width = as_i64();
  else if (key == "steps") cfg.steps = as_i();
  else if (key == "pretrain_steps") cfg.pretrain_steps = as_i();
  else if (key == "batch") cfg.batch = as_i();
  else if (key == "lr1") cfg.lr1 = as_d();
  else if (key == "lr2") cfg.lr2 = as_d();
  else if (key == "seed") cfg.seed = static_cast<std::uint64_t>(std::stoull(value));
  else if (key == "no_ctf") cfg.no_ctf = parse_bool(value);
  else if (key == "no_cti") cfg.no_cti = parse_bool(value);
  else if (key == "single_stage") cfg.single_stage = parse_bool(value);
  else if (key == "replace_inr") cfg.replace_inr = parse_bool(value);
  else if (key == "no_tail2_residual") cfg.no_tail2_residual = parse_bool(value);
  else if (key == "out_dir") cfg.out_dir = value;
  else throw std::invalid_argument("config: unknown key: " + key);
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("config: cannot open " + path);
  RunConfig cfg;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::string s = trim(line);
    if (s.empty() || s[0] == '#' || s[0] == ';') continue;
    if (s.front() == '[') {
      if (s.back() != ']')
        throw std::invalid_argument("config: malformed section at line " + std::to_string(lineno));
      continue;  // sections only group keys; names are unique across sections
    }
    std::size_t eq = s.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("config: expected key = value at line " + std::to_string(lineno));
    apply_config_line(cfg, trim(s.substr(0, eq)), trim(s.substr(eq + 1)));
  }
  validate(cfg);
  return cfg;
}

void validate(const RunConfig& cfg) {
  if (cfg.h <= 0 || cfg.bands <= 0 || cfg.d_c <= 0 || cfg.n_blocks <= 0 || cfg.d_prime <= 0 ||
      cfg.m <= 0 || cfg.layers <= 0 || cfg.dim <= 0 || cfg.heads <= 0 || cfg.k <= 0 ||
      cfg.interval <= 0 || cfg.inr_width <= 0 || cfg.batch <= 0)
    throw std::invalid_argument("config: all dimensions must be positive");
  if (cfg.layers % cfg.interval != 0)
    throw std::invalid_argument("config: interval must divide the layer count");
  if (cfg.k > cfg.dim) throw std::invalid_argument("config: k must not exceed the model dim");
  if (cfg.k % cfg.heads != 0 || cfg.dim % cfg.heads != 0)
    throw std::invalid_argument("config: heads must divide both k and dim");
  if (cfg.k < 4) throw std::invalid_argument("config: k must be at least 4");
  if ((4 * cfg.h) % 16 != 0)
    throw std::invalid_argument("config: 4*h must be a multiple of 16");
}

std::string config_hash(const RunConfig& cfg) {
  // Hashes hyperparameters only; paths are deployment details and must not
  // change checkpoint lineage.
  std::ostringstream os;
  os << cfg.h << ' ' << cfg.bands << ' ' << cfg.n_train << ' ' << cfg.n_reduced << ' '
     << cfg.n_full << '\n'
     << cfg.d_c << ' ' << cfg.n_blocks << ' ' << cfg.d_prime << ' ' << cfg.m << ' ' << cfg.layers
     << ' ' << cfg.dim << ' ' << cfg.heads << ' ' << cfg.k << ' ' << cfg.interval << ' '
     << cfg.inr_width << '\n'
     << cfg.steps << ' ' << cfg.pretrain_steps << ' ' << cfg.batch << ' ' << cfg.lr1 << ' '
     << cfg.lr2 << ' ' << cfg.seed << '\n'
     << cfg.no_ctf << cfg.no_cti << cfg.single_stage << cfg.replace_inr << cfg.no_tail2_residual;
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : os.str()) {
    h ^= c;
    h *= 1099511628211ull;
  }
  std::ostringstream hex;
  hex << std::hex << h;
  return hex.str();
}

SspenConfig sspen_config(const RunConfig& cfg) {
  SspenConfig s;
  s.bands = cfg.bands;
  s.channels = cfg.d_c;
  s.n_blocks = cfg.n_blocks;
  s.d_prime = cfg.d_prime;
  s.m = cfg.m;
  s.inr_width = cfg.inr_width;
  return s;
}

MfinConfig mfin_config(const RunConfig& cfg) {
  MfinConfig m;
  m.bands = cfg.bands;
  m.m = cfg.m;
  m.lr_h = cfg.h;
  m.lr_w = cfg.h;
  m.layers = cfg.layers;
  m.dim = cfg.dim;
  m.heads = cfg.heads;
  m.k = cfg.k;
  m.interval = cfg.interval;
  m.inr_width = cfg.inr_width;
  m.tail2_residual = !cfg.no_tail2_residual;
  m.use_ctf = !cfg.no_ctf;
  m.use_cti = !cfg.no_cti;
  m.replace_inr = cfg.replace_inr;
  return m;
}

}  // namespace ps
