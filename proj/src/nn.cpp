#include "pansharp/nn.hpp"

#include <cmath>
#include <stdexcept>

namespace ps {

std::uint64_t Rng::next_u64() {
  // splitmix64
  std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

double Rng::uniform() { return static_cast<double>(next_u64() >> 11) * (1.0 / 9007199254740992.0); }

double Rng::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

double Rng::normal() {
  if (have_spare_) {
    have_spare_ = false;
    return spare_;
  }
  double u1 = uniform(), u2 = uniform();
  while (u1 <= 1e-300) u1 = uniform();
  double r = std::sqrt(-2.0 * std::log(u1));
  double a = 2.0 * M_PI * u2;
  spare_ = r * std::sin(a);
  have_spare_ = true;
  return r * std::cos(a);
}

std::int64_t Rng::uniform_int(std::int64_t n) {
  return static_cast<std::int64_t>(next_u64() % static_cast<std::uint64_t>(n));
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index) {
  Rng r(seed ^ (0x9e3779b97f4a7c15ull * (index + 1)));
  return r.next_u64();
}

Tensor ParamStore::create(const std::string& name, std::vector<std::int64_t> shape,
                          bool trainable) {
  if (index_.count(name)) throw std::invalid_argument("duplicate parameter name: " + name);
  auto p = std::make_shared<Parameter>();
  p->name = name;
  p->tensor = Tensor(std::move(shape));
  p->tensor.set_requires_grad(trainable);
  p->trainable = trainable;
  index_[name] = params_.size();
  params_.push_back(p);
  return p->tensor;
}

Tensor ParamStore::create_init(const std::string& name, std::vector<std::int64_t> shape,
                               bool trainable, Rng& rng, double bound) {
  Tensor t = create(name, std::move(shape), trainable);
  const bool f32 = default_dtype() == Dtype::F32;
  for (double& v : t.data()) {
    v = rng.uniform(-bound, bound);
    if (f32) v = static_cast<double>(static_cast<float>(v));
  }
  return t;
}

Parameter& ParamStore::at(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("no such parameter: " + name);
  return *params_[it->second];
}

const Parameter& ParamStore::at(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("no such parameter: " + name);
  return *params_[it->second];
}

void ParamStore::set_trainable(const std::string& prefix, bool trainable) {
  for (auto& p : params_) {
    if (p->name.rfind(prefix, 0) == 0) {
      p->trainable = trainable;
      p->tensor.set_requires_grad(trainable);
    }
  }
}

void ParamStore::freeze_all() {
  for (auto& p : params_) {
    p->trainable = false;
    p->tensor.set_requires_grad(false);
  }
}

std::int64_t ParamStore::count_total() const {
  std::int64_t n = 0;
  for (const auto& p : params_) n += p->tensor.numel();
  return n;
}

std::int64_t ParamStore::count_trainable() const {
  std::int64_t n = 0;
  for (const auto& p : params_)
    if (p->trainable) n += p->tensor.numel();
  return n;
}

double kaiming_bound(std::int64_t fan_in) { return std::sqrt(6.0 / static_cast<double>(fan_in)); }

double siren_first_bound(std::int64_t fan_in) { return 1.0 / static_cast<double>(fan_in); }

double siren_hidden_bound(std::int64_t fan_in, double w0) {
  return std::sqrt(6.0 / static_cast<double>(fan_in)) / w0;
}

Linear::Linear(ParamStore& ps, const std::string& name, std::int64_t in, std::int64_t out,
               Rng& rng, bool trainable, bool zero_init)
    : in_(in), out_(out) {
  double bound = zero_init ? 0.0 : kaiming_bound(in);
  w = ps.create_init(name + ".w", {in, out}, trainable, rng, bound);
  b = ps.create(name + ".b", {out}, trainable);
}

Tensor Linear::operator()(const Tensor& x) const {
  return ops::add_bias(ops::matmul(x, w), b);
}

Conv2d::Conv2d(ParamStore& ps, const std::string& name, std::int64_t in_ch, std::int64_t out_ch,
               int ksize, Rng& rng, bool trainable, bool zero_init) {
  double bound = zero_init ? 0.0 : kaiming_bound(in_ch * ksize * ksize);
  w = ps.create_init(name + ".w", {ksize, ksize, in_ch, out_ch}, trainable, rng, bound);
  b = ps.create(name + ".b", {out_ch}, trainable);
}

Tensor Conv2d::operator()(const Tensor& x) const {
  return ops::add_bias(ops::conv2d(x, w), b);
}

DepthwiseConv2d::DepthwiseConv2d(ParamStore& ps, const std::string& name, std::int64_t ch,
                                 int ksize, Rng& rng, bool trainable) {
  double bound = kaiming_bound(ksize * ksize);
  w = ps.create_init(name + ".w", {ksize, ksize, ch}, trainable, rng, bound);
  b = ps.create(name + ".b", {ch}, trainable);
}

Tensor DepthwiseConv2d::operator()(const Tensor& x) const {
  return ops::add_bias(ops::depthwise_conv2d(x, w), b);
}

LayerNormLayer::LayerNormLayer(ParamStore& ps, const std::string& name, std::int64_t dim,
                               bool trainable) {
  gain = ps.create(name + ".gain", {dim}, trainable);
  for (double& v : gain.data()) v = 1.0;
  bias = ps.create(name + ".bias", {dim}, trainable);
}

Tensor LayerNormLayer::operator()(const Tensor& x) const {
  return ops::layer_norm(x, gain, bias, eps);
}

MultiHeadAttention::MultiHeadAttention(ParamStore& ps, const std::string& name, std::int64_t dim,
                                       int heads_in, Rng& rng, bool trainable, bool zero_out_proj)
    : heads(heads_in), dim_(dim) {
  if (dim % heads != 0) throw std::invalid_argument("attention: dim must be divisible by heads");
  proj_q = Linear(ps, name + ".q", dim, dim, rng, trainable);
  proj_k = Linear(ps, name + ".k", dim, dim, rng, trainable);
  proj_v = Linear(ps, name + ".v", dim, dim, rng, trainable);
  proj_o = Linear(ps, name + ".o", dim, dim, rng, trainable, zero_out_proj);
}

Tensor scaled_dot_attention(const Tensor& q, const Tensor& k, const Tensor& v, int heads) {
  std::int64_t dim = q.dim(1);
  if (dim % heads != 0) throw std::invalid_argument("attention: dim must be divisible by heads");
  std::int64_t hd = dim / heads;
  double sc = 1.0 / std::sqrt(static_cast<double>(hd));
  std::vector<Tensor> outs;
  for (int h = 0; h < heads; ++h) {
    Tensor qh = ops::slice_lastdim(q, h * hd, hd);
    Tensor kh = ops::slice_lastdim(k, h * hd, hd);
    Tensor vh = ops::slice_lastdim(v, h * hd, hd);
    Tensor weights = ops::softmax_lastdim(ops::scale(ops::matmul_nt(qh, kh), sc));
    outs.push_back(ops::matmul(weights, vh));
  }
  return ops::concat_lastdim(outs);
}

Tensor MultiHeadAttention::operator()(const Tensor& q_tokens, const Tensor& kv_tokens) const {
  Tensor q = proj_q(q_tokens);
  Tensor k = proj_k(kv_tokens);
  Tensor v = proj_v(kv_tokens);
  return proj_o(scaled_dot_attention(q, k, v, heads));
}

}  // namespace ps
