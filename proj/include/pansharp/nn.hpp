#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "pansharp/ops.hpp"
#include "pansharp/tensor.hpp"

namespace ps {

// Deterministic RNG with explicit bit-to-double mapping, so streams are
// reproducible independent of the standard library's distribution internals.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed ? seed : 0x5851f42d4c957f2dull) {}

  std::uint64_t next_u64();
  double uniform();                       // [0,1)
  double uniform(double lo, double hi);
  double normal();                        // standard normal, Box-Muller
  std::int64_t uniform_int(std::int64_t n);  // [0,n)

 private:
  std::uint64_t state_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

// Mixes a base seed with an index; used to give every sample its own stream.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index);

struct Parameter {
  std::string name;
  Tensor tensor;
  bool trainable = true;
};

// Ordered registry of named parameters. Order is creation order and is the
// iteration order everywhere (optimizer, checkpoints), which keeps runs
// deterministic.
class ParamStore {
 public:
  Tensor create(const std::string& name, std::vector<std::int64_t> shape, bool trainable);
  Tensor create_init(const std::string& name, std::vector<std::int64_t> shape, bool trainable,
                     Rng& rng, double bound);  // uniform(-bound, bound)

  Parameter& at(const std::string& name);
  const Parameter& at(const std::string& name) const;
  bool contains(const std::string& name) const { return index_.count(name) > 0; }

  const std::vector<std::shared_ptr<Parameter>>& all() const { return params_; }

  void set_trainable(const std::string& prefix, bool trainable);
  void freeze_all();

  std::int64_t count_total() const;
  std::int64_t count_trainable() const;

 private:
  std::vector<std::shared_ptr<Parameter>> params_;
  std::map<std::string, std::size_t> index_;
};

// fan-in uniform bound, Kaiming style
double kaiming_bound(std::int64_t fan_in);

class Linear {
 public:
  Linear() = default;
  Linear(ParamStore& ps, const std::string& name, std::int64_t in, std::int64_t out, Rng& rng,
         bool trainable, bool zero_init = false);
  Tensor operator()(const Tensor& x) const;  // x[rows,in] -> [rows,out]
  Tensor w, b;

 private:
  std::int64_t in_ = 0, out_ = 0;
};

class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(ParamStore& ps, const std::string& name, std::int64_t in_ch, std::int64_t out_ch,
         int ksize, Rng& rng, bool trainable, bool zero_init = false);
  Tensor operator()(const Tensor& x) const;
  Tensor w, b;
};

class DepthwiseConv2d {
 public:
  DepthwiseConv2d() = default;
  DepthwiseConv2d(ParamStore& ps, const std::string& name, std::int64_t ch, int ksize, Rng& rng,
                  bool trainable);
  Tensor operator()(const Tensor& x) const;
  Tensor w, b;
};

class LayerNormLayer {
 public:
  LayerNormLayer() = default;
  LayerNormLayer(ParamStore& ps, const std::string& name, std::int64_t dim, bool trainable);
  Tensor operator()(const Tensor& x) const;
  Tensor gain, bias;
  double eps = 1e-5;
};

// Scaled-dot-product multi-head attention with learned Q/K/V/output
// projections. Query and key/value token sets may differ.
class MultiHeadAttention {
 public:
  MultiHeadAttention() = default;
  MultiHeadAttention(ParamStore& ps, const std::string& name, std::int64_t dim, int heads,
                     Rng& rng, bool trainable, bool zero_out_proj = false);
  Tensor operator()(const Tensor& q_tokens, const Tensor& kv_tokens) const;

  Linear proj_q, proj_k, proj_v, proj_o;
  int heads = 1;

 private:
  std::int64_t dim_ = 0;
};

// Raw attention used by tests: no learned projections.
Tensor scaled_dot_attention(const Tensor& q, const Tensor& k, const Tensor& v, int heads);

// SIREN-style sine layer initialization bounds.
double siren_first_bound(std::int64_t fan_in);
double siren_hidden_bound(std::int64_t fan_in, double w0);

}  // namespace ps
