#pragma once

#include <map>
#include <string>
#include <vector>

#include "pansharp/nn.hpp"
#include "pansharp/tensor.hpp"

namespace ps {

struct AdamConfig {
  double lr = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double clip_norm = 1.0;  // global-norm clip over all trainable grads; <=0 disables
};

// Adam over the trainable subset of a ParamStore. Iteration order is the
// store's creation order, so updates are deterministic.
class Adam {
 public:
  Adam(ParamStore& store, AdamConfig cfg);

  void zero_grad();
  double step();  // applies one update; returns the pre-clip global grad norm

  // Moment buffers keyed by parameter name, for checkpointing.
  std::map<std::string, Tensor> state() const;
  void load_state(const std::map<std::string, Tensor>& state, std::int64_t step_count);
  std::int64_t step_count() const { return t_; }

 private:
  ParamStore& store_;
  AdamConfig cfg_;
  std::int64_t t_ = 0;
  std::map<std::string, std::vector<double>> m_, v_;
};

}  // namespace ps
