#include "pansharp/optimizer.hpp"

#include <cmath>
#include <stdexcept>

namespace ps {

Adam::Adam(ParamStore& store, AdamConfig cfg) : store_(store), cfg_(cfg) {}

void Adam::zero_grad() {
  for (const auto& p : store_.all())
    if (p->trainable) p->tensor.zero_grad();
}

double Adam::step() {
  ++t_;

  double sq = 0.0;
  for (const auto& p : store_.all()) {
    if (!p->trainable || !p->tensor.has_grad()) continue;
    for (double g : p->tensor.grad()) sq += g * g;
  }
  double norm = std::sqrt(sq);
  double rescale = 1.0;
  if (cfg_.clip_norm > 0.0 && norm > cfg_.clip_norm) rescale = cfg_.clip_norm / norm;

  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));

  for (const auto& p : store_.all()) {
    if (!p->trainable || !p->tensor.has_grad()) continue;
    auto& data = p->tensor.data();
    const auto& grad = p->tensor.grad();
    auto& m = m_[p->name];
    auto& v = v_[p->name];
    m.resize(data.size(), 0.0);
    v.resize(data.size(), 0.0);
    for (std::size_t i = 0; i < data.size(); ++i) {
      double g = grad[i] * rescale;
      m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g;
      v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g * g;
      double mhat = m[i] / bc1;
      double vhat = v[i] / bc2;
      data[i] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
      if (default_dtype() == Dtype::F32)
        data[i] = static_cast<double>(static_cast<float>(data[i]));
    }
  }
  return norm;
}

std::map<std::string, Tensor> Adam::state() const {
  std::map<std::string, Tensor> out;
  for (const auto& [name, m] : m_) {
    out["adam.m." + name] =
        Tensor::from_data({static_cast<std::int64_t>(m.size())}, m);
    const auto& v = v_.at(name);
    out["adam.v." + name] =
        Tensor::from_data({static_cast<std::int64_t>(v.size())}, v);
  }
  return out;
}

void Adam::load_state(const std::map<std::string, Tensor>& state, std::int64_t step_count) {
  t_ = step_count;
  m_.clear();
  v_.clear();
  for (const auto& [key, t] : state) {
    if (key.rfind("adam.m.", 0) == 0)
      m_[key.substr(7)] = t.data();
    else if (key.rfind("adam.v.", 0) == 0)
      v_[key.substr(7)] = t.data();
    else
      throw std::invalid_argument("unknown optimizer state key: " + key);
  }
}

}  // namespace ps
