#include "pansharp/tensor.hpp"

#include <cmath>

#include "pansharp/ops.hpp"

namespace ps {

namespace {
Dtype g_dtype = Dtype::F32;
Tape* g_active_tape = nullptr;
}  // namespace

Dtype default_dtype() { return g_dtype; }
void set_default_dtype(Dtype d) { g_dtype = d; }

std::int64_t shape_numel(const std::vector<std::int64_t>& shape) {
  std::int64_t n = 1;
  for (std::int64_t e : shape) {
    if (e <= 0) throw std::invalid_argument("tensor extents must be positive");
    n *= e;
  }
  return n;
}

Tensor::Tensor(std::vector<std::int64_t> shape, bool requires_grad) {
  impl_ = std::make_shared<TensorImpl>();
  std::int64_t n = shape_numel(shape);
  impl_->shape = std::move(shape);
  impl_->data.assign(static_cast<std::size_t>(n), 0.0);
  impl_->requires_grad = requires_grad;
}

Tensor Tensor::from_data(std::vector<std::int64_t> shape, std::vector<double> values,
                         bool requires_grad) {
  std::int64_t n = shape_numel(shape);
  if (n != static_cast<std::int64_t>(values.size())) {
    throw std::invalid_argument("data length does not match shape");
  }
  Tensor t;
  t.impl_ = std::make_shared<TensorImpl>();
  t.impl_->shape = std::move(shape);
  t.impl_->data = std::move(values);
  t.impl_->requires_grad = requires_grad;
  return t;
}

Tensor Tensor::zeros(std::vector<std::int64_t> shape) { return Tensor(std::move(shape)); }

Tensor Tensor::full(std::vector<std::int64_t> shape, double value) {
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = value;
  return t;
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return from_data({1}, {value}, requires_grad);
}

double Tensor::value() const {
  if (numel() != 1) throw std::invalid_argument("value() requires a scalar tensor");
  return impl_->data[0];
}

std::vector<double>& Tensor::grad() {
  if (impl_->grad.empty()) impl_->grad.assign(impl_->data.size(), 0.0);
  return impl_->grad;
}

const std::vector<double>& Tensor::grad() const {
  if (impl_->grad.empty()) throw std::runtime_error("tensor has no gradient");
  return impl_->grad;
}

Tensor Tensor::clone() const {
  Tensor t;
  t.impl_ = std::make_shared<TensorImpl>();
  t.impl_->shape = impl_->shape;
  t.impl_->data = impl_->data;
  t.impl_->requires_grad = impl_->requires_grad;
  return t;
}

Tape::Tape() {
  prev_ = g_active_tape;
  g_active_tape = this;
}

Tape::~Tape() { g_active_tape = prev_; }

Tape* Tape::active() { return g_active_tape; }

void Tape::record(std::function<void()> backward_fn) { nodes_.push_back(std::move(backward_fn)); }

void Tape::replay_backward() {
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
}

void backward(const Tensor& loss) {
  if (loss.numel() != 1) throw std::invalid_argument("backward requires a scalar loss");
  Tape* tape = Tape::active();
  if (tape == nullptr || tape->size() == 0) throw std::runtime_error("backward with empty tape");
  Tensor l = loss;
  l.grad()[0] = 1.0;
  tape->replay_backward();
}

double grad_check(const std::function<Tensor(const std::vector<Tensor>&)>& fn,
                  std::vector<Tensor> inputs, double eps) {
  DtypeGuard fp64(Dtype::F64);
  for (Tensor& in : inputs) {
    in.set_requires_grad(true);
    in.zero_grad();
  }

  // Project the output onto a fixed pseudo-random direction so a single
  // scalar exercises the whole Jacobian.
  std::vector<double> direction;
  auto project = [&](const Tensor& out) {
    if (direction.empty()) {
      std::uint64_t s = 0x9e3779b97f4a7c15ull;
      direction.resize(static_cast<std::size_t>(out.numel()));
      for (double& d : direction) {
        s ^= s << 13;
        s ^= s >> 7;
        s ^= s << 17;
        d = 0.25 + static_cast<double>(s >> 11) * (1.0 / 9007199254740992.0);
      }
    }
    double acc = 0.0;
    for (std::size_t i = 0; i < direction.size(); ++i) acc += direction[i] * out.data()[i];
    return acc;
  };

  std::vector<std::vector<double>> analytic(inputs.size());
  {
    Tape tape;
    Tensor out = fn(inputs);
    (void)project(out);  // fixes the direction before tensors are perturbed
    Tensor w = Tensor::from_data(out.shape(), direction);
    Tensor loss = ops::sum(ops::mul(out, w));
    backward(loss);
    for (std::size_t i = 0; i < inputs.size(); ++i) {
      analytic[i] = inputs[i].has_grad()
                        ? inputs[i].grad()
                        : std::vector<double>(static_cast<std::size_t>(inputs[i].numel()), 0.0);
    }
  }

  double max_rel = 0.0;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    std::vector<double>& x = inputs[i].data();
    for (std::size_t j = 0; j < x.size(); ++j) {
      double saved = x[j];
      x[j] = saved + eps;
      double up = project(fn(inputs));
      x[j] = saved - eps;
      double dn = project(fn(inputs));
      x[j] = saved;
      double numeric = (up - dn) / (2.0 * eps);
      double a = analytic[i][j];
      double rel = std::abs(a - numeric) / std::max({1.0, std::abs(a), std::abs(numeric)});
      max_rel = std::max(max_rel, rel);
    }
  }
  return max_rel;
}

}  // namespace ps
