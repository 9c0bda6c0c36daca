#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace ps {

enum class Dtype { F32, F64 };

Dtype default_dtype();
void set_default_dtype(Dtype d);

// Scoped dtype override; gradient checks run under F64.
class DtypeGuard {
 public:
  explicit DtypeGuard(Dtype d) : saved_(default_dtype()) { set_default_dtype(d); }
  ~DtypeGuard() { set_default_dtype(saved_); }
  DtypeGuard(const DtypeGuard&) = delete;
  DtypeGuard& operator=(const DtypeGuard&) = delete;

 private:
  Dtype saved_;
};

struct TensorImpl {
  std::vector<std::int64_t> shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until backward touches this tensor
  bool requires_grad = false;
};

// Dense row-major tensor handle with shared storage.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<std::int64_t> shape, bool requires_grad = false);

  static Tensor from_data(std::vector<std::int64_t> shape, std::vector<double> values,
                          bool requires_grad = false);
  static Tensor zeros(std::vector<std::int64_t> shape);
  static Tensor full(std::vector<std::int64_t> shape, double value);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const std::vector<std::int64_t>& shape() const { return impl_->shape; }
  int rank() const { return static_cast<int>(impl_->shape.size()); }
  std::int64_t dim(int i) const { return impl_->shape[static_cast<std::size_t>(i)]; }
  std::int64_t numel() const { return static_cast<std::int64_t>(impl_->data.size()); }

  std::vector<double>& data() { return impl_->data; }
  const std::vector<double>& data() const { return impl_->data; }
  double value() const;  // scalar tensors only

  bool requires_grad() const { return impl_->requires_grad; }
  Tensor& set_requires_grad(bool v) {
    impl_->requires_grad = v;
    return *this;
  }

  bool has_grad() const { return !impl_->grad.empty(); }
  std::vector<double>& grad();           // allocates zeros on first use
  const std::vector<double>& grad() const;
  void zero_grad() { impl_->grad.clear(); }

  Tensor clone() const;

  std::shared_ptr<TensorImpl> impl() const { return impl_; }

 private:
  std::shared_ptr<TensorImpl> impl_;
};

std::int64_t shape_numel(const std::vector<std::int64_t>& shape);

// Ordered record of executed ops for one forward pass. Constructing a Tape
// makes it the active recording target; destruction restores the previous one.
class Tape {
 public:
  Tape();
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape* active();

  void record(std::function<void()> backward_fn);
  std::size_t size() const { return nodes_.size(); }

  // Runs recorded backward functions in exact reverse execution order.
  void replay_backward();

 private:
  std::vector<std::function<void()>> nodes_;
  Tape* prev_ = nullptr;
};

// Seeds grad(loss)=1 and replays the active tape. loss must be scalar.
void backward(const Tensor& loss);

// Central finite differences against analytic gradients; returns the max
// relative error |a-n|/max(1,|a|,|n|) over all input elements. Runs in F64.
double grad_check(const std::function<Tensor(const std::vector<Tensor>&)>& fn,
                  std::vector<Tensor> inputs, double eps = 1e-4);

}  // namespace ps
