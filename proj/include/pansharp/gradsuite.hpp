#pragma once

#include <functional>
#include <string>
#include <vector>

#include "pansharp/tensor.hpp"

namespace ps {

struct GradEntry {
  std::string name;
  double err = 0.0;
  double tol = 1e-4;
  bool pass() const { return err < tol; }
};

struct GradReport {
  std::vector<GradEntry> entries;
  bool pass() const {
    for (const auto& e : entries)
      if (!e.pass()) return false;
    return true;
  }
};

// Central finite differences on a random subset of entries of each `wrt`
// tensor, against the analytic gradients of a fixed random projection of the
// forward output. Used for the end-to-end graphs, where perturbing every
// element would be prohibitive.
double sampled_grad_check(const std::function<Tensor()>& forward, std::vector<Tensor> wrt,
                          int samples_per_tensor, std::uint64_t seed, double eps = 1e-4);

// Per-op checks (tol 1e-4) plus both end-to-end stage graphs on the tiny
// 16x16-LRMS config with L=4, t=2, k=8 (tol 1e-3). Runs in double precision.
GradReport run_grad_suite(bool include_end_to_end = true);

}  // namespace ps
