#pragma once

#include <string>
#include <vector>

#include "pansharp/tensor.hpp"

namespace ps::metrics {

inline constexpr int kDefaultWindow = 32;

// Reduced-resolution reference metrics. x is the prediction, y the reference,
// both [h,w,c].
double psnr(const Tensor& x, const Tensor& y, double peak);  // +inf when x==y
double sam_degrees(const Tensor& x, const Tensor& y);
double ergas(const Tensor& x, const Tensor& y, int ratio);

// Universal image quality index on single-band images. stride==window gives
// block windows (the default); stride 1 gives the sliding variant.
double uiqi(const Tensor& x, const Tensor& y, int window, int stride);
inline double uiqi(const Tensor& x, const Tensor& y, int window) {
  return uiqi(x, y, window, window);
}

// Hypercomplex Q2n; bands are zero-padded to the next power of two and each
// pixel is treated as one Cayley-Dickson number.
double q2n(const Tensor& x, const Tensor& y, int window, int stride);
inline double q2n(const Tensor& x, const Tensor& y, int window) {
  return q2n(x, y, window, window);
}

// No-reference full-resolution metrics (spectral / spatial distortion).
double d_lambda(const Tensor& ms_hat, const Tensor& ms, double p, int window);
double d_s(const Tensor& ms_hat, const Tensor& pan, const Tensor& ms, const Tensor& pan_lr,
           double q, int window);
double qnr(double dl, double ds, double alpha, double beta);

Tensor extract_band(const Tensor& img, std::int64_t band);

struct Summary {
  double mean = 0.0;
  double stddev = 0.0;  // population std, matching mean +/- std reporting
};
Summary summarize(const std::vector<double>& values);

}  // namespace ps::metrics
