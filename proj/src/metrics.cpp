#include "pansharp/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <limits>
#include <stdexcept>

namespace ps::metrics {

namespace {

constexpr double kTiny = 1e-12;

void check_same(const Tensor& x, const Tensor& y, const char* op) {
  if (x.shape() != y.shape()) throw std::invalid_argument(std::string(op) + ": shape mismatch");
}

std::int64_t next_pow2(std::int64_t n) {
  std::int64_t p = 1;
  while (p < n) p *= 2;
  return p;
}

// Cayley-Dickson conjugate: negate every component except the real part.
std::vector<double> hc_conj(std::vector<double> v) {
  for (std::size_t i = 1; i < v.size(); ++i) v[i] = -v[i];
  return v;
}

std::vector<double> hc_add(const std::vector<double>& a, const std::vector<double>& b, double sb) {
  std::vector<double> r(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) r[i] = a[i] + sb * b[i];
  return r;
}

// (a1,a2)(b1,b2) = (a1 b1 - conj(b2) a2, b2 a1 + a2 conj(b1))
std::vector<double> hc_mul(const std::vector<double>& a, const std::vector<double>& b) {
  std::size_t n = a.size();
  if (n == 1) return {a[0] * b[0]};
  std::size_t h = n / 2;
  std::vector<double> a1(a.begin(), a.begin() + static_cast<std::ptrdiff_t>(h));
  std::vector<double> a2(a.begin() + static_cast<std::ptrdiff_t>(h), a.end());
  std::vector<double> b1(b.begin(), b.begin() + static_cast<std::ptrdiff_t>(h));
  std::vector<double> b2(b.begin() + static_cast<std::ptrdiff_t>(h), b.end());
  std::vector<double> p1 = hc_add(hc_mul(a1, b1), hc_mul(hc_conj(b2), a2), -1.0);
  std::vector<double> p2 = hc_add(hc_mul(b2, a1), hc_mul(a2, hc_conj(b1)), 1.0);
  p1.insert(p1.end(), p2.begin(), p2.end());
  return p1;
}

double hc_norm(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

struct WindowStats {
  std::vector<double> mu1, mu2, cov;  // hypercomplex mean / cross-covariance
  double var1 = 0.0, var2 = 0.0;      // scalar variances
  bool identical = true;
};

WindowStats window_stats(const Tensor& x, const Tensor& y, std::int64_t d, std::int64_t wy,
                         std::int64_t wx, int window) {
  std::int64_t W = x.dim(1), C = x.dim(2);
  WindowStats st;
  st.mu1.assign(static_cast<std::size_t>(d), 0.0);
  st.mu2.assign(static_cast<std::size_t>(d), 0.0);
  st.cov.assign(static_cast<std::size_t>(d), 0.0);
  double n = static_cast<double>(window) * window;
  std::vector<double> z1(static_cast<std::size_t>(d), 0.0), z2(static_cast<std::size_t>(d), 0.0);
  double e1 = 0.0, e2 = 0.0;  // mean squared moduli
  for (int dy = 0; dy < window; ++dy)
    for (int dx = 0; dx < window; ++dx) {
      std::size_t base = static_cast<std::size_t>(((wy + dy) * W + wx + dx) * C);
      for (std::int64_t c = 0; c < d; ++c) {
        z1[static_cast<std::size_t>(c)] = c < C ? x.data()[base + static_cast<std::size_t>(c)] : 0.0;
        z2[static_cast<std::size_t>(c)] = c < C ? y.data()[base + static_cast<std::size_t>(c)] : 0.0;
        if (z1[static_cast<std::size_t>(c)] != z2[static_cast<std::size_t>(c)]) st.identical = false;
        st.mu1[static_cast<std::size_t>(c)] += z1[static_cast<std::size_t>(c)] / n;
        st.mu2[static_cast<std::size_t>(c)] += z2[static_cast<std::size_t>(c)] / n;
        e1 += z1[static_cast<std::size_t>(c)] * z1[static_cast<std::size_t>(c)] / n;
        e2 += z2[static_cast<std::size_t>(c)] * z2[static_cast<std::size_t>(c)] / n;
      }
      std::vector<double> prod = hc_mul(z1, hc_conj(z2));
      for (std::int64_t c = 0; c < d; ++c)
        st.cov[static_cast<std::size_t>(c)] += prod[static_cast<std::size_t>(c)] / n;
    }
  std::vector<double> mu_prod = hc_mul(st.mu1, hc_conj(st.mu2));
  for (std::int64_t c = 0; c < d; ++c)
    st.cov[static_cast<std::size_t>(c)] -= mu_prod[static_cast<std::size_t>(c)];
  st.var1 = std::max(0.0, e1 - hc_norm(st.mu1) * hc_norm(st.mu1));
  st.var2 = std::max(0.0, e2 - hc_norm(st.mu2) * hc_norm(st.mu2));
  return st;
}

// Shared windowed quality; d==1 keeps signs (plain UIQI), d>1 uses moduli.
double windowed_quality(const Tensor& x, const Tensor& y, std::int64_t d, int window, int stride) {
  check_same(x, y, "quality index");
  if (x.rank() != 3) throw std::invalid_argument("quality index: [h,w,c] tensors required");
  std::int64_t H = x.dim(0), W = x.dim(1);
  if (window > H || window > W) throw std::invalid_argument("window larger than image");
  if (stride < 1) throw std::invalid_argument("stride must be positive");
  double acc = 0.0;
  std::int64_t count = 0;
  for (std::int64_t wy = 0; wy + window <= H; wy += stride)
    for (std::int64_t wx = 0; wx + window <= W; wx += stride) {
      WindowStats st = window_stats(x, y, d, wy, wx, window);
      double d1 = st.var1 + st.var2;
      double m1 = hc_norm(st.mu1), m2 = hc_norm(st.mu2);
      double d2 = m1 * m1 + m2 * m2;
      double q;
      if (d1 < kTiny) {
        // degenerate: both windows constant
        if (st.identical) {
          q = 1.0;
        } else if (d2 < kTiny) {
          q = 0.0;
        } else if (d == 1) {
          q = 2.0 * st.mu1[0] * st.mu2[0] / d2;  // luminance-only, signed
        } else {
          q = 2.0 * m1 * m2 / d2;
        }
      } else if (d2 < kTiny) {
        q = (d == 1) ? 2.0 * st.cov[0] / d1 : 2.0 * hc_norm(st.cov) / d1;
      } else if (d == 1) {
        q = 4.0 * st.cov[0] * st.mu1[0] * st.mu2[0] / (d1 * d2);
      } else {
        q = 4.0 * hc_norm(st.cov) * m1 * m2 / (d1 * d2);
      }
      acc += q;
      ++count;
    }
  return acc / static_cast<double>(count);
}

}  // namespace

double psnr(const Tensor& x, const Tensor& y, double peak) {
  check_same(x, y, "psnr");
  if (peak <= 0.0) throw std::invalid_argument("psnr: peak must be positive");
  double mse = 0.0;
  for (std::size_t i = 0; i < x.data().size(); ++i) {
    double d = x.data()[i] - y.data()[i];
    mse += d * d;
  }
  mse /= static_cast<double>(x.numel());
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(peak * peak / mse);
}

double sam_degrees(const Tensor& x, const Tensor& y) {
  check_same(x, y, "sam");
  if (x.rank() != 3 || x.dim(2) < 2) throw std::invalid_argument("sam: >=2 bands required");
  std::int64_t pixels = x.dim(0) * x.dim(1), C = x.dim(2);
  double acc = 0.0;
  for (std::int64_t p = 0; p < pixels; ++p) {
    double nx = 0.0, ny = 0.0;
    for (std::int64_t c = 0; c < C; ++c) {
      double a = x.data()[static_cast<std::size_t>(p * C + c)];
      double b = y.data()[static_cast<std::size_t>(p * C + c)];
      nx += a * a;
      ny += b * b;
    }
    if (nx < kTiny || ny < kTiny) continue;  // zero vectors contribute 0 degrees
    // acos(dot/(|x||y|)) loses precision near 0 and 180 degrees; the
    // half-angle form on the normalized vectors stays accurate everywhere.
    double nxs = std::sqrt(nx), nys = std::sqrt(ny), dm = 0.0, dp = 0.0;
    for (std::int64_t c = 0; c < C; ++c) {
      double u = x.data()[static_cast<std::size_t>(p * C + c)] / nxs;
      double v = y.data()[static_cast<std::size_t>(p * C + c)] / nys;
      dm += (u - v) * (u - v);
      dp += (u + v) * (u + v);
    }
    acc += 2.0 * std::atan2(std::sqrt(dm), std::sqrt(dp));
  }
  return acc / static_cast<double>(pixels) * 180.0 / M_PI;
}

double ergas(const Tensor& x, const Tensor& y, int ratio) {
  check_same(x, y, "ergas");
  std::int64_t pixels = x.dim(0) * x.dim(1), C = x.dim(2);
  double acc = 0.0;
  std::int64_t used = 0;
  for (std::int64_t c = 0; c < C; ++c) {
    double mu = 0.0, se = 0.0;
    for (std::int64_t p = 0; p < pixels; ++p) {
      double ref = y.data()[static_cast<std::size_t>(p * C + c)];
      double d = x.data()[static_cast<std::size_t>(p * C + c)] - ref;
      mu += ref;
      se += d * d;
    }
    mu /= static_cast<double>(pixels);
    if (std::abs(mu) < kTiny) {
      std::fprintf(stderr, "ergas: skipping band %lld with zero reference mean\n",
                   static_cast<long long>(c));
      continue;
    }
    double rmse = std::sqrt(se / static_cast<double>(pixels));
    acc += (rmse / mu) * (rmse / mu);
    ++used;
  }
  if (used == 0) throw std::invalid_argument("ergas: all reference band means are zero");
  return 100.0 / static_cast<double>(ratio) * std::sqrt(acc / static_cast<double>(used));
}

double uiqi(const Tensor& x, const Tensor& y, int window, int stride) {
  if (x.dim(2) != 1) throw std::invalid_argument("uiqi: single-band images required");
  return windowed_quality(x, y, 1, window, stride);
}

double q2n(const Tensor& x, const Tensor& y, int window, int stride) {
  std::int64_t d = next_pow2(x.dim(2));
  return windowed_quality(x, y, d, window, stride);
}

Tensor extract_band(const Tensor& img, std::int64_t band) {
  std::int64_t H = img.dim(0), W = img.dim(1), C = img.dim(2);
  if (band < 0 || band >= C) throw std::invalid_argument("extract_band: band out of range");
  Tensor out({H, W, 1});
  for (std::int64_t p = 0; p < H * W; ++p)
    out.data()[static_cast<std::size_t>(p)] = img.data()[static_cast<std::size_t>(p * C + band)];
  return out;
}

double d_lambda(const Tensor& ms_hat, const Tensor& ms, double p, int window) {
  if (ms_hat.dim(2) != ms.dim(2)) throw std::invalid_argument("d_lambda: band count mismatch");
  std::int64_t N = ms.dim(2);
  if (N < 2) throw std::invalid_argument("d_lambda: >=2 bands required");
  std::vector<Tensor> hat_bands, ms_bands;
  for (std::int64_t b = 0; b < N; ++b) {
    hat_bands.push_back(extract_band(ms_hat, b));
    ms_bands.push_back(extract_band(ms, b));
  }
  double acc = 0.0;
  for (std::int64_t l = 0; l < N; ++l)
    for (std::int64_t r = 0; r < N; ++r) {
      if (l == r) continue;
      double qh = uiqi(hat_bands[static_cast<std::size_t>(l)], hat_bands[static_cast<std::size_t>(r)],
                       window, window);
      double qm = uiqi(ms_bands[static_cast<std::size_t>(l)], ms_bands[static_cast<std::size_t>(r)],
                       window, window);
      acc += std::pow(std::abs(qh - qm), p);
    }
  return std::pow(acc / static_cast<double>(N * (N - 1)), 1.0 / p);
}

double d_s(const Tensor& ms_hat, const Tensor& pan, const Tensor& ms, const Tensor& pan_lr,
           double q, int window) {
  if (ms_hat.dim(2) != ms.dim(2)) throw std::invalid_argument("d_s: band count mismatch");
  std::int64_t N = ms.dim(2);
  double acc = 0.0;
  for (std::int64_t b = 0; b < N; ++b) {
    double qh = uiqi(extract_band(ms_hat, b), pan, window, window);
    double qm = uiqi(extract_band(ms, b), pan_lr, window, window);
    acc += std::pow(std::abs(qh - qm), q);
  }
  return std::pow(acc / static_cast<double>(N), 1.0 / q);
}

double qnr(double dl, double ds, double alpha, double beta) {
  return std::pow(1.0 - dl, alpha) * std::pow(1.0 - ds, beta);
}

Summary summarize(const std::vector<double>& values) {
  Summary s;
  if (values.empty()) return s;
  for (double v : values) s.mean += v;
  s.mean /= static_cast<double>(values.size());
  for (double v : values) s.stddev += (v - s.mean) * (v - s.mean);
  s.stddev = std::sqrt(s.stddev / static_cast<double>(values.size()));
  return s;
}

}  // namespace ps::metrics
