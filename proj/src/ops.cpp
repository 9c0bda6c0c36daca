#include "pansharp/ops.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>

namespace ps::ops {

namespace {

using Impl = std::shared_ptr<TensorImpl>;

bool want(const Impl& t) { return t->requires_grad; }

std::vector<double>& gbuf(const Impl& t) {
  if (t->grad.empty()) t->grad.assign(t->data.size(), 0.0);
  return t->grad;
}

// Quantizes to the active dtype, checks finiteness, propagates requires_grad.
void finish(Tensor& out, std::initializer_list<const Tensor*> ins) {
  bool req = false;
  for (const Tensor* t : ins) req = req || t->requires_grad();
  out.set_requires_grad(req);
  const bool f32 = default_dtype() == Dtype::F32;
  for (double& v : out.data()) {
    if (f32) v = static_cast<double>(static_cast<float>(v));
    if (!std::isfinite(v)) throw std::runtime_error("non-finite value produced by tensor op");
  }
}

bool recording(const Tensor& out) { return Tape::active() != nullptr && out.requires_grad(); }

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) throw std::invalid_argument(std::string(op) + ": shape mismatch");
}

std::vector<double> mm_nn(const std::vector<double>& A, std::int64_t m, std::int64_t k,
                          const std::vector<double>& B, std::int64_t n) {
  std::vector<double> C(static_cast<std::size_t>(m * n), 0.0);
  for (std::int64_t i = 0; i < m; ++i)
    for (std::int64_t p = 0; p < k; ++p) {
      double a = A[static_cast<std::size_t>(i * k + p)];
      const double* brow = &B[static_cast<std::size_t>(p * n)];
      double* crow = &C[static_cast<std::size_t>(i * n)];
      for (std::int64_t j = 0; j < n; ++j) crow[j] += a * brow[j];
    }
  return C;
}

std::vector<double> mm_nt(const std::vector<double>& A, std::int64_t m, std::int64_t k,
                          const std::vector<double>& B, std::int64_t n) {
  // A[m,k] * B[n,k]^T
  std::vector<double> C(static_cast<std::size_t>(m * n), 0.0);
  for (std::int64_t i = 0; i < m; ++i)
    for (std::int64_t j = 0; j < n; ++j) {
      double acc = 0.0;
      const double* arow = &A[static_cast<std::size_t>(i * k)];
      const double* brow = &B[static_cast<std::size_t>(j * k)];
      for (std::int64_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
      C[static_cast<std::size_t>(i * n + j)] = acc;
    }
  return C;
}

std::vector<double> mm_tn(const std::vector<double>& A, std::int64_t k, std::int64_t m,
                          const std::vector<double>& B, std::int64_t n) {
  // A[k,m]^T * B[k,n]
  std::vector<double> C(static_cast<std::size_t>(m * n), 0.0);
  for (std::int64_t p = 0; p < k; ++p) {
    const double* arow = &A[static_cast<std::size_t>(p * m)];
    const double* brow = &B[static_cast<std::size_t>(p * n)];
    for (std::int64_t i = 0; i < m; ++i) {
      double a = arow[i];
      double* crow = &C[static_cast<std::size_t>(i * n)];
      for (std::int64_t j = 0; j < n; ++j) crow[j] += a * brow[j];
    }
  }
  return C;
}

void accum(std::vector<double>& dst, const std::vector<double>& src) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

double cubic_keys(double t) {
  constexpr double a = -0.5;
  t = std::abs(t);
  if (t <= 1.0) return (a + 2.0) * t * t * t - (a + 3.0) * t * t + 1.0;
  if (t < 2.0) return a * t * t * t - 5.0 * a * t * t + 8.0 * a * t - 4.0 * a;
  return 0.0;
}

struct CubicTaps {
  std::vector<std::array<int, 4>> idx;
  std::vector<std::array<double, 4>> w;
};

CubicTaps cubic_taps(std::int64_t out_n, std::int64_t in_n, int factor) {
  CubicTaps taps;
  taps.idx.resize(static_cast<std::size_t>(out_n));
  taps.w.resize(static_cast<std::size_t>(out_n));
  for (std::int64_t o = 0; o < out_n; ++o) {
    double src = (static_cast<double>(o) + 0.5) / factor - 0.5;
    double base = std::floor(src);
    double frac = src - base;
    int b = static_cast<int>(base);
    for (int t = 0; t < 4; ++t) {
      taps.idx[static_cast<std::size_t>(o)][static_cast<std::size_t>(t)] =
          reflect_index(b - 1 + t, static_cast<int>(in_n));
      taps.w[static_cast<std::size_t>(o)][static_cast<std::size_t>(t)] =
          cubic_keys(frac - static_cast<double>(t - 1));
    }
  }
  return taps;
}

Tensor elementwise(const Tensor& x, double (*f)(double), double (*df)(double)) {
  Tensor out(x.shape());
  for (std::int64_t i = 0; i < x.numel(); ++i)
    out.data()[static_cast<std::size_t>(i)] = f(x.data()[static_cast<std::size_t>(i)]);
  finish(out, {&x});
  if (recording(out)) {
    Impl xi = x.impl(), oi = out.impl();
    std::vector<double> saved = x.data();
    Tape::active()->record([xi, oi, saved, df] {
      if (oi->grad.empty() || !want(xi)) return;
      std::vector<double>& g = gbuf(xi);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += oi->grad[i] * df(saved[i]);
    });
  }
  return out;
}

}  // namespace

int reflect_index(int i, int n) {
  if (n == 1) return 0;
  int period = 2 * (n - 1);
  i = ((i % period) + period) % period;
  return i < n ? i : period - i;
}

Tensor add(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "add");
  Tensor out(a.shape());
  for (std::int64_t i = 0; i < a.numel(); ++i)
    out.data()[static_cast<std::size_t>(i)] =
        a.data()[static_cast<std::size_t>(i)] + b.data()[static_cast<std::size_t>(i)];
  finish(out, {&a, &b});
  if (recording(out)) {
    Impl ai = a.impl(), bi = b.impl(), oi = out.impl();
    Tape::active()->record([ai, bi, oi] {
      if (oi->grad.empty()) return;
      if (want(ai)) accum(gbuf(ai), oi->grad);
      if (want(bi)) accum(gbuf(bi), oi->grad);
    });
  }
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "sub");
  Tensor out(a.shape());
  for (std::int64_t i = 0; i < a.numel(); ++i)
    out.data()[static_cast<std::size_t>(i)] =
        a.data()[static_cast<std::size_t>(i)] - b.data()[static_cast<std::size_t>(i)];
  finish(out, {&a, &b});
  if (recording(out)) {
    Impl ai = a.impl(), bi = b.impl(), oi = out.impl();
    Tape::active()->record([ai, bi, oi] {
      if (oi->grad.empty()) return;
      if (want(ai)) accum(gbuf(ai), oi->grad);
      if (want(bi)) {
        std::vector<double>& g = gbuf(bi);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] -= oi->grad[i];
      }
    });
  }
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "mul");
  Tensor out(a.shape());
  for (std::int64_t i = 0; i < a.numel(); ++i)
    out.data()[static_cast<std::size_t>(i)] =
        a.data()[static_cast<std::size_t>(i)] * b.data()[static_cast<std::size_t>(i)];
  finish(out, {&a, &b});
  if (recording(out)) {
    Impl ai = a.impl(), bi = b.impl(), oi = out.impl();
    std::vector<double> av = a.data(), bv = b.data();
    Tape::active()->record([ai, bi, oi, av, bv] {
      if (oi->grad.empty()) return;
      if (want(ai)) {
        std::vector<double>& g = gbuf(ai);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += oi->grad[i] * bv[i];
      }
      if (want(bi)) {
        std::vector<double>& g = gbuf(bi);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += oi->grad[i] * av[i];
      }
    });
  }
  return out;
}

Tensor scale(const Tensor& a, double c) {
  Tensor out(a.shape());
  for (std::int64_t i = 0; i < a.numel(); ++i)
    out.data()[static_cast<std::size_t>(i)] = a.data()[static_cast<std::size_t>(i)] * c;
  finish(out, {&a});
  if (recording(out)) {
    Impl ai = a.impl(), oi = out.impl();
    Tape::active()->record([ai, oi, c] {
      if (oi->grad.empty() || !want(ai)) return;
      std::vector<double>& g = gbuf(ai);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += oi->grad[i] * c;
    });
  }
  return out;
}

Tensor mul_scalar(const Tensor& s, const Tensor& x) {
  if (s.numel() != 1) throw std::invalid_argument("mul_scalar: s must be scalar");
  double sv = s.data()[0];
  Tensor out(x.shape());
  for (std::int64_t i = 0; i < x.numel(); ++i)
    out.data()[static_cast<std::size_t>(i)] = sv * x.data()[static_cast<std::size_t>(i)];
  finish(out, {&s, &x});
  if (recording(out)) {
    Impl si = s.impl(), xi = x.impl(), oi = out.impl();
    std::vector<double> xv = x.data();
    Tape::active()->record([si, xi, oi, xv, sv] {
      if (oi->grad.empty()) return;
      if (want(si)) {
        double acc = 0.0;
        for (std::size_t i = 0; i < xv.size(); ++i) acc += oi->grad[i] * xv[i];
        gbuf(si)[0] += acc;
      }
      if (want(xi)) {
        std::vector<double>& g = gbuf(xi);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += oi->grad[i] * sv;
      }
    });
  }
  return out;
}

Tensor add_bias(const Tensor& x, const Tensor& b) {
  std::int64_t n = x.dim(x.rank() - 1);
  if (b.rank() != 1 || b.dim(0) != n)
    throw std::invalid_argument("add_bias: bias must match last dim");
  Tensor out(x.shape());
  std::int64_t rows = x.numel() / n;
  for (std::int64_t r = 0; r < rows; ++r)
    for (std::int64_t j = 0; j < n; ++j)
      out.data()[static_cast<std::size_t>(r * n + j)] =
          x.data()[static_cast<std::size_t>(r * n + j)] + b.data()[static_cast<std::size_t>(j)];
  finish(out, {&x, &b});
  if (recording(out)) {
    Impl xi = x.impl(), bi = b.impl(), oi = out.impl();
    Tape::active()->record([xi, bi, oi, rows, n] {
      if (oi->grad.empty()) return;
      if (want(xi)) accum(gbuf(xi), oi->grad);
      if (want(bi)) {
        std::vector<double>& g = gbuf(bi);
        for (std::int64_t r = 0; r < rows; ++r)
          for (std::int64_t j = 0; j < n; ++j)
            g[static_cast<std::size_t>(j)] += oi->grad[static_cast<std::size_t>(r * n + j)];
      }
    });
  }
  return out;
}

namespace {

enum class MmMode { NN, NT, TN };

Tensor matmul_generic(const Tensor& a, const Tensor& b, MmMode mode) {
  if (a.rank() != 2 || b.rank() != 2) throw std::invalid_argument("matmul: rank-2 operands required");
  std::int64_t m, k, n;
  switch (mode) {
    case MmMode::NN:
      m = a.dim(0), k = a.dim(1), n = b.dim(1);
      if (b.dim(0) != k) throw std::invalid_argument("matmul: inner extents differ");
      break;
    case MmMode::NT:
      m = a.dim(0), k = a.dim(1), n = b.dim(0);
      if (b.dim(1) != k) throw std::invalid_argument("matmul_nt: inner extents differ");
      break;
    case MmMode::TN:
      k = a.dim(0), m = a.dim(1), n = b.dim(1);
      if (b.dim(0) != k) throw std::invalid_argument("matmul_tn: inner extents differ");
      break;
  }
  std::vector<double> c;
  switch (mode) {
    case MmMode::NN: c = mm_nn(a.data(), m, k, b.data(), n); break;
    case MmMode::NT: c = mm_nt(a.data(), m, k, b.data(), n); break;
    case MmMode::TN: c = mm_tn(a.data(), k, m, b.data(), n); break;
  }
  Tensor out = Tensor::from_data({m, n}, std::move(c));
  finish(out, {&a, &b});
  if (recording(out)) {
    Impl ai = a.impl(), bi = b.impl(), oi = out.impl();
    std::vector<double> av = a.data(), bv = b.data();
    Tape::active()->record([ai, bi, oi, av, bv, m, k, n, mode] {
      if (oi->grad.empty()) return;
      const std::vector<double>& dc = oi->grad;
      switch (mode) {
        case MmMode::NN:
          if (want(ai)) accum(gbuf(ai), mm_nt(dc, m, n, bv, k));        // dC[m,n]*B[k,n]^T
          if (want(bi)) accum(gbuf(bi), mm_tn(av, m, k, dc, n));        // A^T*dC
          break;
        case MmMode::NT:
          if (want(ai)) accum(gbuf(ai), mm_nn(dc, m, n, bv, k));        // dC*B[n,k]
          if (want(bi)) accum(gbuf(bi), mm_tn(dc, m, n, av, k));        // dC^T*A
          break;
        case MmMode::TN:
          if (want(ai)) accum(gbuf(ai), mm_nt(bv, k, n, dc, m));        // B*dC^T -> [k,m]
          if (want(bi)) accum(gbuf(bi), mm_nn(av, k, m, dc, n));        // A*dC
          break;
      }
    });
  }
  return out;
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) { return matmul_generic(a, b, MmMode::NN); }
Tensor matmul_nt(const Tensor& a, const Tensor& b) { return matmul_generic(a, b, MmMode::NT); }
Tensor matmul_tn(const Tensor& a, const Tensor& b) { return matmul_generic(a, b, MmMode::TN); }

Tensor conv2d(const Tensor& x, const Tensor& w) {
  if (x.rank() != 3 || w.rank() != 4) throw std::invalid_argument("conv2d: x[h,w,c], w[kh,kw,cin,cout]");
  std::int64_t H = x.dim(0), W = x.dim(1), CI = x.dim(2);
  std::int64_t KH = w.dim(0), KW = w.dim(1);
  if (w.dim(2) != CI) throw std::invalid_argument("conv2d: input channel mismatch");
  if (KH % 2 == 0 || KW % 2 == 0) throw std::invalid_argument("conv2d: kernel extents must be odd");
  std::int64_t CO = w.dim(3);
  std::int64_t ph = KH / 2, pw = KW / 2;
  Tensor out({H, W, CO});
  const std::vector<double>& xd = x.data();
  const std::vector<double>& wd = w.data();
  std::vector<double>& od = out.data();
  for (std::int64_t y = 0; y < H; ++y)
    for (std::int64_t xc = 0; xc < W; ++xc) {
      double* orow = &od[static_cast<std::size_t>((y * W + xc) * CO)];
      for (std::int64_t ky = 0; ky < KH; ++ky) {
        std::int64_t sy = reflect_index(static_cast<int>(y + ky - ph), static_cast<int>(H));
        for (std::int64_t kx = 0; kx < KW; ++kx) {
          std::int64_t sx = reflect_index(static_cast<int>(xc + kx - pw), static_cast<int>(W));
          const double* xrow = &xd[static_cast<std::size_t>((sy * W + sx) * CI)];
          const double* wrow = &wd[static_cast<std::size_t>(((ky * KW + kx) * CI) * CO)];
          for (std::int64_t ci = 0; ci < CI; ++ci) {
            double xv = xrow[ci];
            const double* wrc = &wrow[ci * CO];
            for (std::int64_t co = 0; co < CO; ++co) orow[co] += xv * wrc[co];
          }
        }
      }
    }
  finish(out, {&x, &w});
  if (recording(out)) {
    Impl xi = x.impl(), wi = w.impl(), oi = out.impl();
    std::vector<double> xv = x.data(), wv = w.data();
    Tape::active()->record([xi, wi, oi, xv, wv, H, W, CI, KH, KW, CO, ph, pw] {
      if (oi->grad.empty()) return;
      const std::vector<double>& og = oi->grad;
      bool wx = want(xi), ww = want(wi);
      std::vector<double>* gx = wx ? &gbuf(xi) : nullptr;
      std::vector<double>* gw = ww ? &gbuf(wi) : nullptr;
      for (std::int64_t y = 0; y < H; ++y)
        for (std::int64_t xc = 0; xc < W; ++xc) {
          const double* orow = &og[static_cast<std::size_t>((y * W + xc) * CO)];
          for (std::int64_t ky = 0; ky < KH; ++ky) {
            std::int64_t sy = reflect_index(static_cast<int>(y + ky - ph), static_cast<int>(H));
            for (std::int64_t kx = 0; kx < KW; ++kx) {
              std::int64_t sx = reflect_index(static_cast<int>(xc + kx - pw), static_cast<int>(W));
              std::size_t xbase = static_cast<std::size_t>((sy * W + sx) * CI);
              std::size_t wbase = static_cast<std::size_t>((ky * KW + kx) * CI * CO);
              for (std::int64_t ci = 0; ci < CI; ++ci) {
                double xvv = xv[xbase + static_cast<std::size_t>(ci)];
                double gacc = 0.0;
                for (std::int64_t co = 0; co < CO; ++co) {
                  double g = orow[co];
                  if (ww) (*gw)[wbase + static_cast<std::size_t>(ci * CO + co)] += xvv * g;
                  gacc += wv[wbase + static_cast<std::size_t>(ci * CO + co)] * g;
                }
                if (wx) (*gx)[xbase + static_cast<std::size_t>(ci)] += gacc;
              }
            }
          }
        }
    });
  }
  return out;
}

Tensor depthwise_conv2d(const Tensor& x, const Tensor& w) {
  if (x.rank() != 3 || w.rank() != 3) throw std::invalid_argument("depthwise_conv2d: x[h,w,c], w[kh,kw,c]");
  std::int64_t H = x.dim(0), W = x.dim(1), C = x.dim(2);
  std::int64_t KH = w.dim(0), KW = w.dim(1);
  if (w.dim(2) != C) throw std::invalid_argument("depthwise_conv2d: channel mismatch");
  if (KH % 2 == 0 || KW % 2 == 0) throw std::invalid_argument("depthwise_conv2d: kernel extents must be odd");
  std::int64_t ph = KH / 2, pw = KW / 2;
  Tensor out({H, W, C});
  for (std::int64_t y = 0; y < H; ++y)
    for (std::int64_t xc = 0; xc < W; ++xc)
      for (std::int64_t ky = 0; ky < KH; ++ky) {
        std::int64_t sy = reflect_index(static_cast<int>(y + ky - ph), static_cast<int>(H));
        for (std::int64_t kx = 0; kx < KW; ++kx) {
          std::int64_t sx = reflect_index(static_cast<int>(xc + kx - pw), static_cast<int>(W));
          for (std::int64_t c = 0; c < C; ++c)
            out.data()[static_cast<std::size_t>((y * W + xc) * C + c)] +=
                x.data()[static_cast<std::size_t>((sy * W + sx) * C + c)] *
                w.data()[static_cast<std::size_t>((ky * KW + kx) * C + c)];
        }
      }
  finish(out, {&x, &w});
  if (recording(out)) {
    Impl xi = x.impl(), wi = w.impl(), oi = out.impl();
    std::vector<double> xv = x.data(), wv = w.data();
    Tape::active()->record([xi, wi, oi, xv, wv, H, W, C, KH, KW, ph, pw] {
      if (oi->grad.empty()) return;
      bool wx = want(xi), ww = want(wi);
      std::vector<double>* gx = wx ? &gbuf(xi) : nullptr;
      std::vector<double>* gw = ww ? &gbuf(wi) : nullptr;
      const std::vector<double>& og = oi->grad;
      for (std::int64_t y = 0; y < H; ++y)
        for (std::int64_t xc = 0; xc < W; ++xc)
          for (std::int64_t ky = 0; ky < KH; ++ky) {
            std::int64_t sy = reflect_index(static_cast<int>(y + ky - ph), static_cast<int>(H));
            for (std::int64_t kx = 0; kx < KW; ++kx) {
              std::int64_t sx = reflect_index(static_cast<int>(xc + kx - pw), static_cast<int>(W));
              for (std::int64_t c = 0; c < C; ++c) {
                double g = og[static_cast<std::size_t>((y * W + xc) * C + c)];
                std::size_t xidx = static_cast<std::size_t>((sy * W + sx) * C + c);
                std::size_t widx = static_cast<std::size_t>((ky * KW + kx) * C + c);
                if (ww) (*gw)[widx] += xv[xidx] * g;
                if (wx) (*gx)[xidx] += wv[widx] * g;
              }
            }
          }
    });
  }
  return out;
}

Tensor upsample_bicubic(const Tensor& x, int factor) {
  if (x.rank() != 3) throw std::invalid_argument("upsample_bicubic: x[h,w,c] required");
  if (factor < 1) throw std::invalid_argument("upsample_bicubic: factor must be >= 1");
  std::int64_t H = x.dim(0), W = x.dim(1), C = x.dim(2);
  std::int64_t OH = H * factor, OW = W * factor;
  CubicTaps ty = cubic_taps(OH, H, factor);
  CubicTaps tx = cubic_taps(OW, W, factor);
  Tensor out({OH, OW, C});
  for (std::int64_t oy = 0; oy < OH; ++oy)
    for (std::int64_t ox = 0; ox < OW; ++ox)
      for (int a = 0; a < 4; ++a)
        for (int b = 0; b < 4; ++b) {
          double wgt = ty.w[static_cast<std::size_t>(oy)][static_cast<std::size_t>(a)] *
                       tx.w[static_cast<std::size_t>(ox)][static_cast<std::size_t>(b)];
          if (wgt == 0.0) continue;
          std::int64_t sy = ty.idx[static_cast<std::size_t>(oy)][static_cast<std::size_t>(a)];
          std::int64_t sx = tx.idx[static_cast<std::size_t>(ox)][static_cast<std::size_t>(b)];
          for (std::int64_t c = 0; c < C; ++c)
            out.data()[static_cast<std::size_t>((oy * OW + ox) * C + c)] +=
                wgt * x.data()[static_cast<std::size_t>((sy * W + sx) * C + c)];
        }
  finish(out, {&x});
  if (recording(out)) {
    Impl xi = x.impl(), oi = out.impl();
    Tape::active()->record([xi, oi, ty, tx, H, W, C, OH, OW] {
      if (oi->grad.empty() || !want(xi)) return;
      std::vector<double>& g = gbuf(xi);
      for (std::int64_t oy = 0; oy < OH; ++oy)
        for (std::int64_t ox = 0; ox < OW; ++ox)
          for (int a = 0; a < 4; ++a)
            for (int b = 0; b < 4; ++b) {
              double wgt = ty.w[static_cast<std::size_t>(oy)][static_cast<std::size_t>(a)] *
                           tx.w[static_cast<std::size_t>(ox)][static_cast<std::size_t>(b)];
              if (wgt == 0.0) continue;
              std::int64_t sy = ty.idx[static_cast<std::size_t>(oy)][static_cast<std::size_t>(a)];
              std::int64_t sx = tx.idx[static_cast<std::size_t>(ox)][static_cast<std::size_t>(b)];
              for (std::int64_t c = 0; c < C; ++c)
                g[static_cast<std::size_t>((sy * W + sx) * C + c)] +=
                    wgt * oi->grad[static_cast<std::size_t>((oy * OW + ox) * C + c)];
            }
    });
  }
  return out;
}

Tensor nearest_resize(const Tensor& x, std::int64_t out_h, std::int64_t out_w) {
  if (x.rank() != 3) throw std::invalid_argument("nearest_resize: x[h,w,c] required");
  std::int64_t H = x.dim(0), W = x.dim(1), C = x.dim(2);
  std::vector<std::int64_t> my(static_cast<std::size_t>(out_h)), mx(static_cast<std::size_t>(out_w));
  for (std::int64_t i = 0; i < out_h; ++i)
    my[static_cast<std::size_t>(i)] =
        std::min<std::int64_t>(H - 1, static_cast<std::int64_t>((static_cast<double>(i) + 0.5) * H / out_h));
  for (std::int64_t i = 0; i < out_w; ++i)
    mx[static_cast<std::size_t>(i)] =
        std::min<std::int64_t>(W - 1, static_cast<std::int64_t>((static_cast<double>(i) + 0.5) * W / out_w));
  Tensor out({out_h, out_w, C});
  for (std::int64_t oy = 0; oy < out_h; ++oy)
    for (std::int64_t ox = 0; ox < out_w; ++ox)
      for (std::int64_t c = 0; c < C; ++c)
        out.data()[static_cast<std::size_t>((oy * out_w + ox) * C + c)] =
            x.data()[static_cast<std::size_t>((my[static_cast<std::size_t>(oy)] * W +
                                               mx[static_cast<std::size_t>(ox)]) * C + c)];
  finish(out, {&x});
  if (recording(out)) {
    Impl xi = x.impl(), oi = out.impl();
    Tape::active()->record([xi, oi, my, mx, W, C, out_h, out_w] {
      if (oi->grad.empty() || !want(xi)) return;
      std::vector<double>& g = gbuf(xi);
      for (std::int64_t oy = 0; oy < out_h; ++oy)
        for (std::int64_t ox = 0; ox < out_w; ++ox)
          for (std::int64_t c = 0; c < C; ++c)
            g[static_cast<std::size_t>((my[static_cast<std::size_t>(oy)] * W +
                                        mx[static_cast<std::size_t>(ox)]) * C + c)] +=
                oi->grad[static_cast<std::size_t>((oy * out_w + ox) * C + c)];
    });
  }
  return out;
}

namespace {
double relu_f(double v) { return v > 0.0 ? v : 0.0; }
double relu_df(double v) { return v > 0.0 ? 1.0 : 0.0; }
double gelu_f(double v) { return 0.5 * v * (1.0 + std::erf(v / std::sqrt(2.0))); }
double gelu_df(double v) {
  return 0.5 * (1.0 + std::erf(v / std::sqrt(2.0))) +
         v * std::exp(-0.5 * v * v) / std::sqrt(2.0 * M_PI);
}
double sigmoid_f(double v) { return 1.0 / (1.0 + std::exp(-v)); }
double sigmoid_df(double v) {
  double s = sigmoid_f(v);
  return s * (1.0 - s);
}
}  // namespace

Tensor relu(const Tensor& x) { return elementwise(x, relu_f, relu_df); }
Tensor gelu(const Tensor& x) { return elementwise(x, gelu_f, gelu_df); }
Tensor sigmoid(const Tensor& x) { return elementwise(x, sigmoid_f, sigmoid_df); }

Tensor sine_act(const Tensor& x, double w0) {
  Tensor out(x.shape());
  for (std::int64_t i = 0; i < x.numel(); ++i)
    out.data()[static_cast<std::size_t>(i)] = std::sin(w0 * x.data()[static_cast<std::size_t>(i)]);
  finish(out, {&x});
  if (recording(out)) {
    Impl xi = x.impl(), oi = out.impl();
    std::vector<double> saved = x.data();
    Tape::active()->record([xi, oi, saved, w0] {
      if (oi->grad.empty() || !want(xi)) return;
      std::vector<double>& g = gbuf(xi);
      for (std::size_t i = 0; i < g.size(); ++i)
        g[i] += oi->grad[i] * w0 * std::cos(w0 * saved[i]);
    });
  }
  return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  if (eps <= 0.0) throw std::invalid_argument("layer_norm: eps must be positive");
  std::int64_t n = x.dim(x.rank() - 1);
  if (gain.numel() != n || bias.numel() != n)
    throw std::invalid_argument("layer_norm: gain/bias must match last dim");
  std::int64_t rows = x.numel() / n;
  Tensor out(x.shape());
  std::vector<double> xhat(static_cast<std::size_t>(x.numel()));
  std::vector<double> inv_std(static_cast<std::size_t>(rows));
  for (std::int64_t r = 0; r < rows; ++r) {
    const double* row = &x.data()[static_cast<std::size_t>(r * n)];
    double mu = 0.0;
    for (std::int64_t j = 0; j < n; ++j) mu += row[j];
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (std::int64_t j = 0; j < n; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<double>(n);
    double is = 1.0 / std::sqrt(var + eps);
    inv_std[static_cast<std::size_t>(r)] = is;
    for (std::int64_t j = 0; j < n; ++j) {
      double xh = (row[j] - mu) * is;
      xhat[static_cast<std::size_t>(r * n + j)] = xh;
      out.data()[static_cast<std::size_t>(r * n + j)] =
          gain.data()[static_cast<std::size_t>(j)] * xh + bias.data()[static_cast<std::size_t>(j)];
    }
  }
  finish(out, {&x, &gain, &bias});
  if (recording(out)) {
    Impl xi = x.impl(), gi = gain.impl(), bi = bias.impl(), oi = out.impl();
    std::vector<double> gv = gain.data();
    Tape::active()->record([xi, gi, bi, oi, xhat, inv_std, gv, rows, n] {
      if (oi->grad.empty()) return;
      const std::vector<double>& og = oi->grad;
      if (want(gi)) {
        std::vector<double>& g = gbuf(gi);
        for (std::int64_t r = 0; r < rows; ++r)
          for (std::int64_t j = 0; j < n; ++j)
            g[static_cast<std::size_t>(j)] +=
                og[static_cast<std::size_t>(r * n + j)] * xhat[static_cast<std::size_t>(r * n + j)];
      }
      if (want(bi)) {
        std::vector<double>& g = gbuf(bi);
        for (std::int64_t r = 0; r < rows; ++r)
          for (std::int64_t j = 0; j < n; ++j)
            g[static_cast<std::size_t>(j)] += og[static_cast<std::size_t>(r * n + j)];
      }
      if (want(xi)) {
        std::vector<double>& g = gbuf(xi);
        for (std::int64_t r = 0; r < rows; ++r) {
          double m1 = 0.0, m2 = 0.0;
          for (std::int64_t j = 0; j < n; ++j) {
            double dxh = og[static_cast<std::size_t>(r * n + j)] * gv[static_cast<std::size_t>(j)];
            m1 += dxh;
            m2 += dxh * xhat[static_cast<std::size_t>(r * n + j)];
          }
          m1 /= static_cast<double>(n);
          m2 /= static_cast<double>(n);
          double is = inv_std[static_cast<std::size_t>(r)];
          for (std::int64_t j = 0; j < n; ++j) {
            double dxh = og[static_cast<std::size_t>(r * n + j)] * gv[static_cast<std::size_t>(j)];
            g[static_cast<std::size_t>(r * n + j)] +=
                is * (dxh - m1 - xhat[static_cast<std::size_t>(r * n + j)] * m2);
          }
        }
      }
    });
  }
  return out;
}

Tensor softmax_lastdim(const Tensor& x) {
  std::int64_t n = x.dim(x.rank() - 1);
  std::int64_t rows = x.numel() / n;
  Tensor out(x.shape());
  for (std::int64_t r = 0; r < rows; ++r) {
    const double* row = &x.data()[static_cast<std::size_t>(r * n)];
    double* orow = &out.data()[static_cast<std::size_t>(r * n)];
    double mx = row[0];
    for (std::int64_t j = 1; j < n; ++j) mx = std::max(mx, row[j]);
    double z = 0.0;
    for (std::int64_t j = 0; j < n; ++j) {
      orow[j] = std::exp(row[j] - mx);
      z += orow[j];
    }
    for (std::int64_t j = 0; j < n; ++j) orow[j] /= z;
  }
  finish(out, {&x});
  if (recording(out)) {
    Impl xi = x.impl(), oi = out.impl();
    std::vector<double> y = out.data();
    Tape::active()->record([xi, oi, y, rows, n] {
      if (oi->grad.empty() || !want(xi)) return;
      std::vector<double>& g = gbuf(xi);
      for (std::int64_t r = 0; r < rows; ++r) {
        double dot = 0.0;
        for (std::int64_t j = 0; j < n; ++j)
          dot += oi->grad[static_cast<std::size_t>(r * n + j)] * y[static_cast<std::size_t>(r * n + j)];
        for (std::int64_t j = 0; j < n; ++j)
          g[static_cast<std::size_t>(r * n + j)] +=
              y[static_cast<std::size_t>(r * n + j)] *
              (oi->grad[static_cast<std::size_t>(r * n + j)] - dot);
      }
    });
  }
  return out;
}

Tensor reshape(const Tensor& x, std::vector<std::int64_t> shape) {
  if (shape_numel(shape) != x.numel()) throw std::invalid_argument("reshape: element count mismatch");
  Tensor out = Tensor::from_data(std::move(shape), x.data());
  finish(out, {&x});
  if (recording(out)) {
    Impl xi = x.impl(), oi = out.impl();
    Tape::active()->record([xi, oi] {
      if (oi->grad.empty() || !want(xi)) return;
      accum(gbuf(xi), oi->grad);
    });
  }
  return out;
}

Tensor concat_lastdim(const std::vector<Tensor>& xs) {
  if (xs.empty()) throw std::invalid_argument("concat_lastdim: empty input list");
  std::vector<std::int64_t> lead = xs[0].shape();
  lead.pop_back();
  std::int64_t total = 0;
  for (const Tensor& t : xs) {
    std::vector<std::int64_t> l = t.shape();
    std::int64_t last = l.back();
    l.pop_back();
    if (l != lead) throw std::invalid_argument("concat_lastdim: leading extents differ");
    total += last;
  }
  std::int64_t rows = shape_numel(lead.empty() ? std::vector<std::int64_t>{1} : lead);
  std::vector<std::int64_t> oshape = lead;
  oshape.push_back(total);
  Tensor out(oshape);
  std::int64_t off = 0;
  for (const Tensor& t : xs) {
    std::int64_t n = t.dim(t.rank() - 1);
    for (std::int64_t r = 0; r < rows; ++r)
      for (std::int64_t j = 0; j < n; ++j)
        out.data()[static_cast<std::size_t>(r * total + off + j)] =
            t.data()[static_cast<std::size_t>(r * n + j)];
    off += n;
  }
  bool req = false;
  for (const Tensor& t : xs) req = req || t.requires_grad();
  out.set_requires_grad(req);
  {
    const bool f32 = default_dtype() == Dtype::F32;
    for (double& v : out.data()) {
      if (f32) v = static_cast<double>(static_cast<float>(v));
      if (!std::isfinite(v)) throw std::runtime_error("non-finite value produced by tensor op");
    }
  }
  if (recording(out)) {
    std::vector<Impl> ins;
    std::vector<std::int64_t> widths;
    for (const Tensor& t : xs) {
      ins.push_back(t.impl());
      widths.push_back(t.dim(t.rank() - 1));
    }
    Impl oi = out.impl();
    Tape::active()->record([ins, widths, oi, rows, total] {
      if (oi->grad.empty()) return;
      std::int64_t off2 = 0;
      for (std::size_t i = 0; i < ins.size(); ++i) {
        std::int64_t n = widths[i];
        if (want(ins[i])) {
          std::vector<double>& g = gbuf(ins[i]);
          for (std::int64_t r = 0; r < rows; ++r)
            for (std::int64_t j = 0; j < n; ++j)
              g[static_cast<std::size_t>(r * n + j)] +=
                  oi->grad[static_cast<std::size_t>(r * total + off2 + j)];
        }
        off2 += n;
      }
    });
  }
  return out;
}

Tensor slice_lastdim(const Tensor& x, std::int64_t start, std::int64_t len) {
  std::int64_t n = x.dim(x.rank() - 1);
  if (start < 0 || len <= 0 || start + len > n) throw std::invalid_argument("slice_lastdim: bad range");
  std::int64_t rows = x.numel() / n;
  std::vector<std::int64_t> oshape = x.shape();
  oshape.back() = len;
  Tensor out(oshape);
  for (std::int64_t r = 0; r < rows; ++r)
    for (std::int64_t j = 0; j < len; ++j)
      out.data()[static_cast<std::size_t>(r * len + j)] =
          x.data()[static_cast<std::size_t>(r * n + start + j)];
  finish(out, {&x});
  if (recording(out)) {
    Impl xi = x.impl(), oi = out.impl();
    Tape::active()->record([xi, oi, rows, n, start, len] {
      if (oi->grad.empty() || !want(xi)) return;
      std::vector<double>& g = gbuf(xi);
      for (std::int64_t r = 0; r < rows; ++r)
        for (std::int64_t j = 0; j < len; ++j)
          g[static_cast<std::size_t>(r * n + start + j)] +=
              oi->grad[static_cast<std::size_t>(r * len + j)];
    });
  }
  return out;
}

Tensor patchify(const Tensor& x, int p) {
  if (x.rank() != 3) throw std::invalid_argument("patchify: x[h,w,c] required");
  std::int64_t H = x.dim(0), W = x.dim(1), C = x.dim(2);
  if (H % p != 0 || W % p != 0) throw std::invalid_argument("patchify: extents not divisible by patch");
  std::int64_t GH = H / p, GW = W / p;
  Tensor out({GH * GW, static_cast<std::int64_t>(p) * p * C});
  std::int64_t F = static_cast<std::int64_t>(p) * p * C;
  for (std::int64_t gy = 0; gy < GH; ++gy)
    for (std::int64_t gx = 0; gx < GW; ++gx)
      for (std::int64_t py = 0; py < p; ++py)
        for (std::int64_t px = 0; px < p; ++px)
          for (std::int64_t c = 0; c < C; ++c)
            out.data()[static_cast<std::size_t>((gy * GW + gx) * F + (py * p + px) * C + c)] =
                x.data()[static_cast<std::size_t>(((gy * p + py) * W + gx * p + px) * C + c)];
  finish(out, {&x});
  if (recording(out)) {
    Impl xi = x.impl(), oi = out.impl();
    std::int64_t pp = p;
    Tape::active()->record([xi, oi, GH, GW, pp, C, W, F] {
      if (oi->grad.empty() || !want(xi)) return;
      std::vector<double>& g = gbuf(xi);
      for (std::int64_t gy = 0; gy < GH; ++gy)
        for (std::int64_t gx = 0; gx < GW; ++gx)
          for (std::int64_t py = 0; py < pp; ++py)
            for (std::int64_t px = 0; px < pp; ++px)
              for (std::int64_t c = 0; c < C; ++c)
                g[static_cast<std::size_t>(((gy * pp + py) * W + gx * pp + px) * C + c)] +=
                    oi->grad[static_cast<std::size_t>((gy * GW + gx) * F + (py * pp + px) * C + c)];
    });
  }
  return out;
}

Tensor unpatchify(const Tensor& t, std::int64_t out_h, std::int64_t out_w, int p,
                  std::int64_t channels) {
  std::int64_t GH = out_h / p, GW = out_w / p;
  std::int64_t F = static_cast<std::int64_t>(p) * p * channels;
  if (t.rank() != 2 || t.dim(0) != GH * GW || t.dim(1) != F)
    throw std::invalid_argument("unpatchify: token shape mismatch");
  Tensor out({out_h, out_w, channels});
  for (std::int64_t gy = 0; gy < GH; ++gy)
    for (std::int64_t gx = 0; gx < GW; ++gx)
      for (std::int64_t py = 0; py < p; ++py)
        for (std::int64_t px = 0; px < p; ++px)
          for (std::int64_t c = 0; c < channels; ++c)
            out.data()[static_cast<std::size_t>(((gy * p + py) * out_w + gx * p + px) * channels + c)] =
                t.data()[static_cast<std::size_t>((gy * GW + gx) * F + (py * p + px) * channels + c)];
  finish(out, {&t});
  if (recording(out)) {
    Impl ti = t.impl(), oi = out.impl();
    std::int64_t pp = p;
    Tape::active()->record([ti, oi, GH, GW, pp, channels, out_w, F] {
      if (oi->grad.empty() || !want(ti)) return;
      std::vector<double>& g = gbuf(ti);
      for (std::int64_t gy = 0; gy < GH; ++gy)
        for (std::int64_t gx = 0; gx < GW; ++gx)
          for (std::int64_t py = 0; py < pp; ++py)
            for (std::int64_t px = 0; px < pp; ++px)
              for (std::int64_t c = 0; c < channels; ++c)
                g[static_cast<std::size_t>((gy * GW + gx) * F + (py * pp + px) * channels + c)] +=
                    oi->grad[static_cast<std::size_t>(
                        ((gy * pp + py) * out_w + gx * pp + px) * channels + c)];
    });
  }
  return out;
}

Tensor sum(const Tensor& x) {
  double acc = 0.0;
  for (double v : x.data()) acc += v;
  Tensor out = Tensor::from_data({1}, {acc});
  finish(out, {&x});
  if (recording(out)) {
    Impl xi = x.impl(), oi = out.impl();
    Tape::active()->record([xi, oi] {
      if (oi->grad.empty() || !want(xi)) return;
      std::vector<double>& g = gbuf(xi);
      for (double& v : g) v += oi->grad[0];
    });
  }
  return out;
}

Tensor mean_all(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.numel())); }

Tensor abs_val(const Tensor& x) {
  Tensor out(x.shape());
  for (std::int64_t i = 0; i < x.numel(); ++i)
    out.data()[static_cast<std::size_t>(i)] = std::abs(x.data()[static_cast<std::size_t>(i)]);
  finish(out, {&x});
  if (recording(out)) {
    Impl xi = x.impl(), oi = out.impl();
    std::vector<double> saved = x.data();
    Tape::active()->record([xi, oi, saved] {
      if (oi->grad.empty() || !want(xi)) return;
      std::vector<double>& g = gbuf(xi);
      for (std::size_t i = 0; i < g.size(); ++i)
        g[i] += oi->grad[i] * (saved[i] > 0.0 ? 1.0 : (saved[i] < 0.0 ? -1.0 : 0.0));
    });
  }
  return out;
}

Tensor l1_loss(const Tensor& a, const Tensor& b) { return mean_all(abs_val(sub(a, b))); }

Tensor mse_loss(const Tensor& a, const Tensor& b) {
  Tensor d = sub(a, b);
  return mean_all(mul(d, d));
}

}  // namespace ps::ops
