#include <cmath>
#include <cstdio>
#include <vector>

#include "doctest.h"
#include "pansharp/nn.hpp"
#include "pansharp/ops.hpp"
#include "pansharp/pstf.hpp"
#include "pansharp/tensor.hpp"

using namespace ps;

namespace {

// Independent triple-loop product oracle.
std::vector<double> matmul_oracle(const std::vector<double>& a, const std::vector<double>& b,
                                  int m, int k, int n) {
  std::vector<double> c(static_cast<std::size_t>(m * n), 0.0);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j)
      for (int p = 0; p < k; ++p)
        c[static_cast<std::size_t>(i * n + j)] +=
            a[static_cast<std::size_t>(i * k + p)] * b[static_cast<std::size_t>(p * n + j)];
  return c;
}

int reflect101(int i, int n) {
  if (n == 1) return 0;
  while (i < 0 || i >= n) {
    if (i < 0) i = -i;
    if (i >= n) i = 2 * (n - 1) - i;
  }
  return i;
}

// Independent same-size correlation with reflect-101 padding.
std::vector<double> conv_oracle(const std::vector<double>& x, int h, int w, int c,
                                const std::vector<double>& ker, int kh, int kw, int co) {
  std::vector<double> out(static_cast<std::size_t>(h * w * co), 0.0);
  for (int y = 0; y < h; ++y)
    for (int xx = 0; xx < w; ++xx)
      for (int oc = 0; oc < co; ++oc) {
        double acc = 0.0;
        for (int ky = 0; ky < kh; ++ky)
          for (int kx = 0; kx < kw; ++kx)
            for (int ci = 0; ci < c; ++ci) {
              int sy = reflect101(y + ky - kh / 2, h);
              int sx = reflect101(xx + kx - kw / 2, w);
              acc += x[static_cast<std::size_t>((sy * w + sx) * c + ci)] *
                     ker[static_cast<std::size_t>(((ky * kw + kx) * c + ci) * co + oc)];
            }
        out[static_cast<std::size_t>((y * w + xx) * co + oc)] = acc;
      }
  return out;
}

double keys_cubic(double t) {
  const double a = -0.5;
  t = std::fabs(t);
  if (t <= 1.0) return (a + 2) * t * t * t - (a + 3) * t * t + 1;
  if (t < 2.0) return a * t * t * t - 5 * a * t * t + 8 * a * t - 4 * a;
  return 0.0;
}

// Direct bicubic formula evaluation, written independently of the op.
double bicubic_oracle_at(const std::vector<double>& x, int h, int w, int c, int f, int oy, int ox,
                         int ch) {
  double sy = (oy + 0.5) / f - 0.5;
  double sx = (ox + 0.5) / f - 0.5;
  int by = static_cast<int>(std::floor(sy));
  int bx = static_cast<int>(std::floor(sx));
  double acc = 0.0;
  for (int a = -1; a <= 2; ++a)
    for (int b = -1; b <= 2; ++b) {
      double wgt = keys_cubic(sy - (by + a)) * keys_cubic(sx - (bx + b));
      int iy = reflect101(by + a, h);
      int ix = reflect101(bx + b, w);
      acc += wgt * x[static_cast<std::size_t>((iy * w + ix) * c + ch)];
    }
  return acc;
}

Tensor random_tensor(std::vector<std::int64_t> shape, Rng& rng, double lo = -1.0,
                     double hi = 1.0) {
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

}  // namespace

TEST_CASE("matmul basic cases") {
  DtypeGuard fp64(Dtype::F64);
  Tensor a = Tensor::from_data({2, 2}, {1, 2, 3, 4});
  Tensor eye = Tensor::from_data({2, 2}, {1, 0, 0, 1});
  Tensor r = ops::matmul(a, eye);
  CHECK(r.data() == std::vector<double>{1, 2, 3, 4});

  Tensor perm = Tensor::from_data({2, 2}, {0, 1, 1, 0});
  Tensor r2 = ops::matmul(a, perm);
  CHECK(r2.data() == std::vector<double>{2, 1, 4, 3});

  Rng rng(42);
  Tensor x = random_tensor({3, 3}, rng);
  Tensor y = random_tensor({3, 3}, rng);
  Tensor z = ops::matmul(x, y);
  auto expected = matmul_oracle(x.data(), y.data(), 3, 3, 3);
  for (int i = 0; i < 9; ++i)
    CHECK(z.data()[static_cast<std::size_t>(i)] ==
          doctest::Approx(expected[static_cast<std::size_t>(i)]).epsilon(1e-12));

  CHECK_THROWS_AS(ops::matmul(Tensor({2, 3}), Tensor({2, 3})), std::invalid_argument);
}

TEST_CASE("conv2d basic cases") {
  DtypeGuard fp64(Dtype::F64);
  SUBCASE("1x1 identity kernel") {
    Rng rng(1);
    Tensor x = random_tensor({4, 4, 1}, rng);
    Tensor k = Tensor::from_data({1, 1, 1, 1}, {1.0});
    Tensor y = ops::conv2d(x, k);
    CHECK(y.data() == x.data());
  }
  SUBCASE("averaging kernel preserves constants") {
    Tensor x = Tensor::full({5, 5, 1}, 0.7);
    Tensor k = Tensor::full({3, 3, 1, 1}, 1.0 / 9.0);
    Tensor y = ops::conv2d(x, k);
    for (double v : y.data()) CHECK(v == doctest::Approx(0.7).epsilon(1e-12));
  }
  SUBCASE("single-tap shift with reflect padding") {
    Tensor x = Tensor::from_data({2, 2, 1}, {1, 2, 3, 4});
    Tensor k = Tensor::zeros({3, 3, 1, 1});
    k.data()[static_cast<std::size_t>(1 * 3 + 2)] = 1.0;  // center-right tap
    Tensor y = ops::conv2d(x, k);
    CHECK(y.data() == std::vector<double>{2, 1, 4, 3});
  }
  SUBCASE("random kernel matches independent correlation oracle") {
    Rng rng(7);
    Tensor x = random_tensor({5, 6, 3}, rng);
    Tensor k = random_tensor({3, 3, 3, 2}, rng);
    Tensor y = ops::conv2d(x, k);
    auto expected = conv_oracle(x.data(), 5, 6, 3, k.data(), 3, 3, 2);
    for (std::size_t i = 0; i < expected.size(); ++i)
      CHECK(y.data()[i] == doctest::Approx(expected[i]).epsilon(1e-10));
  }
  SUBCASE("even kernel extents rejected") {
    CHECK_THROWS_AS(ops::conv2d(Tensor({4, 4, 1}), Tensor({2, 2, 1, 1})), std::invalid_argument);
  }
}

TEST_CASE("activations") {
  DtypeGuard fp64(Dtype::F64);
  CHECK(ops::gelu(Tensor::scalar(0.0)).value() == 0.0);
  CHECK(ops::sine_act(Tensor::scalar(0.0), 30.0).value() == 0.0);

  // local derivative of sin(w0*x) at 0 is w0
  Tensor x = Tensor::scalar(0.0, true);
  {
    Tape tape;
    Tensor y = ops::sine_act(x, 30.0);
    backward(ops::sum(y));
  }
  CHECK(x.grad()[0] == doctest::Approx(30.0));

  Tensor c = Tensor::full({1, 3}, 2.5);
  Tensor sm = ops::softmax_lastdim(c);
  for (double v : sm.data()) CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
}

TEST_CASE("softmax rows sum to one and layer_norm statistics") {
  DtypeGuard fp64(Dtype::F64);
  Rng rng(11);
  Tensor x = random_tensor({8, 16}, rng, -3.0, 3.0);
  Tensor y = ops::softmax_lastdim(x);
  for (int r = 0; r < 8; ++r) {
    double s = 0.0;
    for (int j = 0; j < 16; ++j) s += y.data()[static_cast<std::size_t>(r * 16 + j)];
    CHECK(s == doctest::Approx(1.0).epsilon(1e-6));
  }

  Tensor gain = Tensor::full({16}, 1.0);
  Tensor bias = Tensor::zeros({16});
  Tensor ln = ops::layer_norm(x, gain, bias, 1e-5);
  for (int r = 0; r < 8; ++r) {
    double mu = 0.0, var = 0.0;
    for (int j = 0; j < 16; ++j) mu += ln.data()[static_cast<std::size_t>(r * 16 + j)];
    mu /= 16.0;
    for (int j = 0; j < 16; ++j) {
      double d = ln.data()[static_cast<std::size_t>(r * 16 + j)] - mu;
      var += d * d;
    }
    var /= 16.0;
    CHECK(std::fabs(mu) < 1e-5);
    CHECK(std::fabs(var - 1.0) < 1e-3);
  }
}

TEST_CASE("attention special cases") {
  DtypeGuard fp64(Dtype::F64);
  SUBCASE("single key-value token is passed through") {
    Rng rng(3);
    Tensor q = random_tensor({3, 4}, rng);
    Tensor kv = random_tensor({1, 4}, rng);
    Tensor out = scaled_dot_attention(q, kv, kv, 2);
    for (int r = 0; r < 3; ++r)
      for (int j = 0; j < 4; ++j)
        CHECK(out.data()[static_cast<std::size_t>(r * 4 + j)] ==
              doctest::Approx(kv.data()[static_cast<std::size_t>(j)]).epsilon(1e-12));
  }
  SUBCASE("identical keys give uniform weights, output is mean of values") {
    Rng rng(4);
    Tensor q = random_tensor({2, 4}, rng);
    Tensor krow = random_tensor({1, 4}, rng);
    Tensor k({3, 4});
    for (int r = 0; r < 3; ++r)
      for (int j = 0; j < 4; ++j)
        k.data()[static_cast<std::size_t>(r * 4 + j)] = krow.data()[static_cast<std::size_t>(j)];
    Tensor v = random_tensor({3, 4}, rng);
    Tensor out = scaled_dot_attention(q, k, v, 2);
    for (int j = 0; j < 4; ++j) {
      double mean = (v.data()[static_cast<std::size_t>(j)] +
                     v.data()[static_cast<std::size_t>(4 + j)] +
                     v.data()[static_cast<std::size_t>(8 + j)]) /
                    3.0;
      CHECK(out.data()[static_cast<std::size_t>(j)] == doctest::Approx(mean).epsilon(1e-12));
      CHECK(out.data()[static_cast<std::size_t>(4 + j)] == doctest::Approx(mean).epsilon(1e-12));
    }
  }
  SUBCASE("two-token toy matches hand softmax of dot products") {
    Tensor q = Tensor::from_data({2, 2}, {1, 0, 0, 1});
    Tensor k = Tensor::from_data({2, 2}, {1, 0, 0, 2});
    Tensor v = Tensor::from_data({2, 2}, {1, 2, 3, 4});
    Tensor out = scaled_dot_attention(q, k, v, 1);
    double sc = 1.0 / std::sqrt(2.0);
    // row 0 scores: (1*1, 0) -> softmax(sc, 0)
    double e0 = std::exp(sc * 1.0), e1 = std::exp(0.0);
    double w0 = e0 / (e0 + e1), w1 = e1 / (e0 + e1);
    CHECK(out.data()[0] == doctest::Approx(w0 * 1 + w1 * 3).epsilon(1e-12));
    CHECK(out.data()[1] == doctest::Approx(w0 * 2 + w1 * 4).epsilon(1e-12));
    // row 1 scores: (0, 2)
    double f0 = std::exp(0.0), f1 = std::exp(sc * 2.0);
    double u0 = f0 / (f0 + f1), u1 = f1 / (f0 + f1);
    CHECK(out.data()[2] == doctest::Approx(u0 * 1 + u1 * 3).epsilon(1e-12));
    CHECK(out.data()[3] == doctest::Approx(u0 * 2 + u1 * 4).epsilon(1e-12));
  }
}

TEST_CASE("bicubic upsampling") {
  DtypeGuard fp64(Dtype::F64);
  SUBCASE("factor 1 is identity") {
    Rng rng(5);
    Tensor x = random_tensor({3, 3, 2}, rng);
    Tensor y = ops::upsample_bicubic(x, 1);
    for (std::size_t i = 0; i < x.data().size(); ++i)
      CHECK(y.data()[i] == doctest::Approx(x.data()[i]).epsilon(1e-12));
  }
  SUBCASE("constant image stays constant at factor 4") {
    Tensor x = Tensor::full({4, 4, 1}, 0.37);
    Tensor y = ops::upsample_bicubic(x, 4);
    CHECK(y.dim(0) == 16);
    for (double v : y.data()) CHECK(v == doctest::Approx(0.37).epsilon(1e-12));
  }
  SUBCASE("2x2 ramp at factor 2 matches direct formula evaluation") {
    Tensor x = Tensor::from_data({2, 2, 1}, {0, 1, 2, 3});
    Tensor y = ops::upsample_bicubic(x, 2);
    for (int oy = 0; oy < 4; ++oy)
      for (int ox = 0; ox < 4; ++ox)
        CHECK(y.data()[static_cast<std::size_t>(oy * 4 + ox)] ==
              doctest::Approx(bicubic_oracle_at(x.data(), 2, 2, 1, 2, oy, ox, 0)).epsilon(1e-12));
  }
}

TEST_CASE("backward basics") {
  DtypeGuard fp64(Dtype::F64);
  Rng rng(6);
  SUBCASE("sum gives all-ones gradient") {
    Tensor x = random_tensor({3, 4}, rng);
    x.set_requires_grad(true);
    {
      Tape tape;
      backward(ops::sum(x));
    }
    for (double g : x.grad()) CHECK(g == 1.0);
  }
  SUBCASE("half squared norm gives identity gradient") {
    Tensor x = random_tensor({5}, rng);
    x.set_requires_grad(true);
    {
      Tape tape;
      backward(ops::scale(ops::sum(ops::mul(x, x)), 0.5));
    }
    for (std::size_t i = 0; i < 5; ++i)
      CHECK(x.grad()[i] == doctest::Approx(x.data()[i]).epsilon(1e-12));
  }
  SUBCASE("non-scalar loss rejected") {
    Tensor x = random_tensor({2, 2}, rng);
    x.set_requires_grad(true);
    Tape tape;
    Tensor y = ops::mul(x, x);
    CHECK_THROWS_AS(backward(y), std::invalid_argument);
  }
}

TEST_CASE("frozen tensors receive no grad storage and keep their values") {
  DtypeGuard fp64(Dtype::F64);
  Rng rng(8);
  Tensor frozen = random_tensor({4, 4}, rng);
  frozen.set_requires_grad(false);
  std::vector<double> before = frozen.data();
  Tensor x = random_tensor({4, 4}, rng);
  x.set_requires_grad(true);
  {
    Tape tape;
    Tensor y = ops::matmul(x, frozen);
    backward(ops::sum(y));
  }
  CHECK_FALSE(frozen.has_grad());
  CHECK(frozen.data() == before);
  CHECK(x.has_grad());
}

TEST_CASE("grad_check on differentiable ops") {
  Rng rng(9);
  SUBCASE("matmul") {
    Tensor a = random_tensor({2, 3}, rng);
    Tensor b = random_tensor({3, 2}, rng);
    double err = grad_check(
        [](const std::vector<Tensor>& in) { return ops::matmul(in[0], in[1]); }, {a, b});
    CHECK(err < 1e-6);
  }
  SUBCASE("layer_norm") {
    Tensor x = random_tensor({3, 6}, rng);
    Tensor g = random_tensor({6}, rng, 0.5, 1.5);
    Tensor b = random_tensor({6}, rng);
    double err = grad_check(
        [](const std::vector<Tensor>& in) { return ops::layer_norm(in[0], in[1], in[2], 1e-5); },
        {x, g, b});
    CHECK(err < 1e-4);
  }
  SUBCASE("multi-head attention toy") {
    Tensor q = random_tensor({3, 4}, rng);
    Tensor k = random_tensor({2, 4}, rng);
    Tensor v = random_tensor({2, 4}, rng);
    double err = grad_check(
        [](const std::vector<Tensor>& in) { return scaled_dot_attention(in[0], in[1], in[2], 2); },
        {q, k, v});
    CHECK(err < 1e-4);
  }
  SUBCASE("conv2d and depthwise") {
    Tensor x = random_tensor({4, 4, 2}, rng);
    Tensor k = random_tensor({3, 3, 2, 3}, rng);
    double err =
        grad_check([](const std::vector<Tensor>& in) { return ops::conv2d(in[0], in[1]); }, {x, k});
    CHECK(err < 1e-4);
    Tensor dk = random_tensor({3, 3, 2}, rng);
    double err2 = grad_check(
        [](const std::vector<Tensor>& in) { return ops::depthwise_conv2d(in[0], in[1]); }, {x, dk});
    CHECK(err2 < 1e-4);
  }
  SUBCASE("bicubic, patchify, concat, slice") {
    Tensor x = random_tensor({3, 3, 2}, rng);
    double err = grad_check(
        [](const std::vector<Tensor>& in) { return ops::upsample_bicubic(in[0], 2); }, {x});
    CHECK(err < 1e-6);
    Tensor img = random_tensor({4, 4, 2}, rng);
    double err2 =
        grad_check([](const std::vector<Tensor>& in) { return ops::patchify(in[0], 2); }, {img});
    CHECK(err2 < 1e-6);
    Tensor a = random_tensor({3, 2}, rng);
    Tensor b = random_tensor({3, 3}, rng);
    double err3 = grad_check(
        [](const std::vector<Tensor>& in) {
          return ops::slice_lastdim(ops::concat_lastdim({in[0], in[1]}), 1, 3);
        },
        {a, b});
    CHECK(err3 < 1e-6);
  }
}

TEST_CASE("determinism under a fixed seed") {
  DtypeGuard fp64(Dtype::F64);
  auto run = [] {
    Rng rng(1234);
    Tensor x = random_tensor({6, 6, 2}, rng);
    Tensor k = random_tensor({3, 3, 2, 4}, rng);
    Tensor y = ops::gelu(ops::conv2d(x, k));
    return y.data();
  };
  CHECK(run() == run());
}

TEST_CASE("PSTF round-trip is bit-exact") {
  Rng rng(12);
  SUBCASE("f64") {
    DtypeGuard fp64(Dtype::F64);
    Tensor t = random_tensor({3, 5, 2}, rng);
    save_pstf("pstf_test_f64.pstf", t, Dtype::F64);
    Tensor r = load_pstf("pstf_test_f64.pstf");
    CHECK(r.shape() == t.shape());
    CHECK(r.data() == t.data());
  }
  SUBCASE("f32") {
    DtypeGuard fp32(Dtype::F32);
    Tensor t(std::vector<std::int64_t>{4, 4});
    for (double& v : t.data()) v = static_cast<double>(static_cast<float>(rng.uniform()));
    save_pstf("pstf_test_f32.pstf", t, Dtype::F32);
    Tensor r = load_pstf("pstf_test_f32.pstf");
    CHECK(r.data() == t.data());
  }
}
