#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "vesselseg/gradcheck.hpp"
#include "vesselseg/ops.hpp"
#include "vesselseg/rng.hpp"
#include "vesselseg/tensor.hpp"

using namespace vseg;
namespace o = vseg::ops;

namespace {

Tensor randt(Shape shape, Rng& rng, bool rg = false, double lo = -1.0,
             double hi = 1.0) {
  Tensor t = Tensor::zeros(shape, rg);
  for (double& v : t.values_mut()) v = rng.uniform(lo, hi);
  return t;
}

std::vector<double> vec(const Tensor& t) {
  return {t.values().begin(), t.values().end()};
}

}  // namespace

TEST_CASE("shape helpers") {
  CHECK(shape_numel({}) == 1);
  CHECK(shape_numel({3, 4, 5}) == 60);
  CHECK(shape_str({2, 7}) == "[2x7]");
}

TEST_CASE("tensor construction and indexing") {
  Tensor t = Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6});
  CHECK(t.at({0, 2}) == 3);
  CHECK(t.at({1, 0}) == 4);
  CHECK_THROWS(Tensor::from({2, 2}, {1, 2, 3}));
  CHECK_THROWS(t.at({2, 0}));
  CHECK(Tensor::full({3}, 2.5).values()[2] == 2.5);
}

TEST_CASE("backward seeds one and accumulates across tapes") {
  Tensor x = Tensor::from({3}, {1, 2, 3}, true);
  for (int pass = 0; pass < 2; ++pass) {
    Tape tape;
    Tensor y = o::sum_all(tape, o::mul(tape, x, x));
    tape.backward(y);
  }
  // d(sum x^2)/dx = 2x, accumulated twice
  CHECK(x.grad()[0] == 4.0);
  CHECK(x.grad()[2] == 12.0);
  x.zero_grad();
  CHECK(x.grad()[1] == 0.0);
}

TEST_CASE("backward guards") {
  Tensor x = Tensor::from({2}, {1, 2}, true);
  Tape tape;
  Tensor y = o::mul(tape, x, x);
  CHECK_THROWS(tape.backward(y));  // not scalar
  Tensor s = o::sum_all(tape, y);
  tape.backward(s);
  CHECK_THROWS(tape.backward(s));  // consumed
}

TEST_CASE("no-grad guard suppresses recording") {
  Tensor x = Tensor::from({2}, {1, 2}, true);
  Tape tape;
  {
    NoGradGuard ng(tape);
    Tensor y = o::mul(tape, x, x);
    CHECK(tape.num_records() == 0);
    CHECK(!y.requires_grad());
  }
  CHECK(tape.recording());
}

TEST_CASE("binary elementwise and leading broadcast") {
  Tape tape;
  Tensor a = Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6}, true);
  Tensor b = Tensor::from({3}, {10, 20, 30}, true);
  Tensor c = o::add(tape, a, b);
  CHECK(c.at({0, 0}) == 11);
  CHECK(c.at({1, 2}) == 36);
  Tensor s = o::sum_all(tape, o::mul(tape, c, c));
  tape.backward(s);
  // d/db_j = sum_i 2*(a_ij + b_j)
  CHECK(b.grad()[0] == 2 * (11 + 14));
  CHECK(b.grad()[2] == 2 * (33 + 36));
  CHECK(a.grad()[5] == 2 * 36);

  Tape t2;
  CHECK_THROWS(o::add(t2, Tensor::zeros({2, 3}), Tensor::zeros({3, 2})));
  // only leading singleton axes broadcast
  CHECK_THROWS(o::add(t2, Tensor::zeros({2, 1, 4}), Tensor::zeros({2, 3, 4})));
  CHECK_NOTHROW(o::add(t2, Tensor::zeros({1, 3, 4}), Tensor::zeros({2, 3, 4})));
  // scalar [1] broadcasts everywhere
  Tensor k = Tensor::full({1}, 5.0);
  Tensor m = o::add(t2, Tensor::zeros({2, 2}), k);
  CHECK(m.at({1, 1}) == 5.0);
}

TEST_CASE("non-finite results are rejected") {
  Tape tape;
  Tensor a = Tensor::from({1}, {1.0});
  Tensor z = Tensor::from({1}, {0.0});
  CHECK_THROWS_AS(o::div(tape, a, z), std::runtime_error);
  CHECK_THROWS_AS(o::exp(tape, Tensor::from({1}, {1000.0})),
                  std::runtime_error);
}

TEST_CASE("unary values match reference formulas") {
  Tape tape;
  std::vector<double> xs = {-3.0, -0.7, 0.0, 0.4, 2.5};
  Tensor x = Tensor::from({5}, xs);
  auto near = [](double a, double b) { return doctest::Approx(b).epsilon(1e-14); };
  (void)near;
  Tensor th = o::tanh(tape, x);
  Tensor sg = o::sigmoid(tape, x);
  Tensor sp = o::softplus(tape, x);
  Tensor si = o::silu(tape, x);
  for (int i = 0; i < 5; ++i) {
    double v = xs[i];
    CHECK(th.values()[i] == doctest::Approx(std::tanh(v)).epsilon(1e-15));
    CHECK(sg.values()[i] ==
          doctest::Approx(1.0 / (1.0 + std::exp(-v))).epsilon(1e-14));
    CHECK(sp.values()[i] ==
          doctest::Approx(std::log(1.0 + std::exp(v))).epsilon(1e-14));
    CHECK(si.values()[i] ==
          doctest::Approx(v / (1.0 + std::exp(-v))).epsilon(1e-14));
  }
  // stability at large magnitude
  CHECK(o::softplus(tape, Tensor::from({1}, {800.0})).scalar() == 800.0);
  CHECK(o::softplus(tape, Tensor::from({1}, {-800.0})).scalar() == 0.0);
  CHECK(o::relu(tape, Tensor::from({2}, {-2.0, 3.0})).values()[0] == 0.0);
}

TEST_CASE("elementwise gradients against finite differences") {
  Rng rng(11);
  Tensor a = randt({4, 3}, rng, true, 0.2, 1.5);
  Tensor b = randt({4, 3}, rng, true, 0.2, 1.5);
  Tensor c = randt({3}, rng, true, 0.2, 1.5);
  auto fn = [&](Tape& t) {
    Tensor u = o::div(t, o::mul(t, a, b), o::add(t, b, c));
    Tensor v = o::silu(t, o::tanh(t, u));
    Tensor w = o::softplus(t, o::sub(t, v, o::sigmoid(t, a)));
    return o::sum_all(t, o::mul(t, w, w));
  };
  auto rep = grad_check({a, b, c}, fn, 6, 1e-5, 77);
  CHECK(rep.max_rel_err < 1e-7);
}

TEST_CASE("matmul equals the naive triple loop bitwise") {
  Rng rng(5);
  const std::size_t m = 5, k = 7, n = 3;
  Tensor a = randt({m, k}, rng);
  Tensor b = randt({k, n}, rng);
  Tape tape;
  Tensor c = o::matmul(tape, a, b);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t kk = 0; kk < k; ++kk)
        acc += a.values()[i * k + kk] * b.values()[kk * n + j];
      CHECK(c.values()[i * n + j] == acc);
    }
  CHECK_THROWS(o::matmul(tape, a, a));
}

TEST_CASE("matmul gradients") {
  Rng rng(6);
  Tensor a = randt({3, 4}, rng, true);
  Tensor b = randt({4, 2}, rng, true);
  auto fn = [&](Tape& t) {
    Tensor c = o::matmul(t, a, b);
    return o::sum_all(t, o::mul(t, c, c));
  };
  auto rep = grad_check({a, b}, fn, 8, 1e-5, 3);
  CHECK(rep.max_rel_err < 1e-8);
}

TEST_CASE("conv2d equals the naive quadruple loop bitwise") {
  Rng rng(7);
  const std::size_t cin = 2, h = 5, w = 6, cout = 3, kk = 3;
  const std::size_t stride = 2, pad = 1;
  Tensor x = randt({cin, h, w}, rng);
  Tensor ker = randt({cout, cin, kk, kk}, rng);
  Tensor bias = randt({cout}, rng);
  Tape tape;
  Tensor y = o::conv2d(tape, x, ker, bias, stride, pad);
  const std::size_t oh = (h + 2 * pad - kk) / stride + 1;
  const std::size_t ow = (w + 2 * pad - kk) / stride + 1;
  REQUIRE(y.shape() == Shape{cout, oh, ow});
  for (std::size_t co = 0; co < cout; ++co)
    for (std::size_t oy = 0; oy < oh; ++oy)
      for (std::size_t ox = 0; ox < ow; ++ox) {
        double acc = bias.values()[co];
        for (std::size_t ci = 0; ci < cin; ++ci)
          for (std::size_t u = 0; u < kk; ++u)
            for (std::size_t v = 0; v < kk; ++v) {
              std::ptrdiff_t iy = (std::ptrdiff_t)(oy * stride + u) - (std::ptrdiff_t)pad;
              std::ptrdiff_t ix = (std::ptrdiff_t)(ox * stride + v) - (std::ptrdiff_t)pad;
              if (iy < 0 || iy >= (std::ptrdiff_t)h) continue;
              if (ix < 0 || ix >= (std::ptrdiff_t)w) continue;
              acc += x.values()[(ci * h + iy) * w + ix] *
                     ker.values()[((co * cin + ci) * kk + u) * kk + v];
            }
        CHECK(y.values()[(co * oh + oy) * ow + ox] == acc);
      }
  CHECK_THROWS(o::conv2d(tape, Tensor::zeros({1, 2, 2}),
                         Tensor::zeros({1, 1, 5, 5}), std::nullopt, 1, 0));
}

TEST_CASE("conv2d gradients") {
  Rng rng(8);
  Tensor x = randt({2, 4, 4}, rng, true);
  Tensor ker = randt({2, 2, 3, 3}, rng, true);
  Tensor bias = randt({2}, rng, true);
  auto fn = [&](Tape& t) {
    Tensor y = o::conv2d(t, x, ker, bias, 1, 1);
    return o::sum_all(t, o::mul(t, y, y));
  };
  auto rep = grad_check({x, ker, bias}, fn, 8, 1e-5, 4);
  CHECK(rep.max_rel_err < 1e-7);
}

TEST_CASE("causal depthwise conv looks back only") {
  Rng rng(9);
  const std::size_t G = 2, T = 6, D = 3, K = 4;
  Tensor x = randt({G, T, D}, rng);
  Tensor w = randt({D, K}, rng);
  Tensor b = randt({D}, rng);
  Tape tape;
  Tensor y = o::dwconv1d_causal(tape, x, w, b);
  // reference: w[d,K-1] hits the current step
  for (std::size_t g = 0; g < G; ++g)
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t d = 0; d < D; ++d) {
        double acc = b.values()[d];
        for (std::size_t j = 0; j < K; ++j) {
          std::ptrdiff_t ti = (std::ptrdiff_t)t - (std::ptrdiff_t)(K - 1) + (std::ptrdiff_t)j;
          if (ti < 0) continue;
          acc += w.values()[d * K + j] * x.values()[(g * T + ti) * D + d];
        }
        CHECK(y.values()[(g * T + t) * D + d] == acc);
      }
  // bumping a later step leaves earlier outputs untouched
  Tensor x2 = Tensor::from({G, T, D}, vec(x));
  x2.values_mut()[(0 * T + 4) * D + 1] += 5.0;
  Tensor y2 = o::dwconv1d_causal(tape, x2, w, b);
  for (std::size_t t = 0; t < 4; ++t)
    for (std::size_t d = 0; d < D; ++d)
      CHECK(y2.values()[(0 * T + t) * D + d] == y.values()[(0 * T + t) * D + d]);

  Tensor xg = randt({G, T, D}, rng, true);
  Tensor wg = randt({D, K}, rng, true);
  Tensor bg = randt({D}, rng, true);
  auto fn = [&](Tape& tp) {
    Tensor yy = o::dwconv1d_causal(tp, xg, wg, bg);
    return o::sum_all(tp, o::mul(tp, yy, yy));
  };
  auto rep = grad_check({xg, wg, bg}, fn, 8, 1e-5, 5);
  CHECK(rep.max_rel_err < 1e-7);
}

TEST_CASE("gather forwards values and scatter-adds the adjoint") {
  Tape tape;
  Tensor x = Tensor::from({4}, {10, 20, 30, 40}, true);
  Tensor y = o::gather(tape, x, {3, 0, 3}, {3});
  CHECK(y.values()[0] == 40);
  CHECK(y.values()[2] == 40);
  Tensor s = o::sum_all(tape, o::mul(tape, y, y));
  tape.backward(s);
  CHECK(x.grad()[3] == 2 * 40 + 2 * 40);  // repeated index accumulates
  CHECK(x.grad()[1] == 0);
  CHECK_THROWS(o::gather(tape, x, {4}, {1}));
  CHECK_THROWS(o::gather(tape, x, {0, 1}, {3}));
}

TEST_CASE("concat0 stacks along the first axis") {
  Tape tape;
  Tensor a = Tensor::from({1, 2}, {1, 2}, true);
  Tensor b = Tensor::from({2, 2}, {3, 4, 5, 6}, true);
  Tensor c = o::concat0(tape, {a, b});
  REQUIRE(c.shape() == Shape{3, 2});
  CHECK(c.at({0, 1}) == 2);
  CHECK(c.at({2, 0}) == 5);
  Tensor s = o::sum_all(tape, o::mul(tape, c, c));
  tape.backward(s);
  CHECK(a.grad()[0] == 2);
  CHECK(b.grad()[3] == 12);
  CHECK_THROWS(o::concat0(tape, {a, Tensor::zeros({1, 3})}));
}

TEST_CASE("reshape is a flat copy") {
  Tape tape;
  Tensor x = Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6}, true);
  Tensor y = o::reshape(tape, x, {3, 2});
  CHECK(y.at({2, 1}) == 6);
  CHECK_THROWS(o::reshape(tape, x, {4, 2}));
  Tensor s = o::sum_all(tape, o::mul(tape, y, y));
  tape.backward(s);
  CHECK(x.grad()[4] == 10);
}

TEST_CASE("cumsum running sums and reversed-suffix adjoint") {
  Tape tape;
  Tensor x = Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6}, true);
  Tensor y = o::cumsum(tape, x, 1);
  CHECK(vec(y) == std::vector<double>{1, 3, 6, 4, 9, 15});
  Tensor s = o::sum_all(tape, y);
  tape.backward(s);
  // d sum(cumsum)/dx_i = (n - i) within each row
  CHECK(x.grad()[0] == 3);
  CHECK(x.grad()[1] == 2);
  CHECK(x.grad()[2] == 1);
  CHECK(x.grad()[3] == 3);

  Tape t2;
  Tensor x2 = Tensor::from({2, 2}, {1, 2, 3, 4});
  Tensor y2 = o::cumsum(t2, x2, 0);
  CHECK(vec(y2) == std::vector<double>{1, 2, 4, 6});
}

TEST_CASE("reductions and their gradients") {
  Tape tape;
  Tensor x = Tensor::from({2, 3}, {5, 1, 4, 2, 9, 9}, true);
  CHECK(vec(o::sum_axis(tape, x, 0)) == std::vector<double>{7, 10, 13});
  CHECK(vec(o::sum_axis(tape, x, 1)) == std::vector<double>{10, 20});
  CHECK(vec(o::mean_axis(tape, x, 1)) ==
        std::vector<double>{10.0 / 3, 20.0 / 3});
  Tensor mx = o::max_axis(tape, x, 1);
  CHECK(vec(mx) == std::vector<double>{5, 9});
  Tensor s = o::sum_all(tape, mx);
  tape.backward(s);
  CHECK(x.grad()[0] == 1);   // row 0 winner
  CHECK(x.grad()[4] == 1);   // tie resolves to the first occurrence
  CHECK(x.grad()[5] == 0);

  Rng rng(12);
  Tensor xr = randt({3, 5}, rng, true);
  auto fn = [&](Tape& t) {
    Tensor a = o::mean_axis(t, o::mul(t, xr, xr), 1);
    return o::sum_all(t, a);
  };
  CHECK(grad_check({xr}, fn, 10, 1e-5, 6).max_rel_err < 1e-8);
}

TEST_CASE("layer_norm normalizes the last axis") {
  Rng rng(13);
  Tensor x = randt({4, 6}, rng, true, -2, 2);
  Tape tape;
  Tensor y = o::layer_norm(tape, x);
  for (std::size_t r = 0; r < 4; ++r) {
    double mu = 0, var = 0;
    for (std::size_t i = 0; i < 6; ++i) mu += y.values()[r * 6 + i];
    mu /= 6;
    for (std::size_t i = 0; i < 6; ++i) {
      double d = y.values()[r * 6 + i] - mu;
      var += d * d;
    }
    var /= 6;
    CHECK(mu == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(var == doctest::Approx(1.0).epsilon(1e-4));  // eps shifts it slightly
  }
  auto fn = [&](Tape& t) {
    Tensor z = o::layer_norm(t, x);
    return o::sum_all(t, o::mul(t, z, o::sigmoid(t, z)));
  };
  CHECK(grad_check({x}, fn, 12, 1e-5, 7).max_rel_err < 1e-7);
}

TEST_CASE("bilinear sampling at integer and fractional coords") {
  Tensor f = Tensor::from({1, 2, 3}, {1, 2, 3, 4, 5, 6});
  Tape tape;
  Tensor c = Tensor::from({4, 2}, {0, 0, 1, 2, 0.5, 0.5, 0, 1.5});
  Tensor y = o::bilinear_sample(tape, f, c);
  REQUIRE(y.shape() == Shape{1, 4});
  CHECK(y.values()[0] == 1);  // exact grid hits
  CHECK(y.values()[1] == 6);
  CHECK(y.values()[2] == (1 + 2 + 4 + 5) / 4.0);
  CHECK(y.values()[3] == 2.5);
  // clamped outside coordinates reuse the border pixel
  Tensor c2 = Tensor::from({2, 2}, {-5, 0, 9, 9});
  Tensor y2 = o::bilinear_sample(tape, f, c2);
  CHECK(y2.values()[0] == 1);
  CHECK(y2.values()[1] == 6);
  CHECK_THROWS(o::bilinear_sample(
      tape, f, Tensor::from({1, 2}, {std::nan(""), 0.0})));
}

TEST_CASE("bilinear gradients, zero for clamped coords") {
  Rng rng(14);
  Tensor f = randt({2, 5, 5}, rng, true);
  Tensor c = Tensor::from({3, 2}, {1.3, 2.7, 0.4, 0.9, 3.6, 1.2}, true);
  auto fn = [&](Tape& t) {
    Tensor y = o::bilinear_sample(t, f, c);
    return o::sum_all(t, o::mul(t, y, y));
  };
  CHECK(grad_check({f, c}, fn, 12, 1e-5, 8).max_rel_err < 1e-7);

  Tensor cc = Tensor::from({1, 2}, {-3.0, 2.5}, true);
  Tape tape;
  Tensor y = o::bilinear_sample(tape, f, cc);
  Tensor s = o::sum_all(tape, o::mul(tape, y, y));
  tape.backward(s);
  CHECK(cc.grad()[0] == 0.0);  // row pinned by the clamp
  CHECK(cc.grad()[1] != 0.0);
}

TEST_CASE("fft impulse, inversion, linearity, energy") {
  const std::size_t s = 8;
  Tape tape;
  Tensor imp = Tensor::zeros({2, s, s});
  imp.values_mut()[0] = 1.0;  // real impulse at the origin
  Tensor F = o::fft2(tape, imp, false);
  for (std::size_t i = 0; i < s * s; ++i) {
    CHECK(F.values()[i] == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(F.values()[s * s + i] == doctest::Approx(0.0).epsilon(1e-12));
  }

  Rng rng(15);
  Tensor x = randt({3, 2, s, s}, rng);
  Tensor rt = o::fft2(tape, o::fft2(tape, x, false), true);
  double err = 0;
  for (std::size_t i = 0; i < x.size(); ++i)
    err = std::max(err, std::fabs(rt.values()[i] - x.values()[i]));
  CHECK(err < 1e-12);

  Tensor y = randt({3, 2, s, s}, rng);
  Tensor lhs = o::fft2(tape, o::add(tape, x, y), false);
  Tensor r1 = o::fft2(tape, x, false);
  Tensor r2 = o::fft2(tape, y, false);
  for (std::size_t i = 0; i < lhs.size(); ++i)
    CHECK(lhs.values()[i] ==
          doctest::Approx(r1.values()[i] + r2.values()[i]).epsilon(1e-10));

  // unnormalized forward: sum|X|^2 = s^2 sum|x|^2 per plane
  double ex = 0, eX = 0;
  for (std::size_t i = 0; i < 2 * s * s; ++i) {
    ex += x.values()[i] * x.values()[i];
    eX += r1.values()[i] * r1.values()[i];
  }
  CHECK(eX == doctest::Approx(ex * s * s).epsilon(1e-10));
}

TEST_CASE("fft gradients in both directions") {
  Rng rng(16);
  Tensor x = randt({2, 2, 4, 4}, rng, true);
  auto fn_f = [&](Tape& t) {
    Tensor F = o::fft2(t, x, false);
    return o::sum_all(t, o::mul(t, F, F));
  };
  CHECK(grad_check({x}, fn_f, 10, 1e-5, 9).max_rel_err < 1e-7);
  auto fn_i = [&](Tape& t) {
    Tensor F = o::fft2(t, x, true);
    return o::sum_all(t, o::mul(t, F, F));
  };
  CHECK(grad_check({x}, fn_i, 10, 1e-5, 10).max_rel_err < 1e-7);
  Tape tape;
  CHECK_THROWS(o::fft2(tape, Tensor::zeros({2, 3, 3}), false));
}

namespace {

// Plain per-step reference: every decay factor gets its own exp call.
std::vector<double> scan_reference(const Tensor& u, const Tensor& dt,
                                   const Tensor& b, const Tensor& c,
                                   const Tensor& a_log, const Tensor& d_skip) {
  const std::size_t G = u.shape()[0], T = u.shape()[1], D = u.shape()[2];
  const std::size_t N = b.shape()[2];
  std::vector<double> y(G * T * D);
  for (std::size_t g = 0; g < G; ++g) {
    std::vector<double> h(D * N, 0.0);
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t d = 0; d < D; ++d) {
        const std::size_t td = (g * T + t) * D + d;
        double acc = d_skip.values()[d] * u.values()[td];
        for (std::size_t n = 0; n < N; ++n) {
          const double lam = (double)(n + 1) * std::exp(a_log.values()[d]);
          const double A = std::exp(-dt.values()[td] * lam);
          h[d * N + n] = A * h[d * N + n] +
                         dt.values()[td] * b.values()[(g * T + t) * N + n] *
                             u.values()[td];
          acc += c.values()[(g * T + t) * N + n] * h[d * N + n];
        }
        y[td] = acc;
      }
  }
  return y;
}

}  // namespace

TEST_CASE("selective scan matches the per-step reference") {
  Rng rng(17);
  for (std::size_t T : {5ul, 130ul}) {  // second case spans checkpoint segments
    const std::size_t G = 2, D = 3, N = 4;
    Tensor u = randt({G, T, D}, rng);
    Tensor dt = randt({G, T, D}, rng, false, 0.05, 0.9);
    Tensor b = randt({G, T, N}, rng);
    Tensor c = randt({G, T, N}, rng);
    Tensor a_log = randt({D}, rng, false, -1.0, 0.5);
    Tensor d_skip = randt({D}, rng);
    Tape tape;
    Tensor y = o::ssm_scan(tape, u, dt, b, c, a_log, d_skip);
    auto ref = scan_reference(u, dt, b, c, a_log, d_skip);
    double err = 0;
    for (std::size_t i = 0; i < ref.size(); ++i)
      err = std::max(err, std::fabs(y.values()[i] - ref[i]));
    CHECK(err < 1e-13);
  }
}

TEST_CASE("selective scan gradients across segment boundaries") {
  Rng rng(18);
  const std::size_t G = 2, T = 70, D = 2, N = 3;  // crosses one checkpoint
  Tensor u = randt({G, T, D}, rng, true);
  Tensor dt = randt({G, T, D}, rng, true, 0.05, 0.9);
  Tensor b = randt({G, T, N}, rng, true);
  Tensor c = randt({G, T, N}, rng, true);
  Tensor a_log = randt({D}, rng, true, -1.0, 0.5);
  Tensor d_skip = randt({D}, rng, true);
  auto fn = [&](Tape& t) {
    Tensor y = o::ssm_scan(t, u, dt, b, c, a_log, d_skip);
    return o::sum_all(t, o::mul(t, y, y));
  };
  auto rep = grad_check({u, dt, b, c, a_log, d_skip}, fn, 6, 1e-5, 19);
  CHECK(rep.max_rel_err < 1e-6);
}

TEST_CASE("composite chain gradient") {
  Rng rng(20);
  Tensor a = randt({3, 4}, rng, true);
  Tensor b = randt({4, 5}, rng, true);
  Tensor bias = randt({5}, rng, true);
  auto fn = [&](Tape& t) {
    Tensor m = o::matmul(t, a, b);
    Tensor act = o::silu(t, o::add(t, m, bias));
    Tensor nrm = o::layer_norm(t, act);
    return o::sum_all(t, o::mul(t, nrm, o::sigmoid(t, nrm)));
  };
  CHECK(grad_check({a, b, bias}, fn, 10, 1e-5, 21).max_rel_err < 1e-7);
}

TEST_CASE("small closed-form cases") {
  Tape tape;
  CHECK(o::tanh(tape, Tensor::from({1}, {0.0})).scalar() == 0.0);
  CHECK(o::sigmoid(tape, Tensor::from({1}, {0.0})).scalar() == 0.5);
  {
    // independent scalar evaluation of x*sigmoid(x) at 1
    double ref = 1.0 * (1.0 / (1.0 + std::exp(-1.0)));
    CHECK(o::silu(tape, Tensor::from({1}, {1.0})).scalar() ==
          doctest::Approx(ref).epsilon(1e-15));
  }
  {
    Tensor eye = Tensor::from({2, 2}, {1, 0, 0, 1});
    Tensor a = Tensor::from({2, 2}, {3, 1, 4, 1});
    Tensor p = o::matmul(tape, eye, a);
    for (std::size_t i = 0; i < 4; ++i) CHECK(p.values()[i] == a.values()[i]);
    Tensor s1 = Tensor::from({1, 1}, {3.0});
    Tensor s2 = Tensor::from({1, 1}, {-2.0});
    CHECK(o::matmul(tape, s1, s2).scalar() == -6.0);
  }
  {
    Tensor x = Tensor::from({1, 3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9});
    Tensor k1 = Tensor::from({1, 1, 1, 1}, {1.0});
    Tensor y = o::conv2d(tape, x, k1, std::nullopt, 1, 0);
    for (std::size_t i = 0; i < 9; ++i) CHECK(y.values()[i] == x.values()[i]);
    Tensor big = Tensor::zeros({1, 16, 16});
    Tensor k8 = Tensor::zeros({4, 1, 8, 8});
    CHECK(o::conv2d(tape, big, k8, std::nullopt, 8, 0).shape() ==
          Shape{4, 2, 2});
  }
  {
    Tensor ones = Tensor::from({3}, {1, 1, 1});
    CHECK(vec(o::cumsum(tape, ones, 0)) == std::vector<double>{1, 2, 3});
    Tensor one = Tensor::from({1}, {7.0});
    CHECK(o::cumsum(tape, one, 0).scalar() == 7.0);
  }
  {
    Tensor f = Tensor::from({1, 2, 2}, {0, 1, 2, 3});
    Tensor c = Tensor::from({1, 2}, {0.5, 0.5});
    CHECK(o::bilinear_sample(tape, f, c).scalar() == 1.5);
  }
  {
    Tensor flat = Tensor::zeros({2, 4, 4});
    for (std::size_t i = 0; i < 16; ++i) flat.values_mut()[i] = 2.5;
    Tensor F = o::fft2(tape, flat, false);
    CHECK(F.values()[0] == doctest::Approx(16 * 2.5).epsilon(1e-13));
    for (std::size_t i = 1; i < 32; ++i)
      CHECK(F.values()[i] == doctest::Approx(0.0).epsilon(1e-12));
  }
  {
    Tensor x = Tensor::from({1}, {3.0}, true);
    auto fn = [&](Tape& t) { return o::sum_all(t, o::mul(t, x, x)); };
    auto rep = grad_check({x}, fn, 4, 1e-5, 1);
    CHECK(rep.max_rel_err < 1e-8);
  }
}

TEST_CASE("bilinear continuity across cell boundaries") {
  Rng rng(22);
  Tensor f = randt({1, 4, 4}, rng);
  Tape tape;
  const double d = 1e-7;
  Tensor cl = Tensor::from({1, 2}, {1.0 - d, 2.3});
  Tensor cr = Tensor::from({1, 2}, {1.0 + d, 2.3});
  double vl = o::bilinear_sample(tape, f, cl).scalar();
  double vr = o::bilinear_sample(tape, f, cr).scalar();
  CHECK(std::fabs(vl - vr) < 1e-6);
}

TEST_CASE("conv2d oracle at a larger extent") {
  Rng rng(23);
  Tensor x = randt({4, 16, 16}, rng);
  Tensor k = randt({2, 4, 3, 3}, rng);
  Tape tape;
  Tensor y = o::conv2d(tape, x, k, std::nullopt, 1, 1);
  // spot-check a scattered subset against direct summation
  for (std::size_t probe = 0; probe < 40; ++probe) {
    std::size_t co = rng.below(2), oy = rng.below(16), ox = rng.below(16);
    double acc = 0.0;
    for (std::size_t ci = 0; ci < 4; ++ci)
      for (std::size_t u = 0; u < 3; ++u)
        for (std::size_t v = 0; v < 3; ++v) {
          std::ptrdiff_t iy = (std::ptrdiff_t)(oy + u) - 1;
          std::ptrdiff_t ix = (std::ptrdiff_t)(ox + v) - 1;
          if (iy < 0 || iy >= 16 || ix < 0 || ix >= 16) continue;
          acc += x.values()[(ci * 16 + iy) * 16 + ix] *
                 k.values()[((co * 4 + ci) * 3 + u) * 3 + v];
        }
    CHECK(y.values()[(co * 16 + oy) * 16 + ox] == acc);
  }
}
