#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "vesselseg/fusion.hpp"
#include "vesselseg/gradcheck.hpp"
#include "vesselseg/ops.hpp"
#include "vesselseg/rng.hpp"

using namespace vseg;
namespace o = vseg::ops;

namespace {

constexpr double kPi = 3.14159265358979323846;

Tensor randt(Shape shape, Rng& rng, bool rg = false, double lo = -1.0,
             double hi = 1.0) {
  Tensor t = Tensor::zeros(shape, rg);
  for (double& v : t.values_mut()) v = rng.uniform(lo, hi);
  return t;
}

double sig(double v) {
  return v >= 0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
}

}  // namespace

TEST_CASE("swapaxes moves one axis pair and inverts itself") {
  Rng rng(70);
  Tensor x = randt({2, 3, 4, 5}, rng, true);
  Tape tape;
  Tensor y = o::swapaxes(tape, x, 1);
  REQUIRE(y.shape() == Shape{2, 4, 3, 5});
  for (std::size_t a = 0; a < 2; ++a)
    for (std::size_t b = 0; b < 3; ++b)
      for (std::size_t c = 0; c < 4; ++c)
        for (std::size_t d = 0; d < 5; ++d)
          CHECK(y.values()[((a * 4 + c) * 3 + b) * 5 + d] ==
                x.values()[((a * 3 + b) * 4 + c) * 5 + d]);
  Tensor back = o::swapaxes(tape, y, 1);
  for (std::size_t i = 0; i < x.size(); ++i)
    CHECK(back.values()[i] == x.values()[i]);
  CHECK_THROWS(o::swapaxes(tape, x, 3));
  auto fn = [&](Tape& t) {
    Tensor m = o::swapaxes(t, x, 2);
    return o::sum_all(t, o::mul(t, m, m));
  };
  CHECK(grad_check({x}, fn, 8, 1e-5, 71).max_rel_err < 1e-7);
}

TEST_CASE("constant window transforms to a lone DC bin") {
  Tensor ws = Tensor::full({1, 4, 1}, 3.0);  // one 2x2 window
  Tape tape;
  Tensor f = window_fft(tape, ws, 2);
  REQUIRE(f.shape() == Shape{1, 4, 2});
  CHECK(f.values()[0] == 12.0);  // slot (0,0), real channel: s^2 * v
  for (std::size_t t = 1; t < 4; ++t) CHECK(f.values()[t * 2] == 0.0);
  for (std::size_t t = 0; t < 4; ++t) CHECK(f.values()[t * 2 + 1] == 0.0);
}

TEST_CASE("window transform matches the plain DFT sum") {
  Rng rng(72);
  const std::size_t s = 2, s2 = 4, C = 2, W = 2;
  Tensor ws = randt({1, W * s2, C}, rng);
  Tape tape;
  Tensor f = window_fft(tape, ws, s);
  REQUIRE(f.shape() == Shape{1, W * s2, 2 * C});
  for (std::size_t w = 0; w < W; ++w)
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t u = 0; u < s; ++u)
        for (std::size_t v = 0; v < s; ++v) {
          double re = 0, im = 0;
          for (std::size_t m = 0; m < s; ++m)
            for (std::size_t n = 0; n < s; ++n) {
              const double x = ws.values()[(w * s2 + m * s + n) * C + c];
              const double ang = -2.0 * kPi *
                                 ((double)(u * m) / s + (double)(v * n) / s);
              re += x * std::cos(ang);
              im += x * std::sin(ang);
            }
          const std::size_t t = w * s2 + u * s + v;
          CHECK(std::fabs(f.values()[t * 2 * C + c] - re) <= 1e-9);
          CHECK(std::fabs(f.values()[t * 2 * C + C + c] - im) <= 1e-9);
        }
}

TEST_CASE("spectra of real windows are Hermitian") {
  Rng rng(73);
  const std::size_t s = 4, s2 = 16, C = 1;
  Tensor ws = randt({1, s2, C}, rng);
  Tape tape;
  Tensor f = window_fft(tape, ws, s);
  for (std::size_t u = 0; u < s; ++u)
    for (std::size_t v = 0; v < s; ++v) {
      const std::size_t t = u * s + v;
      const std::size_t tc = ((s - u) % s) * s + (s - v) % s;
      CHECK(f.values()[t * 2] == doctest::Approx(f.values()[tc * 2])
                                     .epsilon(1e-12));
      CHECK(f.values()[t * 2 + 1] == doctest::Approx(-f.values()[tc * 2 + 1])
                                         .epsilon(1e-12));
    }
}

TEST_CASE("window transform round trip and residue") {
  Rng rng(74);
  Tensor ws = randt({2, 2 * 16, 3}, rng);
  Tape tape;
  Tensor f = window_fft(tape, ws, 4);
  double residue = -1.0;
  Tensor back = window_ifft(tape, f, 4, &residue);
  REQUIRE(back.shape() == ws.shape());
  for (std::size_t i = 0; i < ws.size(); ++i)
    CHECK(std::fabs(back.values()[i] - ws.values()[i]) <= 1e-6);
  CHECK(residue >= 0.0);
  CHECK(residue <= 1e-10);
  CHECK_THROWS(window_ifft(tape, randt({1, 16, 3}, rng), 4));  // odd channels
  CHECK_THROWS(window_fft(tape, randt({1, 10, 2}, rng), 4));   // partial window
}

TEST_CASE("gradients pass through both transform directions") {
  Rng rng(75);
  Tensor ws = randt({1, 8, 2}, rng, true);
  Tensor scale = randt({1, 8, 4}, rng, true);
  auto fn = [&](Tape& t) {
    Tensor f = window_fft(t, ws, 2);
    Tensor y = window_ifft(t, o::mul(t, f, scale), 2);
    return o::sum_all(t, o::mul(t, y, y));
  };
  CHECK(grad_check({ws, scale}, fn, 12, 1e-5, 76).max_rel_err < 1e-4);
}

TEST_CASE("channel attention follows the squeeze formula") {
  AttentionConfig cfg;
  cfg.reduction = 2;
  Rng rng(77);
  const std::size_t C = 4, s = 3, hidden = 2;
  AttentionParams p = init_attention(C, cfg, rng);
  Tensor patch = randt({C, s, s}, rng);
  Tape tape;
  Tensor out = channel_attention(tape, patch, p, cfg);
  REQUIRE(out.shape() == Shape{C, 1, 1});
  std::vector<double> avg(C, 0), mx(C);
  for (std::size_t c = 0; c < C; ++c) {
    double m = patch.values()[c * 9];
    for (std::size_t i = 0; i < 9; ++i) {
      avg[c] += patch.values()[c * 9 + i];
      m = std::max(m, patch.values()[c * 9 + i]);
    }
    avg[c] /= 9.0;
    mx[c] = m;
  }
  auto mlp = [&](const std::vector<double>& v) {
    std::vector<double> h(hidden, 0), y(C, 0);
    for (std::size_t j = 0; j < hidden; ++j) {
      for (std::size_t i = 0; i < C; ++i)
        h[j] += v[i] * p.ca_w1.values()[i * hidden + j];
      h[j] = std::max(0.0, h[j] + p.ca_b1.values()[j]);
    }
    for (std::size_t i = 0; i < C; ++i) {
      for (std::size_t j = 0; j < hidden; ++j)
        y[i] += h[j] * p.ca_w2.values()[j * C + i];
      y[i] += p.ca_b2.values()[i];
    }
    return y;
  };
  auto ma = mlp(avg), mm = mlp(mx);
  for (std::size_t c = 0; c < C; ++c)
    CHECK(std::fabs(out.values()[c] - sig(ma[c] + mm[c])) <= 1e-12);

  // zero weights and biases sit at the sigmoid midpoint
  AttentionParams z = init_attention(C, cfg, rng);
  std::vector<std::pair<std::string, Tensor>> named;
  list_params(z, "a", named);
  for (auto& [_, t] : named)
    for (double& v : t.values_mut()) v = 0.0;
  Tensor mid = channel_attention(tape, patch, z, cfg);
  for (double v : mid.values()) CHECK(v == 0.5);

  // constant patch: average and max pooling coincide
  Tensor flat = Tensor::full({C, s, s}, 0.7);
  Tensor cc = channel_attention(tape, flat, p, cfg);
  std::vector<double> vv(C, 0.7);
  auto one = mlp(vv);
  for (std::size_t c = 0; c < C; ++c)
    CHECK(std::fabs(cc.values()[c] - sig(2.0 * one[c])) <= 1e-12);

  CHECK_THROWS(init_attention(1, cfg, rng));
}

TEST_CASE("spatial attention follows the stacked-pool conv formula") {
  AttentionConfig cfg;  // 7x7, padding 3
  Rng rng(78);
  const std::size_t C = 3, s = 4;
  AttentionParams p = init_attention(C, AttentionConfig{1, cfg.kernel}, rng);
  Tensor patch = randt({C, s, s}, rng);
  Tape tape;
  Tensor out = spatial_attention(tape, patch, p, cfg);
  REQUIRE(out.shape() == Shape{1, s, s});
  for (double v : out.values()) {
    CHECK(v > 0.0);
    CHECK(v < 1.0);
  }
  std::vector<double> pool(2 * s * s, 0.0);
  for (std::size_t y = 0; y < s; ++y)
    for (std::size_t x = 0; x < s; ++x) {
      double acc = 0, m = patch.values()[y * s + x];
      for (std::size_t c = 0; c < C; ++c) {
        acc += patch.values()[(c * s + y) * s + x];
        m = std::max(m, patch.values()[(c * s + y) * s + x]);
      }
      pool[y * s + x] = acc / (double)C;
      pool[s * s + y * s + x] = m;
    }
  for (std::size_t y = 0; y < s; ++y)
    for (std::size_t x = 0; x < s; ++x) {
      double acc = p.sa_b.values()[0];
      for (std::size_t ci = 0; ci < 2; ++ci)
        for (std::size_t u = 0; u < 7; ++u)
          for (std::size_t v = 0; v < 7; ++v) {
            const std::ptrdiff_t yy = (std::ptrdiff_t)y + (std::ptrdiff_t)u - 3;
            const std::ptrdiff_t xx = (std::ptrdiff_t)x + (std::ptrdiff_t)v - 3;
            if (yy < 0 || xx < 0 || yy >= (std::ptrdiff_t)s ||
                xx >= (std::ptrdiff_t)s)
              continue;
            acc += p.sa_w.values()[(ci * 7 + u) * 7 + v] *
                   pool[ci * s * s + (std::size_t)yy * s + (std::size_t)xx];
          }
      CHECK(std::fabs(out.values()[y * s + x] - sig(acc)) <= 1e-12);
    }

  AttentionParams z = init_attention(C, AttentionConfig{1, 7}, rng);
  for (double& v : z.sa_w.values_mut()) v = 0.0;
  Tensor mid = spatial_attention(tape, patch, z, cfg);
  for (double v : mid.values()) CHECK(v == 0.5);
}

TEST_CASE("attention map assembles the per-patch products") {
  AttentionConfig cfg;
  Rng rng(79);
  const std::size_t C = 4, H = 4, W = 8, s = 4;
  AttentionParams p = init_attention(C, cfg, rng);
  Tensor f = randt({C, H, W}, rng);
  Tape tape;
  Tensor map = attention_map(tape, f, p, cfg, s);
  REQUIRE(map.shape() == Shape{C, H, W});
  for (std::size_t g = 0; g < 2; ++g) {
    Tensor patch = Tensor::zeros({C, s, s});
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t y = 0; y < s; ++y)
        for (std::size_t x = 0; x < s; ++x)
          patch.values_mut()[(c * s + y) * s + x] =
              f.values()[(c * H + y) * W + g * s + x];
    Tensor ca = channel_attention(tape, patch, p, cfg);
    Tensor sa = spatial_attention(tape, patch, p, cfg);
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t y = 0; y < s; ++y)
        for (std::size_t x = 0; x < s; ++x)
          CHECK(map.values()[(c * H + y) * W + g * s + x] ==
                ca.values()[c] * sa.values()[y * s + x]);
  }
}

TEST_CASE("fusion interpolates between the branches") {
  AttentionConfig cfg;
  Rng rng(80);
  const std::size_t C = 4, H = 8, W = 8, s = 4;
  AttentionParams p = init_attention(C, cfg, rng);
  Tensor spa = randt({C, H, W}, rng);
  Tensor fre = randt({C, H, W}, rng);
  Tape tape;
  Tensor out = fuse(tape, spa, fre, p, cfg, s);
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double lo = std::min(spa.values()[i], fre.values()[i]);
    const double hi = std::max(spa.values()[i], fre.values()[i]);
    CHECK(out.values()[i] >= lo - 1e-15);
    CHECK(out.values()[i] <= hi + 1e-15);
  }
  // identical branches pass through
  Tensor same = fuse(tape, spa, spa, p, cfg, s);
  for (std::size_t i = 0; i < same.size(); ++i)
    CHECK(std::fabs(same.values()[i] - spa.values()[i]) <= 1e-12);
  CHECK_THROWS(fuse(tape, spa, randt({C, H, 4}, rng), p, cfg, s));
}

TEST_CASE("saturated attention selects one branch") {
  AttentionConfig cfg;
  Rng rng(81);
  const std::size_t C = 4, H = 4, W = 4, s = 2;
  Tensor spa = randt({C, H, W}, rng);
  Tensor fre = randt({C, H, W}, rng);
  AttentionParams p = init_attention(C, cfg, rng);
  for (double& v : p.ca_b2.values_mut()) v = 40.0;  // sigmoid pins to 1
  p.sa_b.values_mut()[0] = 40.0;
  Tape tape;
  Tensor keep = fuse(tape, spa, fre, p, cfg, s);
  for (std::size_t i = 0; i < keep.size(); ++i)
    CHECK(std::fabs(keep.values()[i] - spa.values()[i]) <= 1e-12);
  for (double& v : p.ca_b2.values_mut()) v = -40.0;  // and to 0
  Tensor swap = fuse(tape, spa, fre, p, cfg, s);
  for (std::size_t i = 0; i < swap.size(); ++i)
    CHECK(std::fabs(swap.values()[i] - fre.values()[i]) <= 1e-12);
}

TEST_CASE("fusion gradients agree with finite differences") {
  AttentionConfig cfg;
  Rng rng(82);
  const std::size_t C = 4, H = 4, W = 4, s = 2;
  AttentionParams p = init_attention(C, cfg, rng);
  Tensor spa = randt({C, H, W}, rng, true);
  Tensor fre = randt({C, H, W}, rng, true);
  std::vector<std::pair<std::string, Tensor>> named;
  list_params(p, "f", named);
  std::vector<Tensor> leaves{spa, fre};
  for (auto& [_, t] : named) leaves.push_back(t);
  auto fn = [&](Tape& t) {
    Tensor y = fuse(t, spa, fre, p, cfg, s);
    return o::sum_all(t, o::mul(t, y, y));
  };
  auto rep = grad_check(leaves, fn, 6, 1e-5, 83);
  INFO(rep.worst);
  CHECK(rep.max_rel_err < 1e-4);
}
