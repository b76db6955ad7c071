#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "vesselseg/gradcheck.hpp"
#include "vesselseg/ops.hpp"
#include "vesselseg/rng.hpp"
#include "vesselseg/tokenizer.hpp"

using namespace vseg;
namespace o = vseg::ops;

namespace {

Tensor randt(Shape shape, Rng& rng, bool rg = false, double lo = -1.0,
             double hi = 1.0) {
  Tensor t = Tensor::zeros(shape, rg);
  for (double& v : t.values_mut()) v = rng.uniform(lo, hi);
  return t;
}

// outward walk: start at the center coordinate, add alpha*offset of every
// slot passed (center slot included on the first step)
std::vector<double> drift_oracle(const std::vector<double>& off, double alpha,
                                 double center) {
  const std::size_t L = off.size();
  const std::size_t c = L / 2;
  std::vector<double> y(L);
  y[c] = center;
  double acc = center;
  acc += alpha * off[c];
  for (std::size_t k = c + 1; k < L; ++k) {
    acc += alpha * off[k];
    y[k] = acc;
  }
  acc = center;
  acc += alpha * off[c];
  for (std::size_t i = 1; i <= c; ++i) {
    acc += alpha * off[c - i];
    y[c - i] = acc;
  }
  return y;
}

}  // namespace

TEST_CASE("anchor grid positions and preconditions") {
  TokenizerConfig cfg;
  auto g = anchor_grid(16, 16, cfg);
  REQUIRE(g.size() == 4);
  CHECK(g[0] == std::array<std::size_t, 2>{0, 0});
  CHECK(g[1] == std::array<std::size_t, 2>{0, 8});
  CHECK(g[2] == std::array<std::size_t, 2>{8, 0});
  CHECK(g[3] == std::array<std::size_t, 2>{8, 8});
  CHECK(anchor_grid(8, 8, cfg).size() == 1);
  CHECK_THROWS(anchor_grid(12, 8, cfg));
  TokenizerConfig even = cfg;
  even.chain_len = 4;
  CHECK_THROWS(anchor_grid(16, 16, even));
}

TEST_CASE("offset predictor: zeros, range, shape") {
  TokenizerConfig cfg;
  Rng rng(31);
  Tensor f = randt({3, 32, 32}, rng);
  Tensor k0 = Tensor::zeros({9, 3, 8, 8}, true);
  Tensor b0 = Tensor::zeros({9}, true);
  Tape tape;
  Tensor off = predict_offsets(tape, f, k0, b0, cfg);
  REQUIRE(off.shape() == Shape{9, 4, 4});
  for (double v : off.values()) CHECK(v == 0.0);

  // saturating pre-activations still land inside the closed unit interval
  Tensor k = randt({9, 3, 8, 8}, rng, true, -3, 3);
  Tensor b = randt({9}, rng, true, -3, 3);
  Tensor off2 = predict_offsets(tape, f, k, b, cfg);
  for (double v : off2.values()) CHECK(std::fabs(v) <= 1.0);
  // moderate ones stay strictly inside
  Tensor ks = randt({9, 3, 8, 8}, rng, true, -0.02, 0.02);
  Tensor off3 = predict_offsets(tape, f, ks, b0, cfg);
  for (double v : off3.values()) {
    CHECK(v > -1.0);
    CHECK(v < 1.0);
  }
  CHECK_THROWS(predict_offsets(tape, f, Tensor::zeros({9, 3, 4, 4}), b0, cfg));
}

TEST_CASE("straight chains at zero offsets") {
  TokenizerConfig cfg;  // L=9 s=8 alpha=2, rows march
  Tape tape;
  Tensor off = Tensor::zeros({9, 3, 3});
  AnchorStrings a = extend_anchors(tape, off, cfg);
  REQUIRE(a.rows.shape() == Shape{9, 9});
  const std::size_t g = 4;  // cell (1,1), center (8,8)
  for (std::size_t l = 0; l < 9; ++l) {
    CHECK(a.rows.values()[l * 9 + g] == 2.0 * (double)l - 8.0 + 8.0);
    CHECK(a.cols.values()[l * 9 + g] == 8.0);
  }
  // marching coordinate advances by exactly alpha each step
  for (std::size_t l = 0; l + 1 < 9; ++l)
    CHECK(a.rows.values()[(l + 1) * 9 + g] - a.rows.values()[l * 9 + g] ==
          2.0);
}

TEST_CASE("constant-offset closed form") {
  TokenizerConfig cfg;
  cfg.chain_len = 9;
  Tape tape;
  Tensor off = Tensor::full({9, 1, 1}, 1.0);  // limit value
  AnchorStrings a = extend_anchors(tape, off, cfg);
  const std::size_t c = 4;
  // one step past the center accumulates two offset slots
  CHECK(a.cols.values()[(c + 1) * 1] == 0.0 + 2.0 * (1.0 + 1.0));
  CHECK(a.cols.values()[(c - 1) * 1] == 0.0 + 2.0 * (1.0 + 1.0));
  CHECK(a.cols.values()[8 * 1] == 2.0 * 5.0);  // center + five slots
}

TEST_CASE("chains match the outward-walk transcription exactly") {
  TokenizerConfig cfg;
  Rng rng(32);
  const std::size_t L = 9, gh = 2, gw = 3, G = gh * gw;
  Tensor off = randt({L, gh, gw}, rng, false, -0.999, 0.999);
  Tape tape;
  AnchorStrings a = extend_anchors(tape, off, cfg);
  for (std::size_t g = 0; g < G; ++g) {
    std::vector<double> d(L);
    for (std::size_t l = 0; l < L; ++l)
      d[l] = off.values()[l * G + g];  // [L,gh,gw] flattens to [L,G]
    const double center_col = (double)(g % gw) * 8.0;
    auto y = drift_oracle(d, cfg.alpha, center_col);
    for (std::size_t l = 0; l < L; ++l)
      CHECK(a.cols.values()[l * G + g] == y[l]);
    // center slot is pinned to the grid regardless of offsets
    CHECK(a.rows.values()[(L / 2) * G + g] == (double)(g / gw) * 8.0);
    CHECK(a.cols.values()[(L / 2) * G + g] == center_col);
  }
}

TEST_CASE("adjacent drift is bounded") {
  // one offset slot per step, except the first step off the center which
  // also carries the center slot's own offset
  TokenizerConfig cfg;
  Rng rng(33);
  Tensor off = randt({9, 4, 4}, rng, false, -0.999, 0.999);
  Tape tape;
  AnchorStrings a = extend_anchors(tape, off, cfg);
  const std::size_t G = 16, c = 4;
  for (std::size_t g = 0; g < G; ++g)
    for (std::size_t l = 0; l + 1 < 9; ++l) {
      const double bound = (l == c || l + 1 == c) ? 2 * cfg.alpha : cfg.alpha;
      CHECK(std::fabs(a.cols.values()[(l + 1) * G + g] -
                      a.cols.values()[l * G + g]) <= bound);
    }
}

TEST_CASE("translating the cell translates the whole chain") {
  TokenizerConfig cfg;
  Rng rng(34);
  // same offsets for every cell -> chains are exact translates
  Tensor off = Tensor::zeros({9, 2, 2});
  for (std::size_t l = 0; l < 9; ++l) {
    double v = rng.uniform(-0.9, 0.9);
    for (std::size_t g = 0; g < 4; ++g) off.values_mut()[l * 4 + g] = v;
  }
  Tape tape;
  AnchorStrings a = extend_anchors(tape, off, cfg);
  for (std::size_t l = 0; l < 9; ++l) {
    // cell 3 = (1,1) vs cell 0 = (0,0): shift (8,8)
    CHECK(a.rows.values()[l * 4 + 3] - a.rows.values()[l * 4 + 0] == 8.0);
    CHECK(a.cols.values()[l * 4 + 3] - a.cols.values()[l * 4 + 0] == 8.0);
  }
}

TEST_CASE("column-marching orientation swaps the axes") {
  TokenizerConfig cfg;
  cfg.along_cols = true;
  Tape tape;
  Tensor off = Tensor::zeros({9, 3, 3});
  AnchorStrings a = extend_anchors(tape, off, cfg);
  const std::size_t g = 4;
  for (std::size_t l = 0; l < 9; ++l) {
    CHECK(a.cols.values()[l * 9 + g] == 2.0 * (double)l);  // 8 + 2(l-4)
    CHECK(a.rows.values()[l * 9 + g] == 8.0);
  }
}

TEST_CASE("sampling locations enumerate window slots row-major") {
  TokenizerConfig cfg;
  cfg.chain_len = 3;
  cfg.cell = 2;
  Tape tape;
  Rng rng(35);
  Tensor off = randt({3, 2, 2}, rng, false, -0.9, 0.9);
  AnchorStrings a = extend_anchors(tape, off, cfg);
  Tensor coords = chain_coords(tape, a, cfg);
  const std::size_t G = 4, L = 3, s = 2;
  REQUIRE(coords.shape() == Shape{G * L * s * s, 2});
  std::size_t p = 0;
  for (std::size_t g = 0; g < G; ++g)
    for (std::size_t l = 0; l < L; ++l)
      for (std::size_t m = 0; m < s; ++m)
        for (std::size_t n = 0; n < s; ++n, ++p) {
          CHECK(coords.values()[2 * p] ==
                a.rows.values()[l * G + g] + (double)m);
          CHECK(coords.values()[2 * p + 1] ==
                a.cols.values()[l * G + g] + (double)n);
        }
}

TEST_CASE("single-window chain on a ramp copies the cell pixels") {
  TokenizerConfig cfg;
  cfg.chain_len = 1;
  cfg.cell = 2;
  Rng rng(36);
  Tensor f = Tensor::zeros({1, 4, 4});
  for (std::size_t i = 0; i < 16; ++i) f.values_mut()[i] = (double)i;
  Tensor k = Tensor::zeros({1, 1, 2, 2}, true);
  Tensor b = Tensor::zeros({1}, true);
  Tape tape;
  auto r = tokenize(tape, f, k, b, cfg);
  REQUIRE(r.tokens.shape() == Shape{4, 4, 1});
  // cell 0 holds the field's top-left 2x2 block
  CHECK(r.tokens.values()[0] == 0.0);
  CHECK(r.tokens.values()[1] == 1.0);
  CHECK(r.tokens.values()[2] == 4.0);
  CHECK(r.tokens.values()[3] == 5.0);
  // cell 3 = rows 2..3, cols 2..3
  CHECK(r.tokens.values()[3 * 4 + 0] == 10.0);
  CHECK(r.tokens.values()[3 * 4 + 3] == 15.0);
}

TEST_CASE("default geometry: 576 tokens per string") {
  TokenizerConfig cfg;
  Rng rng(37);
  Tensor f = randt({2, 16, 16}, rng);
  Tensor k = randt({9, 2, 8, 8}, rng, true);
  Tensor b = randt({9}, rng, true);
  Tape tape;
  auto r = tokenize(tape, f, k, b, cfg);
  CHECK(r.tokens.shape() == Shape{4, 576, 2});
}

TEST_CASE("tokens match a naive clamped resampling loop") {
  TokenizerConfig cfg;  // chains exit the 16x16 field at the borders
  Rng rng(38);
  Tensor f = randt({2, 16, 16}, rng);
  Tensor k = randt({9, 2, 8, 8}, rng, true, -2, 2);
  Tensor b = randt({9}, rng, true, -1, 1);
  Tape tape;
  auto r = tokenize(tape, f, k, b, cfg);
  const std::size_t G = 4, L = 9, s = 8, C = 2, H = 16, W = 16;
  std::size_t p = 0;
  for (std::size_t g = 0; g < G; ++g)
    for (std::size_t l = 0; l < L; ++l)
      for (std::size_t m = 0; m < s; ++m)
        for (std::size_t n = 0; n < s; ++n, ++p) {
          double cy = r.anchors.rows.values()[l * G + g] + (double)m;
          double cx = r.anchors.cols.values()[l * G + g] + (double)n;
          cy = std::min(std::max(cy, 0.0), (double)(H - 1));
          cx = std::min(std::max(cx, 0.0), (double)(W - 1));
          std::size_t y0 = (std::size_t)std::floor(cy);
          std::size_t x0 = (std::size_t)std::floor(cx);
          if (y0 > H - 1) y0 = H - 1;
          if (x0 > W - 1) x0 = W - 1;
          const std::size_t y1 = std::min(y0 + 1, H - 1);
          const std::size_t x1 = std::min(x0 + 1, W - 1);
          const double fy = cy - (double)y0, fx = cx - (double)x0;
          for (std::size_t ch = 0; ch < C; ++ch) {
            const double* pl = f.values().data() + ch * H * W;
            const double want =
                (1 - fy) * (1 - fx) * pl[y0 * W + x0] +
                (1 - fy) * fx * pl[y0 * W + x1] +
                fy * (1 - fx) * pl[y1 * W + x0] + fy * fx * pl[y1 * W + x1];
            const double got =
                r.tokens.values()[(g * L * s * s + l * s * s + m * s + n) * C +
                                  ch];
            CHECK(std::fabs(got - want) <= 1e-12);
          }
        }
}

TEST_CASE("straight chains overlap by cell minus spacing") {
  TokenizerConfig cfg;  // s=8, alpha=2 -> adjacent windows share 6 rows
  Tape tape;
  Tensor off = Tensor::zeros({9, 2, 2});
  AnchorStrings a = extend_anchors(tape, off, cfg);
  const std::size_t G = 4;
  for (std::size_t g = 0; g < G; ++g)
    for (std::size_t l = 0; l + 1 < 9; ++l) {
      const double lo = a.rows.values()[(l + 1) * G + g];
      const double hi = a.rows.values()[l * G + g] + 8.0 - 1.0;
      CHECK(hi - lo + 1.0 == 6.0);  // shared marching-axis rows
    }
}

TEST_CASE("gradients flow from sampled tokens to the offset conv") {
  TokenizerConfig cfg;
  cfg.chain_len = 3;
  cfg.cell = 2;
  Rng rng(39);
  Tensor f = randt({1, 4, 4}, rng, true);
  Tensor k = randt({3, 1, 2, 2}, rng, true);
  Tensor b = randt({3}, rng, true);
  auto fn = [&](Tape& t) {
    auto r = tokenize(t, f, k, b, cfg);
    return o::sum_all(t, o::mul(t, r.tokens, r.tokens));
  };
  auto rep = grad_check({f, k, b}, fn, 10, 1e-5, 40);
  CHECK(rep.max_rel_err < 1e-6);
  // the offset path is live: kernel gradient is not identically zero
  {
    for (const Tensor& leaf : {k, b}) leaf.node()->grad.clear();
    Tape tape;
    auto r = tokenize(tape, f, k, b, cfg);
    Tensor s = o::sum_all(tape, o::mul(tape, r.tokens, r.tokens));
    tape.backward(s);
    double mag = 0;
    for (double v : k.grad()) mag += std::fabs(v);
    CHECK(mag > 0.0);
  }
}
