#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "ops_common.hpp"
#include "vesselseg/ops.hpp"

namespace vseg::ops {

namespace {

struct Corner {
  std::size_t y0, y1, x0, x1;
  double fy, fx;
  bool free_y, free_x;  // false when clamping pinned the coordinate
};

Corner locate(double cy, double cx, std::size_t h, std::size_t w) {
  Corner c;
  c.free_y = cy > 0.0 && cy < (double)(h - 1);
  c.free_x = cx > 0.0 && cx < (double)(w - 1);
  const double py = std::clamp(cy, 0.0, (double)(h - 1));
  const double px = std::clamp(cx, 0.0, (double)(w - 1));
  c.y0 = std::min((std::size_t)std::floor(py), h - 1);
  c.x0 = std::min((std::size_t)std::floor(px), w - 1);
  c.y1 = std::min(c.y0 + 1, h - 1);
  c.x1 = std::min(c.x0 + 1, w - 1);
  c.fy = py - (double)c.y0;
  c.fx = px - (double)c.x0;
  return c;
}

}  // namespace

Tensor bilinear_sample(Tape& tape, const Tensor& field, const Tensor& coords) {
  if (field.rank() != 3)
    throw std::invalid_argument("bilinear_sample: field must be [C,H,W]");
  if (coords.rank() != 2 || coords.shape()[1] != 2)
    throw std::invalid_argument("bilinear_sample: coords must be [P,2]");
  const std::size_t C = field.shape()[0], H = field.shape()[1],
                    W = field.shape()[2];
  if (H == 0 || W == 0)
    throw std::invalid_argument("bilinear_sample: empty field");
  const std::size_t P = coords.shape()[0];
  for (double v : coords.values())
    if (!std::isfinite(v))
      throw std::invalid_argument("bilinear_sample: non-finite coordinate");

  bool needs = track(tape, field) || track(tape, coords);
  auto out = make_result({C, P}, needs);
  const double* fv = field.values().data();
  const double* cv = coords.values().data();
  double* ov = out->value.data();
  for (std::size_t p = 0; p < P; ++p) {
    const Corner c = locate(cv[2 * p], cv[2 * p + 1], H, W);
    const double w00 = (1.0 - c.fy) * (1.0 - c.fx);
    const double w01 = (1.0 - c.fy) * c.fx;
    const double w10 = c.fy * (1.0 - c.fx);
    const double w11 = c.fy * c.fx;
    for (std::size_t ch = 0; ch < C; ++ch) {
      const double* plane = fv + ch * H * W;
      ov[ch * P + p] = w00 * plane[c.y0 * W + c.x0] +
                       w01 * plane[c.y0 * W + c.x1] +
                       w10 * plane[c.y1 * W + c.x0] +
                       w11 * plane[c.y1 * W + c.x1];
    }
  }
  check_finite(*out, "bilinear_sample");
  if (!needs) return Tensor::wrap(out);

  auto fn = field.node();
  auto cn = coords.node();
  bool gf = track(tape, field);
  bool gc = track(tape, coords);
  tape.record([fn, cn, out, C, H, W, P, gf, gc]() {
    if (grad_empty(*out)) return;
    if (gf) fn->ensure_grad();
    if (gc) cn->ensure_grad();
    const double* g = out->grad.data();
    const double* cv = cn->value.data();
    const double* fv = fn->value.data();
    for (std::size_t p = 0; p < P; ++p) {
      const Corner c = locate(cv[2 * p], cv[2 * p + 1], H, W);
      const double w00 = (1.0 - c.fy) * (1.0 - c.fx);
      const double w01 = (1.0 - c.fy) * c.fx;
      const double w10 = c.fy * (1.0 - c.fx);
      const double w11 = c.fy * c.fx;
      double gy = 0.0, gx = 0.0;
      for (std::size_t ch = 0; ch < C; ++ch) {
        const double go = g[ch * P + p];
        if (go == 0.0) continue;
        const std::size_t base = ch * H * W;
        const std::size_t i00 = base + c.y0 * W + c.x0;
        const std::size_t i01 = base + c.y0 * W + c.x1;
        const std::size_t i10 = base + c.y1 * W + c.x0;
        const std::size_t i11 = base + c.y1 * W + c.x1;
        if (gf) {
          fn->grad[i00] += go * w00;
          fn->grad[i01] += go * w01;
          fn->grad[i10] += go * w10;
          fn->grad[i11] += go * w11;
        }
        if (gc) {
          const double f00 = fv[i00], f01 = fv[i01], f10 = fv[i10],
                       f11 = fv[i11];
          gy += go * ((1.0 - c.fx) * (f10 - f00) + c.fx * (f11 - f01));
          gx += go * ((1.0 - c.fy) * (f01 - f00) + c.fy * (f11 - f10));
        }
      }
      if (gc) {
        if (c.free_y) cn->grad[2 * p] += gy;
        if (c.free_x) cn->grad[2 * p + 1] += gx;
      }
    }
  });
  return Tensor::wrap(out);
}

}  // namespace vseg::ops
