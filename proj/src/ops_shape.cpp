#include <memory>
#include <stdexcept>

#include "ops_common.hpp"
#include "vesselseg/ops.hpp"

namespace vseg::ops {

Tensor gather(Tape& tape, const Tensor& x, std::vector<std::size_t> indices,
              Shape out_shape) {
  if (shape_numel(out_shape) != indices.size())
    throw std::invalid_argument("gather: out_shape does not match index count");
  const std::size_t n = x.size();
  for (std::size_t idx : indices)
    if (idx >= n) throw std::out_of_range("gather: index out of range");
  auto out = make_result(std::move(out_shape), track(tape, x));
  const double* xv = x.values().data();
  double* ov = out->value.data();
  for (std::size_t i = 0; i < indices.size(); ++i) ov[i] = xv[indices[i]];
  if (out->requires_grad) {
    auto xn = x.node();
    auto idx = std::make_shared<std::vector<std::size_t>>(std::move(indices));
    tape.record([xn, out, idx]() {
      if (grad_empty(*out)) return;
      xn->ensure_grad();
      const auto& ix = *idx;
      for (std::size_t i = 0; i < ix.size(); ++i)
        xn->grad[ix[i]] += out->grad[i];
    });
  }
  return Tensor::wrap(out);
}

Tensor concat0(Tape& tape, const std::vector<Tensor>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat0: no inputs");
  const Shape& first = parts[0].shape();
  if (first.empty()) throw std::invalid_argument("concat0: rank-0 input");
  std::size_t total0 = 0;
  bool needs = false;
  for (const Tensor& p : parts) {
    if (p.rank() != first.size())
      throw std::invalid_argument("concat0: rank mismatch");
    for (std::size_t ax = 1; ax < first.size(); ++ax)
      if (p.shape()[ax] != first[ax])
        throw std::invalid_argument("concat0: trailing extents differ");
    total0 += p.shape()[0];
    needs = needs || track(tape, p);
  }
  Shape out_shape = first;
  out_shape[0] = total0;
  auto out = make_result(std::move(out_shape), needs);
  double* ov = out->value.data();
  std::size_t offset = 0;
  for (const Tensor& p : parts) {
    const auto pv = p.values();
    for (std::size_t i = 0; i < pv.size(); ++i) ov[offset + i] = pv[i];
    offset += pv.size();
  }
  if (!needs) return Tensor::wrap(out);

  struct Piece {
    NodePtr node;
    std::size_t offset;
    std::size_t count;
    bool wants;
  };
  auto pieces = std::make_shared<std::vector<Piece>>();
  offset = 0;
  for (const Tensor& p : parts) {
    pieces->push_back({p.node(), offset, p.size(), track(tape, p)});
    offset += p.size();
  }
  tape.record([out, pieces]() {
      if (grad_empty(*out)) return;
    for (const Piece& pc : *pieces) {
      if (!pc.wants) continue;
      accumulate(*pc.node, out->grad.data() + pc.offset, pc.count);
    }
  });
  return Tensor::wrap(out);
}

Tensor transpose2(Tape& tape, const Tensor& x) {
  if (x.rank() != 2) throw std::invalid_argument("transpose2: needs rank 2");
  const std::size_t a = x.shape()[0], b = x.shape()[1];
  auto out = make_result({b, a}, track(tape, x));
  const double* xv = x.values().data();
  double* ov = out->value.data();
  for (std::size_t i = 0; i < a; ++i)
    for (std::size_t j = 0; j < b; ++j) ov[j * a + i] = xv[i * b + j];
  if (out->requires_grad) {
    auto xn = x.node();
    tape.record([xn, out, a, b]() {
      if (grad_empty(*out)) return;
      xn->ensure_grad();
      for (std::size_t i = 0; i < a; ++i)
        for (std::size_t j = 0; j < b; ++j)
          xn->grad[i * b + j] += out->grad[j * a + i];
    });
  }
  return Tensor::wrap(out);
}

Tensor upsample2(Tape& tape, const Tensor& x) {
  if (x.rank() != 3) throw std::invalid_argument("upsample2: needs [C,H,W]");
  const std::size_t C = x.shape()[0], H = x.shape()[1], W = x.shape()[2];
  auto out = make_result({C, 2 * H, 2 * W}, track(tape, x));
  const double* xv = x.values().data();
  double* ov = out->value.data();
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t y = 0; y < 2 * H; ++y)
      for (std::size_t w = 0; w < 2 * W; ++w)
        ov[(c * 2 * H + y) * 2 * W + w] = xv[(c * H + y / 2) * W + w / 2];
  if (out->requires_grad) {
    auto xn = x.node();
    tape.record([xn, out, C, H, W]() {
      if (grad_empty(*out)) return;
      xn->ensure_grad();
      for (std::size_t c = 0; c < C; ++c)
        for (std::size_t y = 0; y < 2 * H; ++y)
          for (std::size_t w = 0; w < 2 * W; ++w)
            xn->grad[(c * H + y / 2) * W + w / 2] +=
                out->grad[(c * 2 * H + y) * 2 * W + w];
    });
  }
  return Tensor::wrap(out);
}

Tensor swapaxes(Tape& tape, const Tensor& x, std::size_t axis) {
  const Shape& in = x.shape();
  if (axis + 1 >= in.size())
    throw std::invalid_argument("swapaxes: axis out of range");
  Shape os = in;
  std::swap(os[axis], os[axis + 1]);
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= in[i];
  for (std::size_t i = axis + 2; i < in.size(); ++i) inner *= in[i];
  const std::size_t A = in[axis], B = in[axis + 1];
  auto out = make_result(os, track(tape, x));
  const double* xv = x.values().data();
  double* ov = out->value.data();
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t a = 0; a < A; ++a)
      for (std::size_t b = 0; b < B; ++b) {
        const double* src = xv + ((o * A + a) * B + b) * inner;
        double* dst = ov + ((o * B + b) * A + a) * inner;
        for (std::size_t i = 0; i < inner; ++i) dst[i] = src[i];
      }
  if (out->requires_grad) {
    auto xn = x.node();
    tape.record([xn, out, outer, A, B, inner]() {
      if (grad_empty(*out)) return;
      xn->ensure_grad();
      for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t a = 0; a < A; ++a)
          for (std::size_t b = 0; b < B; ++b) {
            double* dst = xn->grad.data() + ((o * A + a) * B + b) * inner;
            const double* src =
                out->grad.data() + ((o * B + b) * A + a) * inner;
            for (std::size_t i = 0; i < inner; ++i) dst[i] += src[i];
          }
    });
  }
  return Tensor::wrap(out);
}

Tensor slice_mid(Tape& tape, const Tensor& x, std::size_t t0, std::size_t t1) {
  if (x.rank() != 3) throw std::invalid_argument("slice_mid: needs rank 3");
  const std::size_t G = x.shape()[0], T = x.shape()[1], C = x.shape()[2];
  if (t0 >= t1 || t1 > T)
    throw std::invalid_argument("slice_mid: bad range");
  const std::size_t len = t1 - t0;
  auto out = make_result({G, len, C}, track(tape, x));
  const double* xv = x.values().data();
  double* ov = out->value.data();
  for (std::size_t g = 0; g < G; ++g)
    for (std::size_t t = 0; t < len; ++t)
      for (std::size_t c = 0; c < C; ++c)
        ov[(g * len + t) * C + c] = xv[(g * T + t0 + t) * C + c];
  if (out->requires_grad) {
    auto xn = x.node();
    tape.record([xn, out, G, T, C, t0, len]() {
      if (grad_empty(*out)) return;
      xn->ensure_grad();
      for (std::size_t g = 0; g < G; ++g)
        for (std::size_t t = 0; t < len; ++t)
          for (std::size_t c = 0; c < C; ++c)
            xn->grad[(g * T + t0 + t) * C + c] +=
                out->grad[(g * len + t) * C + c];
    });
  }
  return Tensor::wrap(out);
}

Tensor reverse_mid(Tape& tape, const Tensor& x) {
  if (x.rank() != 3) throw std::invalid_argument("reverse_mid: needs rank 3");
  const std::size_t G = x.shape()[0], T = x.shape()[1], C = x.shape()[2];
  auto out = make_result(x.shape(), track(tape, x));
  const double* xv = x.values().data();
  double* ov = out->value.data();
  for (std::size_t g = 0; g < G; ++g)
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t c = 0; c < C; ++c)
        ov[(g * T + t) * C + c] = xv[(g * T + (T - 1 - t)) * C + c];
  if (out->requires_grad) {
    auto xn = x.node();
    tape.record([xn, out, G, T, C]() {
      if (grad_empty(*out)) return;
      xn->ensure_grad();
      for (std::size_t g = 0; g < G; ++g)
        for (std::size_t t = 0; t < T; ++t)
          for (std::size_t c = 0; c < C; ++c)
            xn->grad[(g * T + (T - 1 - t)) * C + c] +=
                out->grad[(g * T + t) * C + c];
    });
  }
  return Tensor::wrap(out);
}

Tensor slice_last(Tape& tape, const Tensor& x, std::size_t d0, std::size_t d1) {
  if (x.rank() == 0) throw std::invalid_argument("slice_last: needs rank >= 1");
  const std::size_t D = x.shape().back();
  if (d0 >= d1 || d1 > D) throw std::invalid_argument("slice_last: bad range");
  const std::size_t rows = x.size() / D;
  const std::size_t len = d1 - d0;
  Shape out_shape = x.shape();
  out_shape.back() = len;
  auto out = make_result(std::move(out_shape), track(tape, x));
  const double* xv = x.values().data();
  double* ov = out->value.data();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t d = 0; d < len; ++d)
      ov[r * len + d] = xv[r * D + d0 + d];
  if (out->requires_grad) {
    auto xn = x.node();
    tape.record([xn, out, rows, D, d0, len]() {
      if (grad_empty(*out)) return;
      xn->ensure_grad();
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t d = 0; d < len; ++d)
          xn->grad[r * D + d0 + d] += out->grad[r * len + d];
    });
  }
  return Tensor::wrap(out);
}

namespace {

// shared index arithmetic for the cell <-> map permutation
inline std::size_t cell_flat(std::size_t c, std::size_t h, std::size_t w,
                             std::size_t W, std::size_t s, std::size_t gw,
                             std::size_t s2, std::size_t C) {
  (void)W;
  const std::size_t g = (h / s) * gw + (w / s);
  const std::size_t t = (h % s) * s + (w % s);
  return (g * s2 + t) * C + c;
}

}  // namespace

Tensor split_cells(Tape& tape, const Tensor& f, std::size_t s) {
  if (f.rank() != 3) throw std::invalid_argument("split_cells: needs [C,H,W]");
  const std::size_t C = f.shape()[0], H = f.shape()[1], W = f.shape()[2];
  if (s == 0 || H % s != 0 || W % s != 0)
    throw std::invalid_argument("split_cells: cell size must divide extents");
  const std::size_t gw = W / s, s2 = s * s;
  const std::size_t G = (H / s) * gw;
  auto out = make_result({G, s2, C}, track(tape, f));
  const double* fv = f.values().data();
  double* ov = out->value.data();
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t h = 0; h < H; ++h)
      for (std::size_t w = 0; w < W; ++w)
        ov[cell_flat(c, h, w, W, s, gw, s2, C)] = fv[(c * H + h) * W + w];
  if (out->requires_grad) {
    auto fn = f.node();
    tape.record([fn, out, C, H, W, s, gw, s2]() {
      if (grad_empty(*out)) return;
      fn->ensure_grad();
      for (std::size_t c = 0; c < C; ++c)
        for (std::size_t h = 0; h < H; ++h)
          for (std::size_t w = 0; w < W; ++w)
            fn->grad[(c * H + h) * W + w] +=
                out->grad[cell_flat(c, h, w, W, s, gw, s2, C)];
    });
  }
  return Tensor::wrap(out);
}

Tensor merge_cells(Tape& tape, const Tensor& x, std::size_t h, std::size_t w,
                   std::size_t s) {
  if (x.rank() != 3) throw std::invalid_argument("merge_cells: needs [G,s2,C]");
  const std::size_t G = x.shape()[0], s2 = x.shape()[1], C = x.shape()[2];
  if (s == 0 || s2 != s * s || h % s != 0 || w % s != 0 ||
      G != (h / s) * (w / s))
    throw std::invalid_argument("merge_cells: inconsistent geometry");
  const std::size_t gw = w / s;
  auto out = make_result({C, h, w}, track(tape, x));
  const double* xv = x.values().data();
  double* ov = out->value.data();
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t hh = 0; hh < h; ++hh)
      for (std::size_t ww = 0; ww < w; ++ww)
        ov[(c * h + hh) * w + ww] = xv[cell_flat(c, hh, ww, w, s, gw, s2, C)];
  if (out->requires_grad) {
    auto xn = x.node();
    tape.record([xn, out, C, h, w, s, gw, s2]() {
      if (grad_empty(*out)) return;
      xn->ensure_grad();
      for (std::size_t c = 0; c < C; ++c)
        for (std::size_t hh = 0; hh < h; ++hh)
          for (std::size_t ww = 0; ww < w; ++ww)
            xn->grad[cell_flat(c, hh, ww, w, s, gw, s2, C)] +=
                out->grad[(c * h + hh) * w + ww];
    });
  }
  return Tensor::wrap(out);
}

Tensor reshape(Tape& tape, const Tensor& x, Shape out_shape) {
  if (shape_numel(out_shape) != x.size())
    throw std::invalid_argument("reshape: element count mismatch " +
                                shape_str(x.shape()) + " -> " +
                                shape_str(out_shape));
  auto out = make_result(std::move(out_shape), track(tape, x));
  const auto xv = x.values();
  double* ov = out->value.data();
  for (std::size_t i = 0; i < xv.size(); ++i) ov[i] = xv[i];
  if (out->requires_grad) {
    auto xn = x.node();
    tape.record([xn, out]() {
      if (grad_empty(*out)) return;
      accumulate(*xn, out->grad.data(), out->grad.size());
    });
  }
  return Tensor::wrap(out);
}

}  // namespace vseg::ops
