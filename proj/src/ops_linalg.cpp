#include <stdexcept>

#include "ops_common.hpp"
#include "vesselseg/ops.hpp"

namespace vseg::ops {

Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[0])
    throw std::invalid_argument("matmul: incompatible shapes " +
                                shape_str(a.shape()) + " x " +
                                shape_str(b.shape()));
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  bool needs = track(tape, a) || track(tape, b);
  auto out = make_result({m, n}, needs);
  const double* av = a.values().data();
  const double* bv = b.values().data();
  double* ov = out->value.data();
  // ikj: per output element the k-sum still runs in ascending order.
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = av + i * k;
    double* orow = ov + i * n;
    for (std::size_t kk = 0; kk < k; ++kk) {
      const double aik = arow[kk];
      const double* brow = bv + kk * n;
      for (std::size_t j = 0; j < n; ++j) orow[j] += aik * brow[j];
    }
  }
  check_finite(*out, "matmul");
  if (!needs) return Tensor::wrap(out);

  auto an = a.node();
  auto bn = b.node();
  bool ga = track(tape, a);
  bool gb = track(tape, b);
  tape.record([an, bn, out, m, k, n, ga, gb]() {
      if (grad_empty(*out)) return;
    const double* g = out->grad.data();
    if (ga) {
      an->ensure_grad();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t kk = 0; kk < k; ++kk) {
          double acc = 0.0;
          const double* grow = g + i * n;
          const double* brow = bn->value.data() + kk * n;
          for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
          an->grad[i * k + kk] += acc;
        }
    }
    if (gb) {
      bn->ensure_grad();
      for (std::size_t kk = 0; kk < k; ++kk)
        for (std::size_t i = 0; i < m; ++i) {
          const double aik = an->value[i * k + kk];
          const double* grow = g + i * n;
          double* brow = bn->grad.data() + kk * n;
          for (std::size_t j = 0; j < n; ++j) brow[j] += aik * grow[j];
        }
    }
  });
  return Tensor::wrap(out);
}

Tensor conv2d(Tape& tape, const Tensor& x, const Tensor& kernel,
              const std::optional<Tensor>& bias, std::size_t stride,
              std::size_t padding) {
  if (x.rank() != 3 || kernel.rank() != 4)
    throw std::invalid_argument("conv2d: expects x[Cin,H,W], kernel[Cout,Cin,k,k]");
  const std::size_t cin = x.shape()[0], h = x.shape()[1], w = x.shape()[2];
  const std::size_t cout = kernel.shape()[0], kc = kernel.shape()[1],
                    kh = kernel.shape()[2], kw = kernel.shape()[3];
  if (kc != cin || kh != kw)
    throw std::invalid_argument("conv2d: kernel/input channel mismatch");
  if (stride == 0) throw std::invalid_argument("conv2d: stride must be > 0");
  if (h + 2 * padding < kh || w + 2 * padding < kw)
    throw std::invalid_argument("conv2d: kernel larger than padded input");
  if (bias && (bias->rank() != 1 || bias->shape()[0] != cout))
    throw std::invalid_argument("conv2d: bias must be [Cout]");
  const std::size_t oh = (h + 2 * padding - kh) / stride + 1;
  const std::size_t ow = (w + 2 * padding - kw) / stride + 1;

  bool needs = track(tape, x) || track(tape, kernel) ||
               (bias && track(tape, *bias));
  auto out = make_result({cout, oh, ow}, needs);
  const double* xv = x.values().data();
  const double* kv = kernel.values().data();
  const double* bv = bias ? bias->values().data() : nullptr;
  double* ov = out->value.data();
  for (std::size_t co = 0; co < cout; ++co)
    for (std::size_t oy = 0; oy < oh; ++oy)
      for (std::size_t ox = 0; ox < ow; ++ox) {
        double acc = bv ? bv[co] : 0.0;
        for (std::size_t ci = 0; ci < cin; ++ci)
          for (std::size_t u = 0; u < kh; ++u) {
            const std::ptrdiff_t iy =
                (std::ptrdiff_t)(oy * stride + u) - (std::ptrdiff_t)padding;
            if (iy < 0 || iy >= (std::ptrdiff_t)h) continue;
            for (std::size_t v = 0; v < kw; ++v) {
              const std::ptrdiff_t ix =
                  (std::ptrdiff_t)(ox * stride + v) - (std::ptrdiff_t)padding;
              if (ix < 0 || ix >= (std::ptrdiff_t)w) continue;
              acc += xv[(ci * h + iy) * w + ix] *
                     kv[((co * cin + ci) * kh + u) * kw + v];
            }
          }
        ov[(co * oh + oy) * ow + ox] = acc;
      }
  check_finite(*out, "conv2d");
  if (!needs) return Tensor::wrap(out);

  auto xn = x.node();
  auto kn = kernel.node();
  auto bnode = bias ? bias->node() : nullptr;
  bool gx = track(tape, x);
  bool gk = track(tape, kernel);
  bool gb = bias && track(tape, *bias);
  tape.record([=]() {
      if (grad_empty(*out)) return;
    if (gx) xn->ensure_grad();
    if (gk) kn->ensure_grad();
    if (gb) bnode->ensure_grad();
    const double* g = out->grad.data();
    for (std::size_t co = 0; co < cout; ++co)
      for (std::size_t oy = 0; oy < oh; ++oy)
        for (std::size_t ox = 0; ox < ow; ++ox) {
          const double go = g[(co * oh + oy) * ow + ox];
          if (gb) bnode->grad[co] += go;
          for (std::size_t ci = 0; ci < cin; ++ci)
            for (std::size_t u = 0; u < kh; ++u) {
              const std::ptrdiff_t iy =
                  (std::ptrdiff_t)(oy * stride + u) - (std::ptrdiff_t)padding;
              if (iy < 0 || iy >= (std::ptrdiff_t)h) continue;
              for (std::size_t v = 0; v < kw; ++v) {
                const std::ptrdiff_t ix =
                    (std::ptrdiff_t)(ox * stride + v) - (std::ptrdiff_t)padding;
                if (ix < 0 || ix >= (std::ptrdiff_t)w) continue;
                const std::size_t xi = (ci * h + iy) * w + ix;
                const std::size_t wi = ((co * cin + ci) * kh + u) * kw + v;
                if (gx) xn->grad[xi] += go * kn->value[wi];
                if (gk) kn->grad[wi] += go * xn->value[xi];
              }
            }
        }
  });
  return Tensor::wrap(out);
}

Tensor dwconv1d_causal(Tape& tape, const Tensor& x, const Tensor& w,
                       const Tensor& b) {
  if (x.rank() != 3 || w.rank() != 2 || b.rank() != 1)
    throw std::invalid_argument(
        "dwconv1d_causal: expects x[G,T,D], w[D,k], b[D]");
  const std::size_t gs = x.shape()[0], t = x.shape()[1], d = x.shape()[2];
  const std::size_t k = w.shape()[1];
  if (w.shape()[0] != d || b.shape()[0] != d)
    throw std::invalid_argument("dwconv1d_causal: channel mismatch");
  bool needs = track(tape, x) || track(tape, w) || track(tape, b);
  auto out = make_result(x.shape(), needs);
  const double* xv = x.values().data();
  const double* wv = w.values().data();
  const double* bv = b.values().data();
  double* ov = out->value.data();
  // w[d,k-1] multiplies the current step; earlier taps look back in time.
  for (std::size_t g = 0; g < gs; ++g)
    for (std::size_t tt = 0; tt < t; ++tt)
      for (std::size_t dd = 0; dd < d; ++dd) {
        double acc = bv[dd];
        for (std::size_t j = 0; j < k; ++j) {
          const std::ptrdiff_t ti =
              (std::ptrdiff_t)tt - (std::ptrdiff_t)(k - 1) + (std::ptrdiff_t)j;
          if (ti < 0) continue;
          acc += wv[dd * k + j] * xv[(g * t + ti) * d + dd];
        }
        ov[(g * t + tt) * d + dd] = acc;
      }
  check_finite(*out, "dwconv1d_causal");
  if (!needs) return Tensor::wrap(out);

  auto xn = x.node();
  auto wn = w.node();
  auto bn = b.node();
  bool gxf = track(tape, x);
  bool gwf = track(tape, w);
  bool gbf = track(tape, b);
  tape.record([=]() {
      if (grad_empty(*out)) return;
    if (gxf) xn->ensure_grad();
    if (gwf) wn->ensure_grad();
    if (gbf) bn->ensure_grad();
    const double* g = out->grad.data();
    for (std::size_t gg = 0; gg < gs; ++gg)
      for (std::size_t tt = 0; tt < t; ++tt)
        for (std::size_t dd = 0; dd < d; ++dd) {
          const double go = g[(gg * t + tt) * d + dd];
          if (gbf) bn->grad[dd] += go;
          for (std::size_t j = 0; j < k; ++j) {
            const std::ptrdiff_t ti = (std::ptrdiff_t)tt -
                                      (std::ptrdiff_t)(k - 1) +
                                      (std::ptrdiff_t)j;
            if (ti < 0) continue;
            const std::size_t xi = (gg * t + ti) * d + dd;
            if (gxf) xn->grad[xi] += go * wn->value[dd * k + j];
            if (gwf) wn->grad[dd * k + j] += go * xn->value[xi];
          }
        }
  });
  return Tensor::wrap(out);
}

}  // namespace vseg::ops
