#include <cmath>
#include <memory>
#include <stdexcept>

#include "ops_common.hpp"
#include "vesselseg/ops.hpp"

namespace vseg::ops {

namespace {

struct AxisSplit {
  std::size_t outer = 1, n = 1, inner = 1;
};

AxisSplit split_axis(const Shape& shape, std::size_t axis, const char* op) {
  if (axis >= shape.size())
    throw std::invalid_argument(std::string(op) + ": axis out of range for " +
                                shape_str(shape));
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.n = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

Shape drop_axis(const Shape& shape, std::size_t axis) {
  Shape out;
  for (std::size_t i = 0; i < shape.size(); ++i)
    if (i != axis) out.push_back(shape[i]);
  if (out.empty()) out.push_back(1);
  return out;
}

}  // namespace

Tensor cumsum(Tape& tape, const Tensor& x, std::size_t axis) {
  AxisSplit s = split_axis(x.shape(), axis, "cumsum");
  auto out = make_result(x.shape(), track(tape, x));
  const double* xv = x.values().data();
  double* ov = out->value.data();
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t j = 0; j < s.inner; ++j) {
      double run = 0.0;
      for (std::size_t i = 0; i < s.n; ++i) {
        run += xv[(o * s.n + i) * s.inner + j];
        ov[(o * s.n + i) * s.inner + j] = run;
      }
    }
  check_finite(*out, "cumsum");
  if (out->requires_grad) {
    auto xn = x.node();
    tape.record([xn, out, s]() {
      if (grad_empty(*out)) return;
      xn->ensure_grad();
      const double* g = out->grad.data();
      for (std::size_t o = 0; o < s.outer; ++o)
        for (std::size_t j = 0; j < s.inner; ++j) {
          double run = 0.0;
          for (std::size_t i = s.n; i-- > 0;) {
            run += g[(o * s.n + i) * s.inner + j];
            xn->grad[(o * s.n + i) * s.inner + j] += run;
          }
        }
    });
  }
  return Tensor::wrap(out);
}

Tensor sum_all(Tape& tape, const Tensor& x) {
  auto out = make_result({1}, track(tape, x));
  double acc = 0.0;
  for (double v : x.values()) acc += v;
  out->value[0] = acc;
  check_finite(*out, "sum_all");
  if (out->requires_grad) {
    auto xn = x.node();
    tape.record([xn, out]() {
      if (grad_empty(*out)) return;
      xn->ensure_grad();
      const double g = out->grad[0];
      for (std::size_t i = 0; i < xn->value.size(); ++i) xn->grad[i] += g;
    });
  }
  return Tensor::wrap(out);
}

Tensor sum_axis(Tape& tape, const Tensor& x, std::size_t axis) {
  AxisSplit s = split_axis(x.shape(), axis, "sum_axis");
  auto out = make_result(drop_axis(x.shape(), axis), track(tape, x));
  const double* xv = x.values().data();
  double* ov = out->value.data();
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t i = 0; i < s.n; ++i)
      for (std::size_t j = 0; j < s.inner; ++j)
        ov[o * s.inner + j] += xv[(o * s.n + i) * s.inner + j];
  check_finite(*out, "sum_axis");
  if (out->requires_grad) {
    auto xn = x.node();
    tape.record([xn, out, s]() {
      if (grad_empty(*out)) return;
      xn->ensure_grad();
      const double* g = out->grad.data();
      for (std::size_t o = 0; o < s.outer; ++o)
        for (std::size_t i = 0; i < s.n; ++i)
          for (std::size_t j = 0; j < s.inner; ++j)
            xn->grad[(o * s.n + i) * s.inner + j] += g[o * s.inner + j];
    });
  }
  return Tensor::wrap(out);
}

Tensor mean_axis(Tape& tape, const Tensor& x, std::size_t axis) {
  AxisSplit s = split_axis(x.shape(), axis, "mean_axis");
  auto out = make_result(drop_axis(x.shape(), axis), track(tape, x));
  const double* xv = x.values().data();
  double* ov = out->value.data();
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t i = 0; i < s.n; ++i)
      for (std::size_t j = 0; j < s.inner; ++j)
        ov[o * s.inner + j] += xv[(o * s.n + i) * s.inner + j];
  const double n = (double)s.n;
  for (std::size_t i = 0; i < out->value.size(); ++i) ov[i] /= n;
  check_finite(*out, "mean_axis");
  if (out->requires_grad) {
    auto xn = x.node();
    tape.record([xn, out, s, n]() {
      if (grad_empty(*out)) return;
      xn->ensure_grad();
      const double* g = out->grad.data();
      for (std::size_t o = 0; o < s.outer; ++o)
        for (std::size_t i = 0; i < s.n; ++i)
          for (std::size_t j = 0; j < s.inner; ++j)
            xn->grad[(o * s.n + i) * s.inner + j] += g[o * s.inner + j] / n;
    });
  }
  return Tensor::wrap(out);
}

Tensor max_axis(Tape& tape, const Tensor& x, std::size_t axis) {
  AxisSplit s = split_axis(x.shape(), axis, "max_axis");
  auto out = make_result(drop_axis(x.shape(), axis), track(tape, x));
  const double* xv = x.values().data();
  double* ov = out->value.data();
  // Flat position of the winner per reduced element; ties keep the first.
  auto arg = std::make_shared<std::vector<std::size_t>>(out->value.size());
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t j = 0; j < s.inner; ++j) {
      std::size_t best = (o * s.n + 0) * s.inner + j;
      double bv = xv[best];
      for (std::size_t i = 1; i < s.n; ++i) {
        const std::size_t fi = (o * s.n + i) * s.inner + j;
        if (xv[fi] > bv) {
          bv = xv[fi];
          best = fi;
        }
      }
      ov[o * s.inner + j] = bv;
      (*arg)[o * s.inner + j] = best;
    }
  check_finite(*out, "max_axis");
  if (out->requires_grad) {
    auto xn = x.node();
    tape.record([xn, out, arg]() {
      if (grad_empty(*out)) return;
      xn->ensure_grad();
      for (std::size_t r = 0; r < out->grad.size(); ++r)
        xn->grad[(*arg)[r]] += out->grad[r];
    });
  }
  return Tensor::wrap(out);
}

Tensor layer_norm(Tape& tape, const Tensor& x, double eps) {
  if (x.rank() == 0 || x.shape().empty())
    throw std::invalid_argument("layer_norm: needs rank >= 1");
  const std::size_t n = x.shape().back();
  const std::size_t rows = x.size() / n;
  auto out = make_result(x.shape(), track(tape, x));
  const double* xv = x.values().data();
  double* ov = out->value.data();
  auto inv = std::make_shared<std::vector<double>>(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = xv + r * n;
    double mu = 0.0;
    for (std::size_t i = 0; i < n; ++i) mu += row[i];
    mu /= (double)n;
    double var = 0.0;
    for (std::size_t i = 0; i < n; ++i) var += (row[i] - mu) * (row[i] - mu);
    var /= (double)n;
    const double iv = 1.0 / std::sqrt(var + eps);
    (*inv)[r] = iv;
    for (std::size_t i = 0; i < n; ++i) ov[r * n + i] = (row[i] - mu) * iv;
  }
  check_finite(*out, "layer_norm");
  if (out->requires_grad) {
    auto xn = x.node();
    tape.record([xn, out, inv, n, rows]() {
      if (grad_empty(*out)) return;
      xn->ensure_grad();
      const double* g = out->grad.data();
      const double* y = out->value.data();
      for (std::size_t r = 0; r < rows; ++r) {
        double gmean = 0.0, gymean = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
          gmean += g[r * n + i];
          gymean += g[r * n + i] * y[r * n + i];
        }
        gmean /= (double)n;
        gymean /= (double)n;
        const double iv = (*inv)[r];
        for (std::size_t i = 0; i < n; ++i)
          xn->grad[r * n + i] +=
              iv * (g[r * n + i] - gmean - y[r * n + i] * gymean);
      }
    });
  }
  return Tensor::wrap(out);
}

}  // namespace vseg::ops
