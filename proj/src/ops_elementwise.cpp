#include <cmath>
#include <cstring>
#include <stdexcept>

#include "ops_common.hpp"
#include "vesselseg/ops.hpp"

namespace vseg::ops {

namespace {

double sigmoid_val(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  double e = std::exp(x);
  return e / (1.0 + e);
}

double softplus_val(double x) {
  return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

struct UnarySpec {
  const char* name;
  double (*fwd)(double);
  // derivative given (x, y)
  double (*dfd)(double, double);
};

Tensor unary_op(Tape& tape, const Tensor& x, const UnarySpec& spec) {
  auto out = make_result(x.shape(), track(tape, x));
  const double* in = x.values().data();
  double* ov = out->value.data();
  const std::size_t n = out->value.size();
  for (std::size_t i = 0; i < n; ++i) ov[i] = spec.fwd(in[i]);
  check_finite(*out, spec.name);
  if (out->requires_grad) {
    auto xn = x.node();
    tape.record([xn, out, dfd = spec.dfd]() {
      if (grad_empty(*out)) return;
      xn->ensure_grad();
      const std::size_t m = out->value.size();
      for (std::size_t i = 0; i < m; ++i)
        xn->grad[i] += out->grad[i] * dfd(xn->value[i], out->value[i]);
    });
  }
  return Tensor::wrap(out);
}

// Resolves leading-singleton broadcasting. Exactly one operand may tile; its
// flattened buffer repeats `tiles` times over the leading extents.
struct Bcast {
  Shape out;
  bool a_tiles = false;
  bool b_tiles = false;
  std::size_t small_size = 0;
};

bool suffix_of(const Shape& small, const Shape& big) {
  if (small.size() > big.size()) return false;
  std::size_t pad = big.size() - small.size();
  std::size_t i = small.size();
  while (i > 0 && small[i - 1] == big[pad + i - 1]) --i;
  for (std::size_t j = 0; j < i; ++j)
    if (small[j] != 1) return false;
  // All non-matching leading axes of small are 1; remaining big axes free.
  for (std::size_t j = 0; j < i; ++j)
    if (big[pad + j] == 0) return false;
  return true;
}

Bcast resolve_broadcast(const Tensor& a, const Tensor& b, const char* op) {
  Bcast r;
  if (a.shape() == b.shape()) {
    r.out = a.shape();
    r.small_size = a.size();
    return r;
  }
  if (a.size() <= b.size() && suffix_of(a.shape(), b.shape())) {
    r.out = b.shape();
    r.a_tiles = true;
    r.small_size = a.size();
    return r;
  }
  if (b.size() <= a.size() && suffix_of(b.shape(), a.shape())) {
    r.out = a.shape();
    r.b_tiles = true;
    r.small_size = b.size();
    return r;
  }
  throw std::invalid_argument(std::string(op) + ": shapes " +
                              shape_str(a.shape()) + " and " +
                              shape_str(b.shape()) +
                              " are not broadcast-compatible");
}

enum class BinKind { Add, Sub, Mul, Div };

Tensor binary_op(Tape& tape, const Tensor& a, const Tensor& b, BinKind kind,
                 const char* name) {
  Bcast bc = resolve_broadcast(a, b, name);
  bool needs = track(tape, a) || track(tape, b);
  auto out = make_result(bc.out, needs);
  const double* av = a.values().data();
  const double* bv = b.values().data();
  double* ov = out->value.data();
  const std::size_t n = out->value.size();
  const std::size_t sa = bc.a_tiles ? bc.small_size : n;
  const std::size_t sb = bc.b_tiles ? bc.small_size : n;
  switch (kind) {
    case BinKind::Add:
      for (std::size_t i = 0; i < n; ++i) ov[i] = av[i % sa] + bv[i % sb];
      break;
    case BinKind::Sub:
      for (std::size_t i = 0; i < n; ++i) ov[i] = av[i % sa] - bv[i % sb];
      break;
    case BinKind::Mul:
      for (std::size_t i = 0; i < n; ++i) ov[i] = av[i % sa] * bv[i % sb];
      break;
    case BinKind::Div:
      for (std::size_t i = 0; i < n; ++i) ov[i] = av[i % sa] / bv[i % sb];
      break;
  }
  check_finite(*out, name);
  if (!needs) return Tensor::wrap(out);

  auto an = a.node();
  auto bn = b.node();
  bool ga = track(tape, a);
  bool gb = track(tape, b);
  tape.record([an, bn, out, kind, sa, sb, ga, gb]() {
      if (grad_empty(*out)) return;
    const std::size_t n2 = out->value.size();
    const double* g = out->grad.data();
    if (ga) {
      an->ensure_grad();
      for (std::size_t i = 0; i < n2; ++i) {
        double d = 0.0;
        switch (kind) {
          case BinKind::Add:
          case BinKind::Sub: d = g[i]; break;
          case BinKind::Mul: d = g[i] * bn->value[i % sb]; break;
          case BinKind::Div: d = g[i] / bn->value[i % sb]; break;
        }
        an->grad[i % sa] += d;
      }
    }
    if (gb) {
      bn->ensure_grad();
      for (std::size_t i = 0; i < n2; ++i) {
        double d = 0.0;
        switch (kind) {
          case BinKind::Add: d = g[i]; break;
          case BinKind::Sub: d = -g[i]; break;
          case BinKind::Mul: d = g[i] * an->value[i % sa]; break;
          case BinKind::Div: {
            double bvv = bn->value[i % sb];
            d = -g[i] * an->value[i % sa] / (bvv * bvv);
            break;
          }
        }
        bn->grad[i % sb] += d;
      }
    }
  });
  return Tensor::wrap(out);
}

}  // namespace

Tensor add(Tape& tape, const Tensor& a, const Tensor& b) {
  return binary_op(tape, a, b, BinKind::Add, "add");
}
Tensor sub(Tape& tape, const Tensor& a, const Tensor& b) {
  return binary_op(tape, a, b, BinKind::Sub, "sub");
}
Tensor mul(Tape& tape, const Tensor& a, const Tensor& b) {
  return binary_op(tape, a, b, BinKind::Mul, "mul");
}
Tensor div(Tape& tape, const Tensor& a, const Tensor& b) {
  return binary_op(tape, a, b, BinKind::Div, "div");
}

Tensor scale(Tape& tape, const Tensor& x, double factor) {
  auto out = make_result(x.shape(), track(tape, x));
  const double* in = x.values().data();
  double* ov = out->value.data();
  for (std::size_t i = 0; i < out->value.size(); ++i) ov[i] = in[i] * factor;
  check_finite(*out, "scale");
  if (out->requires_grad) {
    auto xn = x.node();
    tape.record([xn, out, factor]() {
      if (grad_empty(*out)) return;
      xn->ensure_grad();
      for (std::size_t i = 0; i < out->value.size(); ++i)
        xn->grad[i] += out->grad[i] * factor;
    });
  }
  return Tensor::wrap(out);
}

Tensor add_const(Tape& tape, const Tensor& x, double shift) {
  auto out = make_result(x.shape(), track(tape, x));
  const double* in = x.values().data();
  double* ov = out->value.data();
  for (std::size_t i = 0; i < out->value.size(); ++i) ov[i] = in[i] + shift;
  check_finite(*out, "add_const");
  if (out->requires_grad) {
    auto xn = x.node();
    tape.record([xn, out]() {
      if (grad_empty(*out)) return;
      xn->ensure_grad();
      for (std::size_t i = 0; i < out->value.size(); ++i)
        xn->grad[i] += out->grad[i];
    });
  }
  return Tensor::wrap(out);
}

Tensor neg(Tape& tape, const Tensor& x) { return scale(tape, x, -1.0); }

Tensor tanh(Tape& tape, const Tensor& x) {
  static const UnarySpec spec{
      "tanh", [](double v) { return std::tanh(v); },
      [](double, double y) { return 1.0 - y * y; }};
  return unary_op(tape, x, spec);
}

Tensor sigmoid(Tape& tape, const Tensor& x) {
  static const UnarySpec spec{
      "sigmoid", [](double v) { return sigmoid_val(v); },
      [](double, double y) { return y * (1.0 - y); }};
  return unary_op(tape, x, spec);
}

Tensor softplus(Tape& tape, const Tensor& x) {
  static const UnarySpec spec{
      "softplus", [](double v) { return softplus_val(v); },
      [](double v, double) { return sigmoid_val(v); }};
  return unary_op(tape, x, spec);
}

Tensor silu(Tape& tape, const Tensor& x) {
  static const UnarySpec spec{
      "silu", [](double v) { return v * sigmoid_val(v); },
      [](double v, double) {
        double s = sigmoid_val(v);
        return s * (1.0 + v * (1.0 - s));
      }};
  return unary_op(tape, x, spec);
}

Tensor exp(Tape& tape, const Tensor& x) {
  static const UnarySpec spec{"exp", [](double v) { return std::exp(v); },
                              [](double, double y) { return y; }};
  return unary_op(tape, x, spec);
}

Tensor relu(Tape& tape, const Tensor& x) {
  static const UnarySpec spec{
      "relu", [](double v) { return v > 0.0 ? v : 0.0; },
      [](double v, double) { return v > 0.0 ? 1.0 : 0.0; }};
  return unary_op(tape, x, spec);
}

}  // namespace vseg::ops
