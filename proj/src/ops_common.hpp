#pragma once

#include <cmath>
#include <memory>
#include <stdexcept>
#include <string>

#include "vesselseg/tensor.hpp"

namespace vseg::ops {

using detail::Node;
using NodePtr = std::shared_ptr<detail::Node>;

inline NodePtr make_result(Shape shape, bool requires_grad) {
  auto node = std::make_shared<Node>();
  node->value.assign(shape_numel(shape), 0.0);
  node->shape = std::move(shape);
  node->requires_grad = requires_grad;
  return node;
}

inline void check_finite(const Node& node, const char* op) {
  for (double v : node.value) {
    if (!std::isfinite(v))
      throw std::runtime_error(std::string(op) +
                               ": produced a non-finite value");
  }
}

// True when no adjoint reached this node, i.e. nothing to propagate.
inline bool grad_empty(const Node& node) { return node.grad.empty(); }

inline bool track(const Tape& tape, const Tensor& t) {
  return tape.recording() && t.requires_grad();
}

inline void accumulate(Node& node, const double* g, std::size_t n) {
  node.ensure_grad();
  double* dst = node.grad.data();
  for (std::size_t i = 0; i < n; ++i) dst[i] += g[i];
}

}  // namespace vseg::ops
