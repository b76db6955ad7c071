#include "vesselseg/tensor.hpp"

#include <numeric>
#include <sstream>
#include <stdexcept>

namespace vseg {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

namespace detail {

void Node::ensure_grad() {
  if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
}

}  // namespace detail

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  auto node = std::make_shared<detail::Node>();
  node->value.assign(shape_numel(shape), 0.0);
  node->shape = std::move(shape);
  node->requires_grad = requires_grad;
  return wrap(std::move(node));
}

Tensor Tensor::full(Shape shape, double fill, bool requires_grad) {
  auto node = std::make_shared<detail::Node>();
  node->value.assign(shape_numel(shape), fill);
  node->shape = std::move(shape);
  node->requires_grad = requires_grad;
  return wrap(std::move(node));
}

Tensor Tensor::from(Shape shape, std::vector<double> values,
                    bool requires_grad) {
  if (shape_numel(shape) != values.size())
    throw std::invalid_argument("Tensor::from: " + shape_str(shape) +
                                " does not hold " +
                                std::to_string(values.size()) + " values");
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->value = std::move(values);
  node->requires_grad = requires_grad;
  return wrap(std::move(node));
}

Tensor Tensor::wrap(std::shared_ptr<detail::Node> node) {
  Tensor t;
  t.node_ = std::move(node);
  return t;
}

const Shape& Tensor::shape() const { return node_->shape; }

std::size_t Tensor::size() const { return node_->value.size(); }

bool Tensor::requires_grad() const { return node_->requires_grad; }

std::span<const double> Tensor::values() const { return node_->value; }

std::span<double> Tensor::values_mut() { return node_->value; }

bool Tensor::has_grad() const {
  return node_ && node_->grad.size() == node_->value.size();
}

std::span<const double> Tensor::grad() const {
  if (!has_grad())
    throw std::runtime_error("Tensor::grad: no gradient has been accumulated");
  return node_->grad;
}

void Tensor::zero_grad() {
  if (node_) node_->grad.assign(node_->value.size(), 0.0);
}

double Tensor::scalar() const {
  if (size() != 1)
    throw std::invalid_argument("Tensor::scalar: shape " + shape_str(shape()) +
                                " is not a scalar");
  return node_->value[0];
}

double Tensor::at(std::initializer_list<std::size_t> idx) const {
  const Shape& s = shape();
  if (idx.size() != s.size())
    throw std::invalid_argument("Tensor::at: index rank mismatch");
  std::size_t flat = 0;
  std::size_t axis = 0;
  for (std::size_t i : idx) {
    if (i >= s[axis]) throw std::out_of_range("Tensor::at: index out of range");
    flat = flat * s[axis] + i;
    ++axis;
  }
  return node_->value[flat];
}

void Tape::record(std::function<void()> adjoint) {
  if (!recording_) return;
  records_.push_back(std::move(adjoint));
}

void Tape::backward(const Tensor& output) {
  if (consumed_)
    throw std::runtime_error("Tape::backward: tape already consumed");
  if (!output.defined() || output.size() != 1)
    throw std::invalid_argument("Tape::backward: output must be scalar");
  consumed_ = true;
  auto node = output.node();
  node->ensure_grad();
  node->grad[0] += 1.0;
  for (auto it = records_.rbegin(); it != records_.rend(); ++it) (*it)();
  records_.clear();
}

}  // namespace vseg
