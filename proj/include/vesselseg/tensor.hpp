#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace vseg {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty until the first adjoint accumulation
  bool requires_grad = false;

  // Sizes and zero-fills the gradient buffer on first use.
  void ensure_grad();
};

}  // namespace detail

// Value-semantic handle to an N-d array node. Data is row-major doubles.
// Gradients accumulate across backward passes until zero_grad().
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double fill, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values,
                     bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t size() const;
  bool requires_grad() const;

  std::span<const double> values() const;
  // Direct mutation; meant for leaves (parameters, freshly built inputs).
  std::span<double> values_mut();

  bool has_grad() const;
  std::span<const double> grad() const;
  void zero_grad();

  double scalar() const;
  double at(std::initializer_list<std::size_t> idx) const;

  std::shared_ptr<detail::Node> node() const { return node_; }
  static Tensor wrap(std::shared_ptr<detail::Node> node);

 private:
  std::shared_ptr<detail::Node> node_;
};

// Ordered record of adjoint closures for one forward pass. Append-only while
// recording; consumed exactly once by backward(). A tape must not be shared
// across threads; distinct tapes are independent.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return recording_; }
  void set_recording(bool on) { recording_ = on; }

  void record(std::function<void()> adjoint);
  std::size_t num_records() const { return records_.size(); }

  // Seeds d(output)/d(output) = 1 and replays adjoints in reverse order.
  // Requires a scalar (single element) output.
  void backward(const Tensor& output);

 private:
  std::vector<std::function<void()>> records_;
  bool recording_ = true;
  bool consumed_ = false;
};

// Scoped recording pause, for inference passes over an existing tape.
class NoGradGuard {
 public:
  explicit NoGradGuard(Tape& tape) : tape_(tape), prev_(tape.recording()) {
    tape_.set_recording(false);
  }
  ~NoGradGuard() { tape_.set_recording(prev_); }

 private:
  Tape& tape_;
  bool prev_;
};

}  // namespace vseg
