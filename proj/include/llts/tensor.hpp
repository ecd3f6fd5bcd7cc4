#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace llts {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty until first accumulation
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  // Reads this->grad and accumulates into the parents' grads.
  std::function<void(Node&)> backward;

  std::vector<double>& grad_buffer();
};

}  // namespace detail

/// Dense row-major N-D array of doubles with optional reverse-mode gradient.
///
/// Tensor is a handle: copies alias the same storage and graph node, like a
/// framework tensor. Ops never mutate their inputs; they return fresh nodes
/// that remember their parents when gradient recording is on.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> values);

  static Tensor scalar(double v) { return Tensor(Shape{1}, std::vector<double>{v}); }

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t i) const;
  std::size_t numel() const;

  std::span<const double> data() const;
  /// Write access to the value buffer. Intended for leaves (parameters,
  /// inputs, finite-difference probes); mutating an interior node does not
  /// invalidate recorded backward closures.
  std::span<double> mutable_data();
  double item() const;
  double at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const;

  bool requires_grad() const;
  Tensor& set_requires_grad(bool on);
  bool has_grad() const;
  std::span<const double> grad() const;
  std::span<double> mutable_grad();
  void zero_grad();

  /// Seeds d(self)/d(self) = 1 and propagates to every reachable leaf.
  /// Requires a single-element tensor.
  void backward() const;

  /// Same values, no history, no gradient.
  Tensor detach() const;
  Tensor clone() const { return detach(); }

  const std::shared_ptr<detail::Node>& node() const { return node_; }
  static Tensor from_node(std::shared_ptr<detail::Node> n);

 private:
  std::shared_ptr<detail::Node> node_;
};

/// Disables graph recording on this thread while alive.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

namespace detail {

/// Builds an op result. When recording is on and any parent requires grad,
/// the result keeps the parents and the backward closure.
Tensor make_result(Shape shape, std::vector<double> values,
                   std::initializer_list<Tensor> parents,
                   std::function<void(Node&)> backward);
Tensor make_result(Shape shape, std::vector<double> values,
                   const std::vector<Tensor>& parents,
                   std::function<void(Node&)> backward);

/// Throws NumericError naming `op` if any value is NaN or Inf.
void ensure_finite(std::span<const double> values, const char* op);

}  // namespace detail

}  // namespace llts
