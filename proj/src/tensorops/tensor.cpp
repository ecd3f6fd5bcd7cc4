#include "llts/tensor.hpp"

#include <bit>
#include <cmath>
#include <cstdint>
#include <sstream>
#include <unordered_set>

#include "llts/errors.hpp"

namespace llts {

namespace {
thread_local bool g_grad_enabled = true;
}

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t e : shape) n *= e;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::vector<double>& detail::Node::grad_buffer() {
  if (grad.empty()) grad.assign(value.size(), 0.0);
  return grad;
}

static void validate_shape(const Shape& shape) {
  if (shape.empty()) throw ShapeError("tensor shape must have rank >= 1");
  for (std::size_t e : shape)
    if (e == 0) throw ShapeError("tensor extents must be positive, got " + shape_str(shape));
}

Tensor::Tensor(Shape shape, double fill) {
  validate_shape(shape);
  node_ = std::make_shared<detail::Node>();
  node_->value.assign(shape_numel(shape), fill);
  node_->shape = std::move(shape);
}

Tensor::Tensor(Shape shape, std::vector<double> values) {
  validate_shape(shape);
  if (shape_numel(shape) != values.size())
    throw ShapeError("tensor of shape " + shape_str(shape) + " cannot hold " +
                     std::to_string(values.size()) + " values");
  node_ = std::make_shared<detail::Node>();
  node_->shape = std::move(shape);
  node_->value = std::move(values);
}

Tensor Tensor::from_node(std::shared_ptr<detail::Node> n) {
  Tensor t;
  t.node_ = std::move(n);
  return t;
}

const Shape& Tensor::shape() const { return node_->shape; }

std::size_t Tensor::dim(std::size_t i) const {
  if (i >= node_->shape.size())
    throw ShapeError("dim " + std::to_string(i) + " out of range for " + shape_str(node_->shape));
  return node_->shape[i];
}

std::size_t Tensor::numel() const { return node_->value.size(); }

std::span<const double> Tensor::data() const { return node_->value; }
std::span<double> Tensor::mutable_data() { return node_->value; }

double Tensor::item() const {
  if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
  return node_->value[0];
}

double Tensor::at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
  const Shape& s = node_->shape;
  if (s.size() != 4) throw ShapeError("at(n,c,h,w) needs a 4-D tensor, got " + shape_str(s));
  return node_->value[((n * s[1] + c) * s[2] + h) * s[3] + w];
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

Tensor& Tensor::set_requires_grad(bool on) {
  node_->requires_grad = on;
  return *this;
}

bool Tensor::has_grad() const { return node_ && !node_->grad.empty(); }

std::span<const double> Tensor::grad() const { return node_->grad; }

std::span<double> Tensor::mutable_grad() { return node_->grad_buffer(); }

void Tensor::zero_grad() { node_->grad.clear(); }

void Tensor::backward() const {
  if (numel() != 1)
    throw ShapeError("backward() needs a scalar output, got " + shape_str(shape()));
  if (!node_->requires_grad) return;

  // Iterative post-order DFS gives a topological order.
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> seen;
  std::vector<std::pair<detail::Node*, std::size_t>> stack;
  stack.emplace_back(node_.get(), 0);
  seen.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->parents.size()) {
      detail::Node* p = n->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  node_->grad_buffer()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* n = *it;
    if (n->backward && !n->grad.empty()) n->backward(*n);
  }
}

Tensor Tensor::detach() const {
  return Tensor(node_->shape, node_->value);
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

bool grad_enabled() { return g_grad_enabled; }

namespace detail {

template <typename Parents>
static Tensor make_result_impl(Shape shape, std::vector<double> values, const Parents& parents,
                               std::function<void(Node&)> backward) {
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(values);
  if (g_grad_enabled) {
    bool any = false;
    for (const Tensor& p : parents) any = any || p.requires_grad();
    if (any) {
      node->requires_grad = true;
      for (const Tensor& p : parents) node->parents.push_back(p.node());
      node->backward = std::move(backward);
    }
  }
  return Tensor::from_node(std::move(node));
}

Tensor make_result(Shape shape, std::vector<double> values, std::initializer_list<Tensor> parents,
                   std::function<void(Node&)> backward) {
  return make_result_impl(std::move(shape), std::move(values), parents, std::move(backward));
}

Tensor make_result(Shape shape, std::vector<double> values, const std::vector<Tensor>& parents,
                   std::function<void(Node&)> backward) {
  return make_result_impl(std::move(shape), std::move(values), parents, std::move(backward));
}

void ensure_finite(std::span<const double> values, const char* op) {
  // Branch-free scan on the exponent bits so the common all-finite case vectorizes.
  constexpr std::uint64_t kExp = 0x7ff0000000000000ULL;
  std::uint64_t bad = 0;
  for (double v : values) bad |= static_cast<std::uint64_t>((std::bit_cast<std::uint64_t>(v) & kExp) == kExp);
  if (!bad) return;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!std::isfinite(values[i])) {
      throw NumericError(std::string(op) + ": non-finite value at flat index " + std::to_string(i));
    }
  }
}

}  // namespace detail

}  // namespace llts
