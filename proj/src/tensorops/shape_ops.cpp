#include "llts/errors.hpp"
#include "llts/ops.hpp"

namespace llts {

Tensor sum(const Tensor& x) {
  double s = 0.0;
  for (double v : x.data()) s += v;
  detail::ensure_finite(std::span<const double>(&s, 1), "sum");
  return detail::make_result({1}, {s}, {x}, [](detail::Node& self) {
    detail::Node& nx = *self.parents[0];
    auto& gx = nx.grad_buffer();
    const double g = self.grad[0];
    for (double& v : gx) v += g;
  });
}

Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.numel())); }

Tensor weighted_sum(const Tensor& x, std::span<const double> w) {
  if (w.size() != x.numel()) throw ShapeError("weighted_sum: weight count mismatch");
  std::vector<double> weights(w.begin(), w.end());
  double s = 0.0;
  const auto v = x.data();
  for (std::size_t i = 0; i < v.size(); ++i) s += v[i] * weights[i];
  detail::ensure_finite(std::span<const double>(&s, 1), "weighted_sum");
  return detail::make_result({1}, {s}, {x}, [weights = std::move(weights)](detail::Node& self) {
    auto& gx = self.parents[0]->grad_buffer();
    const double g = self.grad[0];
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g * weights[i];
  });
}

namespace {
// Extents before axis 1, along it, and after it.
struct AxisSplit {
  std::size_t outer;
  std::size_t inner;
};

AxisSplit split_axis1(const Shape& s) {
  if (s.size() < 2) throw ShapeError("channel op needs rank >= 2, got " + shape_str(s));
  std::size_t inner = 1;
  for (std::size_t i = 2; i < s.size(); ++i) inner *= s[i];
  return {s[0], inner};
}
}  // namespace

Tensor concat_channels(std::span<const Tensor> parts) {
  if (parts.empty()) throw ShapeError("concat_channels: no inputs");
  const Shape& ref = parts[0].shape();
  AxisSplit ax = split_axis1(ref);
  std::size_t total_c = 0;
  for (const Tensor& t : parts) {
    const Shape& s = t.shape();
    bool ok = s.size() == ref.size() && s[0] == ref[0];
    for (std::size_t i = 2; ok && i < s.size(); ++i) ok = s[i] == ref[i];
    if (!ok)
      throw ShapeError("concat_channels: " + shape_str(s) + " incompatible with " + shape_str(ref));
    total_c += s[1];
  }
  Shape out_shape = ref;
  out_shape[1] = total_c;
  std::vector<double> out(shape_numel(out_shape));
  std::vector<std::size_t> offsets;
  std::size_t c0 = 0;
  for (const Tensor& t : parts) {
    offsets.push_back(c0);
    const std::size_t c = t.shape()[1];
    const auto v = t.data();
    for (std::size_t n = 0; n < ax.outer; ++n) {
      std::copy_n(v.begin() + n * c * ax.inner, c * ax.inner,
                  out.begin() + (n * total_c + c0) * ax.inner);
    }
    c0 += c;
  }
  std::vector<Tensor> parents(parts.begin(), parts.end());
  return detail::make_result(out_shape, std::move(out), parents,
                             [offsets, total_c, ax](detail::Node& self) {
                               for (std::size_t k = 0; k < self.parents.size(); ++k) {
                                 detail::Node& p = *self.parents[k];
                                 if (!p.requires_grad) continue;
                                 auto& g = p.grad_buffer();
                                 const std::size_t c = p.shape[1];
                                 for (std::size_t n = 0; n < ax.outer; ++n) {
                                   const double* src =
                                       self.grad.data() + (n * total_c + offsets[k]) * ax.inner;
                                   double* dst = g.data() + n * c * ax.inner;
                                   for (std::size_t i = 0; i < c * ax.inner; ++i) dst[i] += src[i];
                                 }
                               }
                             });
}

Tensor slice_channels(const Tensor& x, std::size_t begin, std::size_t end) {
  AxisSplit ax = split_axis1(x.shape());
  const std::size_t c_in = x.shape()[1];
  if (begin >= end || end > c_in)
    throw ShapeError("slice_channels: range [" + std::to_string(begin) + "," + std::to_string(end) +
                     ") invalid for " + shape_str(x.shape()));
  Shape out_shape = x.shape();
  const std::size_t c = end - begin;
  out_shape[1] = c;
  std::vector<double> out(shape_numel(out_shape));
  const auto v = x.data();
  for (std::size_t n = 0; n < ax.outer; ++n)
    std::copy_n(v.begin() + (n * c_in + begin) * ax.inner, c * ax.inner,
                out.begin() + n * c * ax.inner);
  return detail::make_result(out_shape, std::move(out), {x},
                             [ax, c_in, begin, c](detail::Node& self) {
                               auto& g = self.parents[0]->grad_buffer();
                               for (std::size_t n = 0; n < ax.outer; ++n) {
                                 const double* src = self.grad.data() + n * c * ax.inner;
                                 double* dst = g.data() + (n * c_in + begin) * ax.inner;
                                 for (std::size_t i = 0; i < c * ax.inner; ++i) dst[i] += src[i];
                               }
                             });
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel())
    throw ShapeError("reshape: " + shape_str(x.shape()) + " -> " + shape_str(shape));
  std::vector<double> out(x.data().begin(), x.data().end());
  return detail::make_result(std::move(shape), std::move(out), {x}, [](detail::Node& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

}  // namespace llts
