#include <array>
#include <cmath>

#include "llts/errors.hpp"
#include "llts/ops.hpp"

namespace llts {

namespace {

using Dims4 = std::array<std::size_t, 4>;

// Lifts a shape to four axes given its partner's rank.
Dims4 lift(const Shape& s, std::size_t partner_rank) {
  if (s.size() == 4) return {s[0], s[1], s[2], s[3]};
  if (partner_rank == 4 && s.size() == 2) return {s[0], s[1], 1, 1};
  if (partner_rank == 4 && s.size() == 1) return {1, s[0], 1, 1};
  Dims4 d{1, 1, 1, 1};
  std::size_t off = 4 - s.size();
  for (std::size_t i = 0; i < s.size(); ++i) d[off + i] = s[i];
  return d;
}

struct BroadcastPlan {
  Shape out_shape;
  Dims4 out;
  Dims4 stride_a;
  Dims4 stride_b;
  bool same = false;
};

Dims4 strides_for(const Dims4& d, const Dims4& out) {
  Dims4 st{};
  std::size_t acc = 1;
  for (int i = 3; i >= 0; --i) {
    st[i] = (d[i] == 1 && out[i] != 1) ? 0 : acc;
    acc *= d[i];
  }
  return st;
}

BroadcastPlan plan_broadcast(const Tensor& a, const Tensor& b, const char* op) {
  BroadcastPlan p;
  if (a.shape() == b.shape()) {
    p.same = true;
    p.out_shape = a.shape();
    return p;
  }
  const std::size_t ra = a.rank();
  const std::size_t rb = b.rank();
  if (ra != rb && ra != 4 && rb != 4)
    throw ShapeError(std::string(op) + ": cannot broadcast " + shape_str(a.shape()) + " with " +
                     shape_str(b.shape()));
  if (ra > 4 || rb > 4)
    throw ShapeError(std::string(op) + ": broadcasting supports rank <= 4");
  Dims4 da = lift(a.shape(), rb);
  Dims4 db = lift(b.shape(), ra);
  for (int i = 0; i < 4; ++i) {
    if (da[i] != db[i] && da[i] != 1 && db[i] != 1)
      throw ShapeError(std::string(op) + ": cannot broadcast " + shape_str(a.shape()) + " with " +
                       shape_str(b.shape()));
    p.out[i] = std::max(da[i], db[i]);
  }
  p.stride_a = strides_for(da, p.out);
  p.stride_b = strides_for(db, p.out);
  if (ra == 4 || rb == 4) {
    p.out_shape = {p.out[0], p.out[1], p.out[2], p.out[3]};
  } else {
    p.out_shape.assign(p.out.begin() + (4 - ra), p.out.end());
  }
  return p;
}

// Visits the output in row-major runs along the last axis:
// f(o, ia, sa, ib, sb, len) covers out[o + t] = op(a[ia + t * sa], b[ib + t * sb]).
template <typename F>
void for_each_broadcast_row(const BroadcastPlan& p, F&& f) {
  std::size_t o = 0;
  for (std::size_t i0 = 0; i0 < p.out[0]; ++i0)
    for (std::size_t i1 = 0; i1 < p.out[1]; ++i1)
      for (std::size_t i2 = 0; i2 < p.out[2]; ++i2, o += p.out[3]) {
        std::size_t ia = i0 * p.stride_a[0] + i1 * p.stride_a[1] + i2 * p.stride_a[2];
        std::size_t ib = i0 * p.stride_b[0] + i1 * p.stride_b[1] + i2 * p.stride_b[2];
        f(o, ia, p.stride_a[3], ib, p.stride_b[3], p.out[3]);
      }
}

enum class BinOp { add, sub, mul };

template <BinOp op>
inline double apply(double x, double y) {
  if constexpr (op == BinOp::add) return x + y;
  else if constexpr (op == BinOp::sub) return x - y;
  else return x * y;
}

template <BinOp op>
void forward_row(double* out, const double* a, std::size_t sa, const double* b, std::size_t sb, std::size_t len) {
  if (sa == 1 && sb == 1) {
    for (std::size_t t = 0; t < len; ++t) out[t] = apply<op>(a[t], b[t]);
  } else if (sa == 1 && sb == 0) {
    const double y = b[0];
    for (std::size_t t = 0; t < len; ++t) out[t] = apply<op>(a[t], y);
  } else if (sa == 0 && sb == 1) {
    const double x = a[0];
    for (std::size_t t = 0; t < len; ++t) out[t] = apply<op>(x, b[t]);
  } else {
    for (std::size_t t = 0; t < len; ++t) out[t] = apply<op>(a[t * sa], b[t * sb]);
  }
}

// Accumulates scale * g[t] * (other ? other[t * so] : 1) into dst[t * sd].
void accumulate_row(double* dst, std::size_t sd, const double* g, const double* other, std::size_t so, double scale,
                    std::size_t len) {
  if (sd == 0) {
    double acc = 0.0;
    if (!other)
      for (std::size_t t = 0; t < len; ++t) acc += g[t];
    else if (so == 0)
      for (std::size_t t = 0; t < len; ++t) acc += g[t] * other[0];
    else
      for (std::size_t t = 0; t < len; ++t) acc += g[t] * other[t * so];
    dst[0] += scale * acc;
    return;
  }
  if (!other) {
    if (sd == 1 && scale == 1.0)
      for (std::size_t t = 0; t < len; ++t) dst[t] += g[t];
    else
      for (std::size_t t = 0; t < len; ++t) dst[t * sd] += scale * g[t];
  } else if (sd == 1 && so == 1) {
    for (std::size_t t = 0; t < len; ++t) dst[t] += g[t] * other[t];
  } else if (sd == 1 && so == 0) {
    const double y = other[0];
    for (std::size_t t = 0; t < len; ++t) dst[t] += g[t] * y;
  } else {
    for (std::size_t t = 0; t < len; ++t) dst[t * sd] += g[t] * other[t * so];
  }
}

template <BinOp op>
Tensor binary(const Tensor& a, const Tensor& b, const char* name) {
  BroadcastPlan plan = plan_broadcast(a, b, name);
  const double* va = a.data().data();
  const double* vb = b.data().data();
  std::vector<double> out(shape_numel(plan.out_shape));
  if (plan.same) {
    forward_row<op>(out.data(), va, 1, vb, 1, out.size());
  } else {
    for_each_broadcast_row(plan, [&](std::size_t o, std::size_t ia, std::size_t sa, std::size_t ib, std::size_t sb,
                                     std::size_t len) { forward_row<op>(out.data() + o, va + ia, sa, vb + ib, sb, len); });
  }
  detail::ensure_finite(out, name);
  return detail::make_result(plan.out_shape, std::move(out), {a, b}, [plan](detail::Node& self) {
    detail::Node& na = *self.parents[0];
    detail::Node& nb = *self.parents[1];
    const double* g = self.grad.data();
    const bool is_mul = op == BinOp::mul;
    const double sign_b = op == BinOp::sub ? -1.0 : 1.0;
    double* ga = na.requires_grad ? na.grad_buffer().data() : nullptr;
    double* gb = nb.requires_grad ? nb.grad_buffer().data() : nullptr;
    const double* xa = na.value.data();
    const double* xb = nb.value.data();
    if (plan.same) {
      const std::size_t n = self.grad.size();
      if (ga) accumulate_row(ga, 1, g, is_mul ? xb : nullptr, 1, 1.0, n);
      if (gb) accumulate_row(gb, 1, g, is_mul ? xa : nullptr, 1, sign_b, n);
      return;
    }
    for_each_broadcast_row(plan, [&](std::size_t o, std::size_t ia, std::size_t sa, std::size_t ib, std::size_t sb,
                                     std::size_t len) {
      if (ga) accumulate_row(ga + ia, sa, g + o, is_mul ? xb + ib : nullptr, sb, 1.0, len);
      if (gb) accumulate_row(gb + ib, sb, g + o, is_mul ? xa + ia : nullptr, sa, sign_b, len);
    });
  });
}

// f maps input -> output; df maps (input, output) -> local derivative.
template <typename F, typename DF>
Tensor unary(const Tensor& x, const char* name, F f, DF df) {
  const auto& v = x.data();
  std::vector<double> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = f(v[i]);
  detail::ensure_finite(out, name);
  return detail::make_result(x.shape(), std::move(out), {x}, [df](detail::Node& self) {
    detail::Node& nx = *self.parents[0];
    auto& gx = nx.grad_buffer();
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += self.grad[i] * df(nx.value[i], self.value[i]);
  });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return binary<BinOp::add>(a, b, "add"); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary<BinOp::sub>(a, b, "sub"); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary<BinOp::mul>(a, b, "mul"); }

Tensor scale(const Tensor& x, double s) {
  return unary(x, "scale", [s](double v) { return s * v; }, [s](double, double) { return s; });
}

Tensor exp(const Tensor& x) {
  return unary(x, "exp", [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Tensor abs(const Tensor& x) {
  return unary(
      x, "abs", [](double v) { return std::fabs(v); },
      [](double v, double) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); });
}

Tensor relu(const Tensor& x) {
  return unary(
      x, "relu", [](double v) { return v > 0.0 ? v : 0.0; },
      [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor sigmoid(const Tensor& x) {
  return unary(
      x, "sigmoid",
      [](double v) {
        if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
        const double e = std::exp(v);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor softplus(const Tensor& x) {
  return unary(
      x, "softplus", [](double v) { return v > 0.0 ? v + std::log1p(std::exp(-v)) : std::log1p(std::exp(v)); },
      [](double v, double) {
        if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
        const double e = std::exp(v);
        return e / (1.0 + e);
      });
}

Tensor clamp(const Tensor& x, double lo, double hi) {
  if (lo > hi) throw UsageError("clamp: lo > hi");
  return unary(
      x, "clamp", [lo, hi](double v) { return v < lo ? lo : (v > hi ? hi : v); },
      [lo, hi](double v, double) { return (v >= lo && v <= hi) ? 1.0 : 0.0; });
}

}  // namespace llts
