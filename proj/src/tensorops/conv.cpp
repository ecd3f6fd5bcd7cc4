#include <Eigen/Core>
#include <cmath>

#include "llts/errors.hpp"
#include "llts/ops.hpp"
#include "llts/parallel.hpp"
#include "llts/rng.hpp"

namespace llts {

namespace {

using MatR = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapR = Eigen::Map<MatR, 0, Eigen::OuterStride<>>;
using CMapR = Eigen::Map<const MatR, 0, Eigen::OuterStride<>>;

// Upper bound on the im2col scratch (doubles) per image. The column chunking
// depends only on the layer geometry, so results never depend on threading.
constexpr std::size_t kColBudget = std::size_t{1} << 18;

struct Geometry {
  std::size_t N, Cin, H, W, Cout, kh, kw, stride, pad, Ho, Wo;
  std::size_t K() const { return Cin * kh * kw; }
  std::size_t P() const { return Ho * Wo; }
  bool pointwise() const { return kh == 1 && kw == 1 && stride == 1 && pad == 0; }
  std::size_t chunk() const {
    std::size_t c = kColBudget / K();
    return c == 0 ? 1 : (c > P() ? P() : c);
  }
};

// Visits, for kernel tap (ky, kx), every maximal run of output positions in
// [p0, p1) that shares one output row: fn(j, iy, ix0, len) where j is the
// column offset inside the chunk, iy the input row (may be out of range) and
// ix0 the input column of the first element (may be negative).
template <typename Fn>
void for_each_row_run(const Geometry& g, std::size_t ky, std::size_t kx, std::size_t p0,
                      std::size_t p1, Fn&& fn) {
  std::size_t p = p0;
  while (p < p1) {
    const std::size_t oy = p / g.Wo, ox = p % g.Wo;
    const std::size_t len = std::min(g.Wo - ox, p1 - p);
    const long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.pad);
    const long ix0 = static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.pad);
    fn(p - p0, iy, ix0, len);
    p += len;
  }
}

// C (+)= A * B. Eigen picks matrix-vector and coefficient-based kernels for
// thin or tiny operands, and those peel loops according to the runtime
// address alignment, which changes the summation order from run to run.
// Such shapes go through a fixed-order loop instead; the blocked GEMM path
// packs its operands and is address independent.
template <typename A, typename B, typename C>
void product(const A& a, const B& b, C&& c, bool accumulate) {
  const Eigen::Index M = c.rows(), N = c.cols(), K = a.cols();
  if (M > 1 && N > 1 && K > 1 && M + N + K >= 24) {
    if (accumulate)
      c.noalias() += a * b;
    else
      c.noalias() = a * b;
    return;
  }
  if (!accumulate) c.setZero();
  for (Eigen::Index i = 0; i < M; ++i)
    for (Eigen::Index k = 0; k < K; ++k) {
      const double aik = a(i, k);
      for (Eigen::Index j = 0; j < N; ++j) c(i, j) += aik * b(k, j);
    }
}

// Range [t0, t1) of t in [0, len) with 0 <= ix0 + t * s < W.
std::pair<std::size_t, std::size_t> valid_span(long ix0, long s, long W, std::size_t len) {
  const long n = static_cast<long>(len);
  const long lo = ix0 >= 0 ? 0 : (-ix0 + s - 1) / s;
  const long hi = ix0 >= W ? 0 : (W - ix0 + s - 1) / s;
  const long t0 = std::min(lo, n), t1 = std::max(t0, std::min(hi, n));
  return {static_cast<std::size_t>(t0), static_cast<std::size_t>(t1)};
}

// Fills cols[K, p1 - p0] (row-major) from image x_n for output positions [p0, p1).
void im2col(const Geometry& g, const double* x, std::size_t p0, std::size_t p1, double* cols) {
  const std::size_t width = p1 - p0;
  const long H = static_cast<long>(g.H), W = static_cast<long>(g.W), s = static_cast<long>(g.stride);
  for (std::size_t ci = 0; ci < g.Cin; ++ci)
    for (std::size_t ky = 0; ky < g.kh; ++ky)
      for (std::size_t kx = 0; kx < g.kw; ++kx) {
        double* row = cols + ((ci * g.kh + ky) * g.kw + kx) * width;
        const double* plane = x + ci * g.H * g.W;
        for_each_row_run(g, ky, kx, p0, p1, [&](std::size_t j, long iy, long ix0, std::size_t len) {
          double* dst = row + j;
          if (iy < 0 || iy >= H) {
            std::fill_n(dst, len, 0.0);
            return;
          }
          const double* src = plane + iy * W;
          const auto [t0, t1] = valid_span(ix0, s, W, len);
          std::fill(dst, dst + t0, 0.0);
          if (s == 1) {
            std::copy(src + ix0 + static_cast<long>(t0), src + ix0 + static_cast<long>(t1), dst + t0);
          } else {
            for (std::size_t t = t0; t < t1; ++t) dst[t] = src[ix0 + static_cast<long>(t) * s];
          }
          std::fill(dst + t1, dst + len, 0.0);
        });
      }
}

void col2im_add(const Geometry& g, const double* cols, std::size_t p0, std::size_t p1, double* dx) {
  const std::size_t width = p1 - p0;
  const long H = static_cast<long>(g.H), W = static_cast<long>(g.W), s = static_cast<long>(g.stride);
  for (std::size_t ci = 0; ci < g.Cin; ++ci)
    for (std::size_t ky = 0; ky < g.kh; ++ky)
      for (std::size_t kx = 0; kx < g.kw; ++kx) {
        const double* row = cols + ((ci * g.kh + ky) * g.kw + kx) * width;
        double* plane = dx + ci * g.H * g.W;
        for_each_row_run(g, ky, kx, p0, p1, [&](std::size_t j, long iy, long ix0, std::size_t len) {
          if (iy < 0 || iy >= H) return;
          const double* src = row + j;
          double* dst = plane + iy * W;
          const auto [t0, t1] = valid_span(ix0, s, W, len);
          for (std::size_t t = t0; t < t1; ++t) dst[ix0 + static_cast<long>(t) * s] += src[t];
        });
      }
}

}  // namespace

ConvSpec ConvSpec::make(std::size_t in, std::size_t out, std::size_t kh, std::size_t kw,
                        std::size_t stride, std::size_t padding) {
  ConvSpec s;
  s.in_channels = in;
  s.out_channels = out;
  s.kernel_h = kh;
  s.kernel_w = kw;
  s.stride = stride;
  s.padding = padding;
  s.weight = Tensor({out, in, kh, kw});
  s.bias = Tensor({out});
  s.weight.set_requires_grad(true);
  s.bias.set_requires_grad(true);
  s.validate();
  return s;
}

void ConvSpec::init_uniform(Rng& rng, double gain) {
  const double bound = gain * std::sqrt(3.0 / static_cast<double>(in_channels * kernel_h * kernel_w));
  for (double& v : weight.mutable_data()) v = rng.uniform(-bound, bound);
  for (double& v : bias.mutable_data()) v = 0.0;
}

void ConvSpec::validate() const {
  if (stride < 1) throw ShapeError("conv stride must be >= 1");
  if (in_channels == 0 || out_channels == 0 || kernel_h == 0 || kernel_w == 0)
    throw ShapeError("conv extents must be positive");
  const Shape want_w{out_channels, in_channels, kernel_h, kernel_w};
  if (!weight.defined() || weight.shape() != want_w)
    throw ShapeError("conv weight shape " + (weight.defined() ? shape_str(weight.shape()) : "<none>") +
                     " does not match declared " + shape_str(want_w));
  if (!bias.defined() || bias.shape() != Shape{out_channels})
    throw ShapeError("conv bias shape " + (bias.defined() ? shape_str(bias.shape()) : "<none>") +
                     " does not match declared [" + std::to_string(out_channels) + "]");
}

std::size_t ConvSpec::param_count() const {
  return conv_param_count(in_channels, out_channels, kernel_h, kernel_w);
}

Tensor conv2d(const Tensor& x, const ConvSpec& spec) {
  spec.validate();
  if (x.rank() != 4 || x.dim(1) != spec.in_channels)
    throw ShapeError("conv2d: input " + shape_str(x.shape()) + " incompatible with weight " +
                     shape_str(spec.weight.shape()));
  Geometry g{x.dim(0), x.dim(1), x.dim(2), x.dim(3), spec.out_channels, spec.kernel_h, spec.kernel_w,
             spec.stride, spec.padding, 0, 0};
  if (g.H + 2 * g.pad < g.kh || g.W + 2 * g.pad < g.kw)
    throw ShapeError("conv2d: input " + shape_str(x.shape()) + " too small for kernel " +
                     shape_str(spec.weight.shape()));
  g.Ho = (g.H + 2 * g.pad - g.kh) / g.stride + 1;
  g.Wo = (g.W + 2 * g.pad - g.kw) / g.stride + 1;

  const std::size_t K = g.K(), P = g.P(), chunk = g.chunk();
  std::vector<double> out(g.N * g.Cout * P);
  const double* xv = x.data().data();
  const double* wv = spec.weight.data().data();
  const double* bv = spec.bias.data().data();
  Eigen::Map<const MatR> Wm(wv, g.Cout, K);

#pragma omp parallel for schedule(static) num_threads(worker_count())
  for (std::size_t n = 0; n < g.N; ++n) {
    const double* xn = xv + n * g.Cin * g.H * g.W;
    double* on = out.data() + n * g.Cout * P;
    std::vector<double> cols(g.pointwise() ? 0 : K * chunk);
    for (std::size_t p0 = 0; p0 < P; p0 += chunk) {
      const std::size_t p1 = std::min(P, p0 + chunk);
      const std::size_t w = p1 - p0;
      const double* cp = xn + p0;
      std::size_t cstride = P;
      if (!g.pointwise()) {
        im2col(g, xn, p0, p1, cols.data());
        cp = cols.data();
        cstride = w;
      }
      CMapR Cm(cp, K, w, Eigen::OuterStride<>(cstride));
      MapR Om(on + p0, g.Cout, w, Eigen::OuterStride<>(P));
      product(Wm, Cm, Om, false);
    }
    for (std::size_t co = 0; co < g.Cout; ++co) {
      double* row = on + co * P;
      for (std::size_t p = 0; p < P; ++p) row[p] += bv[co];
    }
  }
  detail::ensure_finite(out, "conv2d");

  return detail::make_result(
      {g.N, g.Cout, g.Ho, g.Wo}, std::move(out), {x, spec.weight, spec.bias}, [g](detail::Node& self) {
        detail::Node& nx = *self.parents[0];
        detail::Node& nw = *self.parents[1];
        detail::Node& nb = *self.parents[2];
        const std::size_t K = g.K(), P = g.P(), chunk = g.chunk();
        const double* go = self.grad.data();
        Eigen::Map<const MatR> Wm(nw.value.data(), g.Cout, K);
        double* gx = nx.requires_grad ? nx.grad_buffer().data() : nullptr;
        const bool need_w = nw.requires_grad;
        // Per-image weight gradients, reduced afterwards in image order.
        std::vector<double> gw_parts(need_w ? g.N * g.Cout * K : 0, 0.0);

#pragma omp parallel for schedule(static) num_threads(worker_count())
        for (std::size_t n = 0; n < g.N; ++n) {
          const double* xn = nx.value.data() + n * g.Cin * g.H * g.W;
          const double* gon = go + n * g.Cout * P;
          std::vector<double> cols(g.pointwise() ? 0 : K * chunk);
          std::vector<double> dcols(gx && !g.pointwise() ? K * chunk : 0);
          Eigen::Map<MatR> GWn(need_w ? gw_parts.data() + n * g.Cout * K : nullptr, need_w ? g.Cout : 0,
                               need_w ? K : 0);
          for (std::size_t p0 = 0; p0 < P; p0 += chunk) {
            const std::size_t p1 = std::min(P, p0 + chunk);
            const std::size_t w = p1 - p0;
            CMapR Gm(gon + p0, g.Cout, w, Eigen::OuterStride<>(P));
            if (need_w) {
              const double* cp = xn + p0;
              std::size_t cstride = P;
              if (!g.pointwise()) {
                im2col(g, xn, p0, p1, cols.data());
                cp = cols.data();
                cstride = w;
              }
              CMapR Cm(cp, K, w, Eigen::OuterStride<>(cstride));
              product(Gm, Cm.transpose(), GWn, true);
            }
            if (gx) {
              double* gxn = gx + n * g.Cin * g.H * g.W;
              if (g.pointwise()) {
                MapR Dm(gxn + p0, K, w, Eigen::OuterStride<>(P));
                product(Wm.transpose(), Gm, Dm, true);
              } else {
                MapR Dm(dcols.data(), K, w, Eigen::OuterStride<>(w));
                product(Wm.transpose(), Gm, Dm, false);
                col2im_add(g, dcols.data(), p0, p1, gxn);
              }
            }
          }
        }
        if (need_w) {
          auto& gw = nw.grad_buffer();
          for (std::size_t n = 0; n < g.N; ++n) {
            const double* part = gw_parts.data() + n * g.Cout * K;
            for (std::size_t i = 0; i < gw.size(); ++i) gw[i] += part[i];
          }
        }
        if (nb.requires_grad) {
          auto& gb = nb.grad_buffer();
          for (std::size_t n = 0; n < g.N; ++n)
            for (std::size_t co = 0; co < g.Cout; ++co) {
              const double* row = go + (n * g.Cout + co) * P;
              double s = 0.0;
              for (std::size_t p = 0; p < P; ++p) s += row[p];
              gb[co] += s;
            }
        }
      });
}

}  // namespace llts
