#include <cmath>

#include "llts/errors.hpp"
#include "llts/ops.hpp"

namespace llts {

namespace {

void require_rank4(const Tensor& x, const char* op) {
  if (x.rank() != 4)
    throw ShapeError(std::string(op) + ": expected [N,C,H,W], got " + shape_str(x.shape()));
}

struct Tap {
  std::size_t i0;
  std::size_t i1;
  double w1;  // weight of i1; i0 gets 1 - w1
};

std::vector<Tap> half_pixel_taps(std::size_t in, std::size_t out) {
  std::vector<Tap> taps(out);
  const double ratio = static_cast<double>(in) / static_cast<double>(out);
  for (std::size_t d = 0; d < out; ++d) {
    double src = (static_cast<double>(d) + 0.5) * ratio - 0.5;
    if (src < 0.0) src = 0.0;
    std::size_t i0 = static_cast<std::size_t>(std::floor(src));
    if (i0 > in - 1) i0 = in - 1;
    std::size_t i1 = i0 + 1 < in ? i0 + 1 : in - 1;
    taps[d] = {i0, i1, src - static_cast<double>(i0)};
  }
  return taps;
}

// Half-sample symmetric extension: ... 1 0 | 0 1 2 ... n-1 | n-1 n-2 ...
std::size_t mirror_index(long i, long n) {
  const long period = 2 * n;
  long m = ((i % period) + period) % period;
  return static_cast<std::size_t>(m < n ? m : period - 1 - m);
}

}  // namespace

Tensor bilinear_upsample(const Tensor& x, std::size_t out_h, std::size_t out_w) {
  require_rank4(x, "bilinear_upsample");
  if (out_h == 0 || out_w == 0) throw ShapeError("bilinear_upsample: zero target extent");
  const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (out_h < H || out_w < W)
    throw ShapeError("bilinear_upsample: target " + std::to_string(out_h) + "x" +
                     std::to_string(out_w) + " smaller than input " + shape_str(x.shape()));
  auto ty = half_pixel_taps(H, out_h);
  auto tx = half_pixel_taps(W, out_w);
  std::vector<double> out(N * C * out_h * out_w);
  const auto v = x.data();
  for (std::size_t plane = 0; plane < N * C; ++plane) {
    const double* src = v.data() + plane * H * W;
    double* dst = out.data() + plane * out_h * out_w;
    for (std::size_t oy = 0; oy < out_h; ++oy) {
      const Tap& a = ty[oy];
      const double* r0 = src + a.i0 * W;
      const double* r1 = src + a.i1 * W;
      for (std::size_t ox = 0; ox < out_w; ++ox) {
        const Tap& b = tx[ox];
        const double top = (1.0 - b.w1) * r0[b.i0] + b.w1 * r0[b.i1];
        const double bot = (1.0 - b.w1) * r1[b.i0] + b.w1 * r1[b.i1];
        dst[oy * out_w + ox] = (1.0 - a.w1) * top + a.w1 * bot;
      }
    }
  }
  detail::ensure_finite(out, "bilinear_upsample");
  return detail::make_result(
      {N, C, out_h, out_w}, std::move(out), {x},
      [ty = std::move(ty), tx = std::move(tx), N, C, H, W, out_h, out_w](detail::Node& self) {
        auto& g = self.parents[0]->grad_buffer();
        for (std::size_t plane = 0; plane < N * C; ++plane) {
          const double* go = self.grad.data() + plane * out_h * out_w;
          double* gi = g.data() + plane * H * W;
          for (std::size_t oy = 0; oy < out_h; ++oy) {
            const Tap& a = ty[oy];
            for (std::size_t ox = 0; ox < out_w; ++ox) {
              const Tap& b = tx[ox];
              const double gv = go[oy * out_w + ox];
              gi[a.i0 * W + b.i0] += gv * (1.0 - a.w1) * (1.0 - b.w1);
              gi[a.i0 * W + b.i1] += gv * (1.0 - a.w1) * b.w1;
              gi[a.i1 * W + b.i0] += gv * a.w1 * (1.0 - b.w1);
              gi[a.i1 * W + b.i1] += gv * a.w1 * b.w1;
            }
          }
        }
      });
}

std::vector<double> gaussian_kernel(std::size_t ksize, double sigma) {
  if (ksize % 2 == 0) throw UsageError("gaussian kernel size must be odd, got " + std::to_string(ksize));
  if (!(sigma > 0.0)) throw UsageError("gaussian sigma must be positive");
  const long r = static_cast<long>(ksize / 2);
  std::vector<double> k(ksize * ksize);
  double z = 0.0;
  for (long i = -r; i <= r; ++i)
    for (long j = -r; j <= r; ++j) {
      double v = std::exp(-static_cast<double>(i * i + j * j) / (2.0 * sigma * sigma));
      k[(i + r) * ksize + (j + r)] = v;
      z += v;
    }
  for (double& v : k) v /= z;
  return k;
}

namespace {
std::vector<double> gaussian_kernel_1d(std::size_t ksize, double sigma) {
  const long r = static_cast<long>(ksize / 2);
  std::vector<double> k(ksize);
  double z = 0.0;
  for (long i = -r; i <= r; ++i) z += k[i + r] = std::exp(-static_cast<double>(i * i) / (2.0 * sigma * sigma));
  for (double& v : k) v /= z;
  return k;
}
}  // namespace

Tensor gaussian_blur(const Tensor& x, std::size_t ksize, double sigma) {
  require_rank4(x, "gaussian_blur");
  gaussian_kernel(ksize, sigma);  // argument validation
  // The isotropic kernel is the outer product of two 1-D kernels, so filter
  // rows then columns.
  std::vector<double> k = gaussian_kernel_1d(ksize, sigma);
  const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const long r = static_cast<long>(ksize / 2);
  // Mirrored source index for output coordinate o and tap t: idx[o * ksize + t].
  auto table = [&](std::size_t n) {
    std::vector<std::size_t> idx(n * ksize);
    for (std::size_t o = 0; o < n; ++o)
      for (std::size_t t = 0; t < ksize; ++t)
        idx[o * ksize + t] = mirror_index(static_cast<long>(o) + static_cast<long>(t) - r, static_cast<long>(n));
    return idx;
  };
  std::vector<std::size_t> rows = table(H);
  std::vector<std::size_t> cols = table(W);
  std::vector<double> out(x.numel());
  std::vector<double> tmp(H * W);
  const auto v = x.data();
  for (std::size_t plane = 0; plane < N * C; ++plane) {
    const double* src = v.data() + plane * H * W;
    double* dst = out.data() + plane * H * W;
    for (std::size_t y = 0; y < H; ++y)
      for (std::size_t xx = 0; xx < W; ++xx) {
        double acc = 0.0;
        for (std::size_t t = 0; t < ksize; ++t) acc += k[t] * src[y * W + cols[xx * ksize + t]];
        tmp[y * W + xx] = acc;
      }
    for (std::size_t y = 0; y < H; ++y) {
      double* d = dst + y * W;
      std::fill_n(d, W, 0.0);
      for (std::size_t t = 0; t < ksize; ++t) {
        const double* srow = tmp.data() + rows[y * ksize + t] * W;
        const double kt = k[t];
        for (std::size_t xx = 0; xx < W; ++xx) d[xx] += kt * srow[xx];
      }
    }
  }
  detail::ensure_finite(out, "gaussian_blur");
  return detail::make_result(
      x.shape(), std::move(out), {x},
      [k = std::move(k), rows = std::move(rows), cols = std::move(cols), N, C, H, W,
       ksize](detail::Node& self) {
        auto& g = self.parents[0]->grad_buffer();
        std::vector<double> gt(H * W);
        for (std::size_t plane = 0; plane < N * C; ++plane) {
          const double* go = self.grad.data() + plane * H * W;
          double* gi = g.data() + plane * H * W;
          std::fill(gt.begin(), gt.end(), 0.0);
          for (std::size_t y = 0; y < H; ++y)
            for (std::size_t t = 0; t < ksize; ++t) {
              double* trow = gt.data() + rows[y * ksize + t] * W;
              const double kt = k[t];
              for (std::size_t xx = 0; xx < W; ++xx) trow[xx] += kt * go[y * W + xx];
            }
          for (std::size_t y = 0; y < H; ++y)
            for (std::size_t xx = 0; xx < W; ++xx) {
              const double gv = gt[y * W + xx];
              for (std::size_t t = 0; t < ksize; ++t) gi[y * W + cols[xx * ksize + t]] += k[t] * gv;
            }
        }
      });
}

Tensor pool_channel_descriptor(const Tensor& x, PoolMode mode) {
  require_rank4(x, "pool_channel_descriptor");
  const std::size_t N = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
  std::vector<double> out(N * C);
  std::vector<std::size_t> argmax(mode == PoolMode::max ? N * C : 0);
  const auto v = x.data();
  for (std::size_t plane = 0; plane < N * C; ++plane) {
    const double* p = v.data() + plane * HW;
    if (mode == PoolMode::avg) {
      double s = 0.0;
      for (std::size_t i = 0; i < HW; ++i) s += p[i];
      out[plane] = s / static_cast<double>(HW);
    } else {
      std::size_t best = 0;
      for (std::size_t i = 1; i < HW; ++i)
        if (p[i] > p[best]) best = i;
      out[plane] = p[best];
      argmax[plane] = best;
    }
  }
  detail::ensure_finite(out, "pool_channel_descriptor");
  return detail::make_result({N, C}, std::move(out), {x},
                             [mode, argmax = std::move(argmax), HW](detail::Node& self) {
                               auto& g = self.parents[0]->grad_buffer();
                               for (std::size_t plane = 0; plane < self.grad.size(); ++plane) {
                                 const double gv = self.grad[plane];
                                 double* gp = g.data() + plane * HW;
                                 if (mode == PoolMode::avg) {
                                   const double share = gv / static_cast<double>(HW);
                                   for (std::size_t i = 0; i < HW; ++i) gp[i] += share;
                                 } else {
                                   gp[argmax[plane]] += gv;
                                 }
                               }
                             });
}

Tensor pool_spatial_descriptor(const Tensor& x, PoolMode mode) {
  require_rank4(x, "pool_spatial_descriptor");
  const std::size_t N = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
  std::vector<double> out(N * HW);
  std::vector<std::size_t> argmax(mode == PoolMode::max ? N * HW : 0);
  const auto v = x.data();
  for (std::size_t n = 0; n < N; ++n) {
    const double* base = v.data() + n * C * HW;
    for (std::size_t i = 0; i < HW; ++i) {
      if (mode == PoolMode::avg) {
        double s = 0.0;
        for (std::size_t c = 0; c < C; ++c) s += base[c * HW + i];
        out[n * HW + i] = s / static_cast<double>(C);
      } else {
        std::size_t best = 0;
        for (std::size_t c = 1; c < C; ++c)
          if (base[c * HW + i] > base[best * HW + i]) best = c;
        out[n * HW + i] = base[best * HW + i];
        argmax[n * HW + i] = best;
      }
    }
  }
  detail::ensure_finite(out, "pool_spatial_descriptor");
  return detail::make_result({N, 1, x.dim(2), x.dim(3)}, std::move(out), {x},
                             [mode, argmax = std::move(argmax), N, C, HW](detail::Node& self) {
                               auto& g = self.parents[0]->grad_buffer();
                               for (std::size_t n = 0; n < N; ++n)
                                 for (std::size_t i = 0; i < HW; ++i) {
                                   const double gv = self.grad[n * HW + i];
                                   double* gb = g.data() + n * C * HW + i;
                                   if (mode == PoolMode::avg) {
                                     const double share = gv / static_cast<double>(C);
                                     for (std::size_t c = 0; c < C; ++c) gb[c * HW] += share;
                                   } else {
                                     gb[argmax[n * HW + i] * HW] += gv;
                                   }
                                 }
                             });
}

}  // namespace llts
