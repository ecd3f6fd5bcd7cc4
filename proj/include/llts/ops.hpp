#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "llts/tensor.hpp"

namespace llts {

class Rng;

/// Convolution layer parameters. Weight is [out, in, kh, kw], bias is [out].
struct ConvSpec {
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  std::size_t kernel_h = 1;
  std::size_t kernel_w = 1;
  std::size_t stride = 1;
  std::size_t padding = 0;
  Tensor weight;
  Tensor bias;

  /// Zero-initialized spec; weight and bias are marked as requiring grad.
  static ConvSpec make(std::size_t in, std::size_t out, std::size_t kh, std::size_t kw,
                       std::size_t stride = 1, std::size_t padding = 0);

  /// Fills weight from U(-b, b) with b = gain * sqrt(3 / fan_in); bias zero.
  void init_uniform(Rng& rng, double gain = 1.0);

  void validate() const;
  std::size_t param_count() const;
};

/// Closed-form parameter count of a conv with bias.
constexpr std::size_t conv_param_count(std::size_t in, std::size_t out, std::size_t kh,
                                       std::size_t kw) {
  return out * in * kh * kw + out;
}

/// Cross-correlation plus bias over [N, Cin, H, W].
Tensor conv2d(const Tensor& x, const ConvSpec& spec);

/// Bilinear enlargement with half-pixel centers (align_corners = false).
Tensor bilinear_upsample(const Tensor& x, std::size_t out_h, std::size_t out_w);

/// Normalized ksize x ksize isotropic Gaussian, row-major.
std::vector<double> gaussian_kernel(std::size_t ksize, double sigma);

/// Depthwise Gaussian filter with half-sample symmetric (mirror) borders.
Tensor gaussian_blur(const Tensor& x, std::size_t ksize, double sigma);

enum class PoolMode { avg, max };

/// Global spatial statistic per channel: [N, C, H, W] -> [N, C].
Tensor pool_channel_descriptor(const Tensor& x, PoolMode mode);

/// Statistic across channels per pixel: [N, C, H, W] -> [N, 1, H, W].
Tensor pool_spatial_descriptor(const Tensor& x, PoolMode mode);

// Binary ops broadcast one operand onto the other. A rank-2 [N, C] operand
// paired with a rank-4 one is read as [N, C, 1, 1]; rank-1 [C] as
// [1, C, 1, 1]. Otherwise ranks must match and each extent must agree or be 1.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);

Tensor scale(const Tensor& x, double s);
Tensor exp(const Tensor& x);
Tensor abs(const Tensor& x);
Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor softplus(const Tensor& x);
Tensor clamp(const Tensor& x, double lo, double hi);

/// Sum of all elements as a [1] tensor.
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
/// Sum of x * w for a constant weight tensor of identical shape; handy as a
/// non-degenerate scalar probe in gradient checks.
Tensor weighted_sum(const Tensor& x, std::span<const double> w);

/// Concatenation along axis 1.
Tensor concat_channels(std::span<const Tensor> parts);
/// Channels [begin, end) along axis 1.
Tensor slice_channels(const Tensor& x, std::size_t begin, std::size_t end);
Tensor reshape(const Tensor& x, Shape shape);

}  // namespace llts
