#include "llts/mfia.hpp"

#include <algorithm>
#include <cmath>

#include "llts/errors.hpp"
#include "llts/rng.hpp"

namespace llts {

CamParams CamParams::make(std::size_t channels, std::size_t ratio) {
  if (ratio == 0 || channels % ratio != 0)
    throw UsageError("CAM reduction ratio " + std::to_string(ratio) + " must divide " + std::to_string(channels));
  CamParams p;
  p.ratio = ratio;
  p.reduce = ConvSpec::make(4 * channels, channels / ratio, 1, 1);
  p.expand = ConvSpec::make(channels / ratio, channels, 1, 1);
  return p;
}

SamParams SamParams::make() { return SamParams{ConvSpec::make(2, 1, 7, 7, 1, 3)}; }

MfiaParams MfiaParams::make(std::size_t channels, std::size_t branch, std::size_t ratio) {
  if (branch > 3) throw UsageError("MFIA branch index must be 0..3");
  MfiaParams p;
  p.cam1 = CamParams::make(channels, ratio);
  p.cam2 = CamParams::make(channels, ratio);
  p.sam = SamParams::make();
  p.branch = branch;
  return p;
}

// Gates start uniformly open (zero weights, sigmoid(3) ~ 0.95): a fresh module
// passes features through instead of scaling them by ~1/8, then learns what
// to suppress.
constexpr double kOpenGateBias = 3.0;

void MfiaParams::init(Rng& rng) {
  for (CamParams* c : {&cam1, &cam2}) {
    c->reduce.init_uniform(rng, std::sqrt(2.0));
    std::fill(c->expand.weight.mutable_data().begin(), c->expand.weight.mutable_data().end(), 0.0);
    std::fill(c->expand.bias.mutable_data().begin(), c->expand.bias.mutable_data().end(), kOpenGateBias);
  }
  std::fill(sam.conv7.weight.mutable_data().begin(), sam.conv7.weight.mutable_data().end(), 0.0);
  std::fill(sam.conv7.bias.mutable_data().begin(), sam.conv7.bias.mutable_data().end(), kOpenGateBias);
}

void MfiaParams::collect(ParamList& out, const std::string& prefix) const {
  collect_conv(out, prefix + ".cam1.reduce", cam1.reduce);
  collect_conv(out, prefix + ".cam1.expand", cam1.expand);
  collect_conv(out, prefix + ".cam2.reduce", cam2.reduce);
  collect_conv(out, prefix + ".cam2.expand", cam2.expand);
  collect_conv(out, prefix + ".sam.conv7", sam.conv7);
}

std::size_t mfia_param_count(std::size_t channels, std::size_t ratio) {
  const std::size_t cam = conv_param_count(4 * channels, channels / ratio, 1, 1) +
                          conv_param_count(channels / ratio, channels, 1, 1);
  return 2 * cam + conv_param_count(2, 1, 7, 7);
}

namespace {
void check_branches(const Branches& f, const char* op) {
  for (const Tensor& t : f) {
    if (!t.defined() || t.rank() != 4 || t.shape() != f[0].shape())
      throw ShapeError(std::string(op) + ": branches must share one [N,C,H,W] shape, got " +
                       (t.defined() ? shape_str(t.shape()) : "<undefined>") + " vs " + shape_str(f[0].shape()));
  }
}
}  // namespace

Tensor cam(const Branches& f, const CamParams& p) {
  check_branches(f, "cam");
  const std::size_t N = f[0].dim(0), C = f[0].dim(1);
  if (p.expand.out_channels != C)
    throw ShapeError("cam: parameters sized for " + std::to_string(p.expand.out_channels) + " channels, input has " +
                     std::to_string(C));
  Tensor d[4];
  for (std::size_t i = 0; i < 4; ++i) d[i] = pool_channel_descriptor(f[i], PoolMode::avg);
  Tensor z = reshape(concat_channels(d), {N, 4 * C, 1, 1});
  Tensor a = sigmoid(conv2d(relu(conv2d(z, p.reduce)), p.expand));
  return reshape(a, {N, C});
}

Tensor mfca(const Branches& f, const CamParams& cam1, const CamParams& cam2, std::size_t i) {
  if (i > 3) throw UsageError("mfca: branch index must be 0..3");
  Tensor a1 = cam(f, cam1);
  Branches m;
  for (std::size_t j = 0; j < 4; ++j) m[j] = mul(a1, f[j]);
  Tensor a2 = cam(m, cam2);
  return mul(mul(a1, a2), f[i]);
}

Tensor sam(const Branches& fc, const SamParams& p) {
  check_branches(fc, "sam");
  Tensor s = add(add(fc[0], fc[1]), add(fc[2], fc[3]));
  Tensor pooled[] = {pool_spatial_descriptor(s, PoolMode::avg), pool_spatial_descriptor(s, PoolMode::max)};
  return sigmoid(conv2d(concat_channels(pooled), p.conv7));
}

Tensor mfia_forward(const Branches& f, const MfiaParams& p) {
  check_branches(f, "mfia_forward");
  if (p.branch > 3) throw UsageError("mfia_forward: branch index must be 0..3");
  // The channel gates depend on all branches but not on j, so fc_j shares them.
  Tensor a1 = cam(f, p.cam1);
  Branches m;
  for (std::size_t j = 0; j < 4; ++j) m[j] = mul(a1, f[j]);
  Tensor gate = mul(a1, cam(m, p.cam2));
  Branches fc;
  for (std::size_t j = 0; j < 4; ++j) fc[j] = mul(gate, f[j]);
  return mul(sam(fc, p.sam), fc[p.branch]);
}

}  // namespace llts
