#include "llts/hrfm.hpp"

#include <cmath>

#include "llts/errors.hpp"
#include "llts/rng.hpp"

namespace llts {

HrfmParams HrfmParams::make(const std::array<std::size_t, 4>& level_channels, std::size_t branch_channels,
                            bool use_mfia, std::size_t ratio) {
  HrfmParams p;
  p.use_mfia = use_mfia;
  for (std::size_t i = 0; i < 4; ++i) {
    p.proj[i] = ConvSpec::make(level_channels[i], branch_channels, 1, 1);
    if (use_mfia) p.mfia[i] = MfiaParams::make(branch_channels, i, ratio);
  }
  return p;
}

void HrfmParams::init(Rng& rng) {
  for (ConvSpec& c : proj) c.init_uniform(rng, 1.0);
  if (use_mfia)
    for (MfiaParams& m : mfia) m.init(rng);
}

void HrfmParams::collect(ParamList& out, const std::string& prefix) const {
  for (std::size_t i = 0; i < 4; ++i) collect_conv(out, prefix + ".proj" + std::to_string(i + 1), proj[i]);
  if (use_mfia)
    for (std::size_t i = 0; i < 4; ++i) mfia[i].collect(out, prefix + ".mfia" + std::to_string(i + 1));
}

std::size_t hrfm_param_count(const std::array<std::size_t, 4>& level_channels, std::size_t branch_channels,
                             bool use_mfia, std::size_t ratio) {
  std::size_t n = 0;
  for (std::size_t c : level_channels) n += conv_param_count(c, branch_channels, 1, 1);
  if (use_mfia) n += 4 * mfia_param_count(branch_channels, ratio);
  return n;
}

Tensor project_branch(const Tensor& level, const ConvSpec& proj, std::size_t target_h, std::size_t target_w) {
  Tensor y = conv2d(level, proj);
  if (y.dim(2) == target_h && y.dim(3) == target_w) return y;
  return bilinear_upsample(y, target_h, target_w);
}

FeatureBranches hrfm_project(const PyramidFeatures& pyr, const HrfmParams& p) {
  const Tensor& p1 = pyr.levels[0];
  if (p1.rank() != 4) throw ShapeError("hrfm_project: stride-4 level must be [N,C,H,W]");
  for (std::size_t i = 1; i < 4; ++i) {
    const Tensor& lv = pyr.levels[i];
    const Tensor& prev = pyr.levels[i - 1];
    if (lv.rank() != 4 || lv.dim(0) != p1.dim(0) || lv.dim(2) * 2 != prev.dim(2) || lv.dim(3) * 2 != prev.dim(3))
      throw ShapeError("hrfm_project: level " + std::to_string(i + 1) + " " + shape_str(lv.shape()) +
                       " does not halve " + shape_str(prev.shape()));
  }
  FeatureBranches out;
  for (std::size_t i = 0; i < 4; ++i) out.f[i] = project_branch(pyr.levels[i], p.proj[i], p1.dim(2), p1.dim(3));
  return out;
}

Tensor hrfm_fuse(const FeatureBranches& branches, const std::array<MfiaParams, 4>& mfia) {
  Tensor parts[4];
  for (std::size_t i = 0; i < 4; ++i) {
    if (mfia[i].branch != i)
      throw UsageError("hrfm_fuse: attention instance " + std::to_string(i) + " is bound to branch " +
                       std::to_string(mfia[i].branch));
    parts[i] = mfia_forward(branches.f, mfia[i]);
  }
  return concat_channels(parts);
}

Tensor hrfm_concat(const FeatureBranches& branches) { return concat_channels(branches.f); }

}  // namespace llts
