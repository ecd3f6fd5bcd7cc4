#pragma once

#include <array>
#include <cstddef>
#include <string>

#include "llts/mfia.hpp"
#include "llts/ops.hpp"
#include "llts/params.hpp"

namespace llts {

class Rng;

/// Backbone levels at strides 4, 8, 16, 32.
struct PyramidFeatures {
  std::array<Tensor, 4> levels;
};

/// The four stride-4 branches F1..F4 that enter attention and fusion.
struct FeatureBranches {
  Branches f;
};

/// High-resolution neck: per-level 1x1 projection to a common width,
/// bilinear enlargement to the stride-4 grid, four attention instances,
/// channel concatenation.
struct HrfmParams {
  std::array<ConvSpec, 4> proj;
  std::array<MfiaParams, 4> mfia;
  bool use_mfia = true;

  static HrfmParams make(const std::array<std::size_t, 4>& level_channels, std::size_t branch_channels,
                         bool use_mfia, std::size_t ratio = 4);
  void init(Rng& rng);
  void collect(ParamList& out, const std::string& prefix) const;
};

std::size_t hrfm_param_count(const std::array<std::size_t, 4>& level_channels, std::size_t branch_channels,
                             bool use_mfia, std::size_t ratio = 4);

/// bilinear_upsample(conv2d(level, proj), th, tw); identity resample when the
/// level is already at the target size.
Tensor project_branch(const Tensor& level, const ConvSpec& proj, std::size_t target_h, std::size_t target_w);

/// Projects every level onto the stride-4 grid of levels[0].
FeatureBranches hrfm_project(const PyramidFeatures& pyr, const HrfmParams& p);

/// Concat of mfia_forward(branches; mfia[i]) for i = 0..3, in branch order.
Tensor hrfm_fuse(const FeatureBranches& branches, const std::array<MfiaParams, 4>& mfia);

/// Plain concat of the branches (attention disabled).
Tensor hrfm_concat(const FeatureBranches& branches);

}  // namespace llts
