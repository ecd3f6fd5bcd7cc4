#pragma once

#include <array>
#include <cstddef>
#include <string>

#include "llts/ops.hpp"
#include "llts/params.hpp"

namespace llts {

class Rng;

/// Four aligned [N, C, H, W] feature maps, lowest stride first.
using Branches = std::array<Tensor, 4>;

/// Channel attention over four branches: concatenated global-average
/// descriptors squeezed to C/r and expanded back to C.
struct CamParams {
  ConvSpec reduce;  // 1x1, 4C -> C/r
  ConvSpec expand;  // 1x1, C/r -> C
  std::size_t ratio = 4;

  static CamParams make(std::size_t channels, std::size_t ratio = 4);
};

/// Spatial attention: [avg, max] over channels -> 7x7 conv -> sigmoid.
struct SamParams {
  ConvSpec conv7;  // 2 -> 1, 7x7, pad 3

  static SamParams make();
};

struct MfiaParams {
  CamParams cam1;
  CamParams cam2;
  SamParams sam;
  std::size_t branch = 0;  // output branch, 0..3

  static MfiaParams make(std::size_t channels, std::size_t branch, std::size_t ratio = 4);
  void init(Rng& rng);
  void collect(ParamList& out, const std::string& prefix) const;
};

std::size_t mfia_param_count(std::size_t channels, std::size_t ratio = 4);

/// alpha in (0, 1), shape [N, C].
Tensor cam(const Branches& f, const CamParams& p);

/// Both channel gates multiply the original branch: (alpha1 * alpha2) * f_i,
/// where alpha2 is computed from the alpha1-weighted branches.
Tensor mfca(const Branches& f, const CamParams& cam1, const CamParams& cam2, std::size_t i);

/// beta in (0, 1), shape [N, 1, H, W], from the elementwise sum of branches.
Tensor sam(const Branches& fc, const SamParams& p);

/// beta * fc_i with fc_j = mfca(f, cam1, cam2, j).
Tensor mfia_forward(const Branches& f, const MfiaParams& p);

}  // namespace llts
