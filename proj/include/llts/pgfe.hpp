#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "llts/ops.hpp"
#include "llts/params.hpp"

namespace llts {

class Rng;

/// Conv -> per-channel learnable scale/shift -> ReLU. No batch statistics,
/// so single-image inference is deterministic.
struct CbrParams {
  ConvSpec conv;
  Tensor norm_scale;  // [C]
  Tensor norm_shift;  // [C]

  static CbrParams make(std::size_t channels);
};

/// Prior-guided enhancement branch: residual illumination chain, contrast
/// stretch, unsharp edge boost.
struct PgeParams {
  std::vector<CbrParams> cbr;  // one per residual stage
  double gamma = 2.0;
  double delta = 2.5;
  std::size_t blur_ksize = 5;
  double blur_sigma = 1.0;

  static PgeParams make(std::size_t channels, std::size_t stages);
  void validate(std::size_t channels) const;
};

/// One affine coupling block of the detail-recovery branch. Channels
/// [0, split) form group A, [split, C) group B.
struct InnBlockParams {
  std::size_t split = 0;
  ConvSpec cdc_f;  // A -> B arm
  ConvSpec cdc_g;  // B -> A arm

  static InnBlockParams make(std::size_t channels, std::size_t split);
  void validate(std::size_t channels) const;
};

struct PgfeConfig {
  std::size_t in_channels = 3;
  std::size_t channels = 64;
  std::size_t stages = 3;
  std::size_t inn_blocks = 2;
  std::size_t split = 32;
  double gamma = 2.0;
  double delta = 2.5;
  std::size_t blur_ksize = 5;
  double blur_sigma = 1.0;
};

struct PgfeParams {
  ConvSpec stem;  // in -> channels, 3x3, pad 1
  PgeParams pge;
  std::vector<InnBlockParams> inn_blocks;
  ConvSpec fuse;  // channels -> channels, 1x1

  static PgfeParams make(const PgfeConfig& cfg);
  void init(Rng& rng);
  void collect(ParamList& out, const std::string& prefix) const;
  /// Parameters owned by the enhancement itself, i.e. everything but the stem.
  std::size_t enhancement_param_count() const;
};

/// Closed-form parameter counts.
std::size_t pgfe_stem_param_count(const PgfeConfig& cfg);
std::size_t pgfe_enhancement_param_count(const PgfeConfig& cfg);

/// Coupling exponent is clamped to this range before exp.
inline constexpr double kInnExpClamp = 8.0;

Tensor cbr_forward(const Tensor& x, const CbrParams& p);

/// v_0 = u1, v_t = v_{t-1} + CBR_t(v_{t-1}) for t = 1..T; returns u1 + v_T.
Tensor pge_residual_chain(const Tensor& u1, const PgeParams& p);

/// gamma * (x - mean) + mean, with the mean taken per image and channel.
Tensor contrast_enhance(const Tensor& x, double gamma);

/// delta * |y - blur(y)| + y.
Tensor edge_enhance(const Tensor& y, double delta, std::size_t ksize, double sigma);

Tensor pge_branch(const Tensor& s, const PgeParams& p);

Tensor inn_forward(const Tensor& u, const InnBlockParams& b, std::size_t block_index = 0);
Tensor inn_inverse(const Tensor& v, const InnBlockParams& b, std::size_t block_index = 0);
Tensor dtr_forward(const Tensor& s, const std::vector<InnBlockParams>& blocks);
Tensor dtr_inverse(const Tensor& v, const std::vector<InnBlockParams>& blocks);

/// relu(stem(img)), the 64-channel lift both branches start from.
Tensor pgfe_stem(const Tensor& img, const PgfeParams& p);

/// fuse(PGE(s) + DTR(s)) with s = relu(stem(img)).
Tensor pgfe_forward(const Tensor& img, const PgfeParams& p);

/// Parameters for visual previews: the stem copies RGB channel k % 3 into
/// feature k, residual stages are zero, and the first three fuse filters
/// average the features of each colour.
PgfeParams make_preview_pgfe(const PgfeConfig& cfg);

/// PGE branch mapped back to RGB through the first three fuse filters,
/// clamped to [0, 1]. Input [N,3,H,W] in [0, 1].
Tensor enhance_preview(const Tensor& img, const PgfeParams& p);

}  // namespace llts
