#include <algorithm>
#include <cmath>

#include "llts/datakit.hpp"
#include "llts/errors.hpp"
#include "llts/ops.hpp"
#include "llts/rng.hpp"

namespace llts {

DegradeParams DegradeParams::identity() {
  DegradeParams p;
  p.gamma_dark = 1.0;
  p.contrast_scale = 1.0;
  p.noise_sigma = 0.0;
  p.blur_sigma = 0.0;
  p.color_cast = {1.0, 1.0, 1.0};
  return p;
}

DegradeParams DegradeParams::profile(const std::string& name) {
  if (name == "none") return identity();
  DegradeParams p;
  if (name == "mild") {
    p.gamma_dark = 1.6;
    p.contrast_scale = 0.85;
    p.noise_sigma = 0.008;
    p.blur_sigma = 0.4;
    p.color_cast = {0.92, 0.95, 1.0};
  } else if (name == "night") {
    // Struct defaults.
  } else if (name == "severe") {
    p.gamma_dark = 3.0;
    p.contrast_scale = 0.55;
    p.noise_sigma = 0.03;
    p.blur_sigma = 1.0;
    p.color_cast = {0.8, 0.85, 1.0};
  } else {
    throw UsageError("unknown degradation profile '" + name + "' (none, mild, night, severe)");
  }
  return p;
}

void DegradeParams::validate() const {
  // gamma 1 is admitted so that the identity transform is expressible.
  if (!(gamma_dark >= 1.0 && gamma_dark <= 4.0)) throw UsageError("gamma_dark must lie in [1, 4]");
  if (!(contrast_scale > 0.0 && contrast_scale <= 1.0)) throw UsageError("contrast_scale must lie in (0, 1]");
  if (!(noise_sigma >= 0.0)) throw UsageError("noise_sigma must be non-negative");
  if (!(blur_sigma >= 0.0)) throw UsageError("blur_sigma must be non-negative");
  for (double c : color_cast)
    if (!(c > 0.0)) throw UsageError("color_cast multipliers must be positive");
}

nlohmann::json degrade_to_json(const DegradeParams& p) {
  return {{"order", {"color_cast", "gamma", "contrast", "blur", "noise", "clamp"}},
          {"gamma_dark", p.gamma_dark},
          {"contrast_scale", p.contrast_scale},
          {"noise_sigma", p.noise_sigma},
          {"blur_sigma", p.blur_sigma},
          {"color_cast", p.color_cast},
          {"seed", p.seed}};
}

Tensor degrade_lowlight(const Tensor& image, const DegradeParams& p) {
  p.validate();
  if (image.rank() != 3 || image.dim(0) != 3)
    throw ShapeError("degrade_lowlight expects [3,H,W], got " + shape_str(image.shape()));
  const std::size_t H = image.dim(1), W = image.dim(2), HW = H * W;
  std::vector<double> v(image.data().begin(), image.data().end());

  for (std::size_t c = 0; c < 3; ++c) {
    double* ch = v.data() + c * HW;
    double mean = 0.0;
    for (std::size_t i = 0; i < HW; ++i) {
      ch[i] = std::pow(std::max(0.0, ch[i] * p.color_cast[c]), p.gamma_dark);
      mean += ch[i];
    }
    mean /= static_cast<double>(HW);
    if (p.contrast_scale != 1.0)
      for (std::size_t i = 0; i < HW; ++i) ch[i] = mean + p.contrast_scale * (ch[i] - mean);
  }

  Tensor t({1, 3, H, W}, std::move(v));
  if (p.blur_sigma > 0.0) {
    const auto ksize = 2 * static_cast<std::size_t>(std::ceil(3.0 * p.blur_sigma)) + 1;
    NoGradGuard guard;
    t = gaussian_blur(t, ksize, p.blur_sigma);
  }
  std::vector<double> out(t.data().begin(), t.data().end());
  if (p.noise_sigma > 0.0) {
    Rng rng(p.seed, 11);
    for (double& x : out) x += rng.normal(0.0, p.noise_sigma);
  }
  for (double& x : out) x = std::clamp(x, 0.0, 1.0);
  return Tensor({3, H, W}, std::move(out));
}

}  // namespace llts
