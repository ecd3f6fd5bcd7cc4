#include "llts/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "llts/errors.hpp"
#include "llts/rng.hpp"

namespace llts {

namespace {

constexpr double kKinkProbe = 1e-6;

void check_eps(double eps) {
  if (!(eps >= 1e-6 && eps <= 1e-3)) throw UsageError("grad_check: eps must be in [1e-6, 1e-3]");
}

double eval_scalar(const std::function<Tensor()>& f) {
  NoGradGuard guard;
  Tensor y = f();
  if (y.numel() != 1) throw ShapeError("grad_check: f must return a scalar, got " + shape_str(y.shape()));
  return y.item();
}

}  // namespace

GradCheckReport grad_check_leaves(const std::function<Tensor()>& f, std::vector<Tensor> leaves,
                                  double eps, std::size_t max_coords_per_tensor, std::uint64_t seed) {
  check_eps(eps);
  std::vector<bool> saved_flags;
  for (Tensor& t : leaves) {
    saved_flags.push_back(t.requires_grad());
    t.set_requires_grad(true);
    t.zero_grad();
  }
  Tensor y = f();
  if (y.numel() != 1) throw ShapeError("grad_check: f must return a scalar, got " + shape_str(y.shape()));
  y.backward();
  y = Tensor();

  GradCheckReport report;
  Rng rng(seed, 0x6c1a);
  for (std::size_t li = 0; li < leaves.size(); ++li) {
    Tensor& t = leaves[li];
    std::vector<double> analytic(t.numel(), 0.0);
    if (t.has_grad()) std::copy(t.grad().begin(), t.grad().end(), analytic.begin());
    std::vector<std::size_t> coords(t.numel());
    std::iota(coords.begin(), coords.end(), 0);
    if (max_coords_per_tensor > 0 && coords.size() > max_coords_per_tensor) {
      std::shuffle(coords.begin(), coords.end(), rng.engine());
      coords.resize(max_coords_per_tensor);
      std::sort(coords.begin(), coords.end());
    }
    auto values = t.mutable_data();
    for (std::size_t i : coords) {
      const double v = values[i];
      values[i] = v + eps;
      const double fp = eval_scalar(f);
      values[i] = v - eps;
      const double fm = eval_scalar(f);
      values[i] = v;
      const double numeric = (fp - fm) / (2.0 * eps);
      const double scale = std::max(1.0, std::fabs(analytic[i]));
      double err = std::fabs(analytic[i] - numeric) / scale;
      if (err > kKinkProbe) {
        // A relu or clamp kink inside (v - eps, v + eps) breaks the central
        // difference. The side without the kink still matches, and the two
        // one-sided slopes disagree by the jump.
        const double f0 = eval_scalar(f);
        const double fwd = (fp - f0) / eps, bwd = (f0 - fm) / eps;
        const double one_sided = std::min(std::fabs(analytic[i] - fwd), std::fabs(analytic[i] - bwd)) / scale;
        if (std::fabs(fwd - bwd) / scale > 10.0 * one_sided && one_sided < err) {
          err = one_sided;
          ++report.kinks;
        }
      }
      ++report.coords_checked;
      if (err >= report.max_rel_error) {
        report.max_rel_error = err;
        report.worst = "leaf" + std::to_string(li) + "#" + std::to_string(i);
      }
    }
  }
  for (std::size_t li = 0; li < leaves.size(); ++li) {
    leaves[li].zero_grad();
    leaves[li].set_requires_grad(saved_flags[li]);
  }
  return report;
}

double grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double eps) {
  Tensor leaf = x.detach();
  return grad_check_leaves([&] { return f(leaf); }, {leaf}, eps).max_rel_error;
}

}  // namespace llts
