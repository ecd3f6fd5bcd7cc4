#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "llts/tensor.hpp"

namespace llts {

/// Max over coordinates of |analytic - central difference| / max(1, |analytic|)
/// for a scalar-valued f at x. eps must lie in [1e-6, 1e-3]. Where a kink lies
/// within eps of a coordinate, the matching one-sided difference is used
/// instead (see GradCheckReport::kinks).
double grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double eps = 1e-6);

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t coords_checked = 0;
  std::string worst;  // "tensor#index" of the largest error
  // Coordinates where the central difference straddled a kink: one one-sided
  // slope matched the analytic value and the two sides differed by more than
  // ten times that mismatch.
  std::size_t kinks = 0;
};

/// Checks every listed leaf tensor at once. f rebuilds the graph from the
/// leaves on each call; leaves are perturbed in place and restored.
/// When max_coords_per_tensor > 0, larger tensors are probed on a
/// seed-determined subset of that many coordinates.
GradCheckReport grad_check_leaves(const std::function<Tensor()>& f, std::vector<Tensor> leaves,
                                  double eps = 1e-6, std::size_t max_coords_per_tensor = 0,
                                  std::uint64_t seed = 0);

}  // namespace llts
