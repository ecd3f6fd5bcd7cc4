#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace llts {

struct GradSuiteResult {
  std::string module;  // tensorops, pgfe, mfia, detector
  std::string op;
  std::uint64_t seed = 0;
  double max_rel_error = 0;
  std::size_t coords = 0;
  std::size_t kinks = 0;
};

/// Modules covered by run_grad_suite, in run order.
const std::vector<std::string>& grad_suite_modules();

/// Finite-difference checks of every differentiable building block at random
/// points, seeds [0, seeds). scope is "all" or one module name.
std::vector<GradSuiteResult> run_grad_suite(const std::string& scope, std::size_t seeds);

}  // namespace llts
