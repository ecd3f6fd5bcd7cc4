#pragma once

#include <string>
#include <vector>

#include "llts/ops.hpp"

namespace llts {

struct NamedParam {
  std::string name;
  Tensor tensor;
};

/// Ordered list of trainable tensors; the order fixes checkpoint layout and
/// the optimizer's update order.
using ParamList = std::vector<NamedParam>;

inline void collect_conv(ParamList& out, const std::string& prefix, const ConvSpec& c) {
  out.push_back({prefix + ".weight", c.weight});
  out.push_back({prefix + ".bias", c.bias});
}

inline std::size_t count_params(const ParamList& list) {
  std::size_t n = 0;
  for (const auto& p : list) n += p.tensor.numel();
  return n;
}

}  // namespace llts
