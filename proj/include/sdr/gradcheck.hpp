#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "sdr/tensor.hpp"

namespace sdr::ad {

struct GradCheckOptions {
  double step = 1e-6;
  /// 0 checks every coordinate; otherwise a seeded random subset per tensor.
  std::size_t max_coords_per_tensor = 0;
  std::uint64_t seed = 0;
  /// Skip coordinates whose +/- perturbation flips any ReLU.
  bool skip_kinks = true;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  std::size_t skipped = 0;
  /// Coordinates where |a| + |n| fell below the 1e-8 denominator floor.
  std::size_t floored = 0;
};

/// Central differences against reverse mode. `loss` must rebuild the graph
/// from `inputs` on every call and return a scalar. The error per coordinate
/// is |a - n| / max(1e-8, |a| + |n|).
GradCheckResult finite_difference_check(const std::function<Tensor<double>()>& loss, std::vector<Tensor<double>>& inputs,
                                        const GradCheckOptions& opts = {});

struct GradCheckCase {
  std::string name;
  GradCheckResult result;
};

/// Every differentiable layer on small random shapes plus the full U-Net
/// loss at random parameters (train mode, fixed dropout key).
std::vector<GradCheckCase> standard_gradchecks(std::uint64_t seed, std::size_t unet_base_channels = 2,
                                               std::size_t unet_coords_per_tensor = 40);

}  // namespace sdr::ad
