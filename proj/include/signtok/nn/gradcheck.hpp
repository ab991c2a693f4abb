#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "signtok/nn/layers.hpp"

namespace signtok::nn {

struct GradCheckOptions {
  Scalar eps = 1e-5;
  // Coordinates sampled per tensor; 0 checks every coordinate.
  std::size_t max_coords_per_tensor = 0;
  std::uint64_t seed = 0;
};

struct GradCheckResult {
  Scalar max_rel_error = 0.0;
  std::size_t coords_checked = 0;
  std::string worst;  // "<tensor>[index]" of the largest discrepancy
};

// Compares reverse-mode gradients of the scalar `loss` against central
// differences (f(x+e) - f(x-e)) / 2e. Relative error per coordinate is
// |g_ad - g_fd| / max(1, |g_ad|, |g_fd|). `loss` must be deterministic.
GradCheckResult grad_check(const std::function<Tensor()>& loss,
                           const std::vector<std::pair<std::string, Tensor>>& inputs,
                           const GradCheckOptions& options = {});

GradCheckResult grad_check(const std::function<Tensor()>& loss, const ParameterSet& params,
                           const GradCheckOptions& options = {});

}  // namespace signtok::nn
