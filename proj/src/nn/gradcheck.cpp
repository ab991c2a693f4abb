#include "signtok/nn/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "signtok/error.hpp"

namespace signtok::nn {

namespace {
Scalar evaluate(const std::function<Tensor()>& loss) {
  NoGradGuard guard;
  const Scalar v = loss().item();
  if (!std::isfinite(v)) throw NumericError("grad_check: loss is not finite");
  return v;
}
}  // namespace

GradCheckResult grad_check(const std::function<Tensor()>& loss,
                           const std::vector<std::pair<std::string, Tensor>>& inputs,
                           const GradCheckOptions& options) {
  if (options.eps <= 0.0) throw UsageError("grad_check: eps must be positive");
  for (auto [name, t] : inputs) t.zero_grad();
  Tensor value = loss();
  if (!std::isfinite(value.item())) throw NumericError("grad_check: loss is not finite");
  value.backward();

  GradCheckResult result;
  std::mt19937_64 rng(options.seed);
  for (auto [name, t] : inputs) {
    std::vector<Scalar> analytic(t.size(), 0.0);
    if (!t.grad().empty()) std::copy(t.grad().begin(), t.grad().end(), analytic.begin());

    std::vector<std::size_t> coords(t.size());
    std::iota(coords.begin(), coords.end(), 0);
    if (options.max_coords_per_tensor > 0 && coords.size() > options.max_coords_per_tensor) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(options.max_coords_per_tensor);
      std::sort(coords.begin(), coords.end());
    }
    auto values = t.mutable_values();
    for (std::size_t i : coords) {
      const Scalar saved = values[i];
      values[i] = saved + options.eps;
      const Scalar up = evaluate(loss);
      values[i] = saved - options.eps;
      const Scalar down = evaluate(loss);
      values[i] = saved;
      const Scalar numeric = (up - down) / (2.0 * options.eps);
      const Scalar denom = std::max({1.0, std::abs(analytic[i]), std::abs(numeric)});
      const Scalar rel = std::abs(analytic[i] - numeric) / denom;
      ++result.coords_checked;
      if (rel > result.max_rel_error || result.worst.empty()) {
        result.max_rel_error = std::max(rel, result.max_rel_error);
        if (rel >= result.max_rel_error) result.worst = name + "[" + std::to_string(i) + "]";
      }
    }
  }
  return result;
}

GradCheckResult grad_check(const std::function<Tensor()>& loss, const ParameterSet& params,
                           const GradCheckOptions& options) {
  std::vector<std::pair<std::string, Tensor>> inputs;
  for (const auto& p : params.items())
    if (p.trainable) inputs.emplace_back(p.name, p.tensor);
  return grad_check(loss, inputs, options);
}

}  // namespace signtok::nn
