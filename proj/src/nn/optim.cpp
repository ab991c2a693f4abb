#include "signtok/nn/optim.hpp"

#include <cmath>
#include <numbers>

#include "signtok/error.hpp"

namespace signtok::nn {

Scalar cosine_lr(Scalar base, std::size_t epoch, std::size_t total) {
  if (total == 0 || epoch >= total) return 0.0;
  const Scalar t = static_cast<Scalar>(epoch) / static_cast<Scalar>(total);
  return 0.5 * base * (1.0 + std::cos(std::numbers::pi * t));
}

Scalar global_grad_norm(const ParameterSet& params) {
  Scalar sq = 0.0;
  for (const auto& p : params.items()) {
    if (!p.trainable) continue;
    for (Scalar g : p.tensor.grad()) sq += g * g;
  }
  return std::sqrt(sq);
}

Scalar clip_grad_norm(ParameterSet& params, Scalar max_norm) {
  const Scalar norm = global_grad_norm(params);
  if (!std::isfinite(norm)) throw NumericError("non-finite gradient norm");
  if (norm > max_norm && norm > 0.0) {
    const Scalar factor = max_norm / norm;
    for (auto& p : params.items()) {
      if (!p.trainable) continue;
      for (Scalar& g : p.tensor.mutable_grad()) g *= factor;
    }
  }
  return norm;
}

Sgd::Sgd(ParameterSet& params, SgdConfig cfg) : params_(params), cfg_(cfg), lr_(cfg.lr) {
  if (cfg.lr <= 0.0) throw UsageError("sgd: learning rate must be positive");
  if (cfg.grad_clip <= 0.0) throw UsageError("sgd: clip threshold must be positive");
  for (const auto& p : params_.items())
    if (p.trainable) buffers_[p.name].assign(p.tensor.size(), 0.0);
}

void Sgd::set_epoch(std::size_t epoch) { lr_ = cosine_lr(cfg_.lr, epoch, cfg_.epochs); }

void Sgd::step() {
  clip_grad_norm(params_, cfg_.grad_clip);
  for (auto& p : params_.items()) {
    if (!p.trainable) continue;
    auto& buf = buffers_.at(p.name);
    auto w = p.tensor.mutable_values();
    auto g = p.tensor.mutable_grad();
    for (std::size_t i = 0; i < w.size(); ++i) {
      const Scalar d = g[i] + cfg_.weight_decay * w[i];
      buf[i] = cfg_.momentum * buf[i] + d;
      w[i] -= lr_ * buf[i];
    }
  }
}

void Sgd::load_state(const std::map<std::string, std::vector<Scalar>>& state) {
  for (auto& [name, buf] : buffers_) {
    auto it = state.find(name);
    if (it == state.end()) throw DataError("optimizer state missing buffer for '" + name + "'");
    if (it->second.size() != buf.size()) throw DataError("optimizer state size mismatch for '" + name + "'");
    buf = it->second;
  }
}

}  // namespace signtok::nn
