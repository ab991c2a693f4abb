#pragma once

#include <map>
#include <string>
#include <vector>

#include "signtok/nn/layers.hpp"

namespace signtok::nn {

struct SgdConfig {
  Scalar lr = 0.03;
  Scalar momentum = 0.9;
  Scalar weight_decay = 0.0;
  Scalar grad_clip = 1.0;  // global L2 norm threshold
  std::size_t epochs = 80; // horizon of the cosine schedule
};

// Cosine annealing evaluated once per epoch, no warmup: base at epoch 0, zero at `total`.
Scalar cosine_lr(Scalar base, std::size_t epoch, std::size_t total);

Scalar global_grad_norm(const ParameterSet& params);

// Scales all gradients so their global norm is at most max_norm; returns the norm
// measured before scaling.
Scalar clip_grad_norm(ParameterSet& params, Scalar max_norm);

// Momentum SGD with coupled weight decay, matching the usual
//   d = g + wd * w;  buf = mu * buf + d;  w -= lr * buf
class Sgd {
 public:
  Sgd(ParameterSet& params, SgdConfig cfg);

  // Clips, then applies one update with the current learning rate.
  void step();
  void set_epoch(std::size_t epoch);
  Scalar lr() const { return lr_; }
  const SgdConfig& config() const { return cfg_; }

  // Momentum buffers keyed by parameter name (checkpointing).
  const std::map<std::string, std::vector<Scalar>>& state() const { return buffers_; }
  void load_state(const std::map<std::string, std::vector<Scalar>>& state);

 private:
  ParameterSet& params_;
  SgdConfig cfg_;
  Scalar lr_;
  std::map<std::string, std::vector<Scalar>> buffers_;
};

}  // namespace signtok::nn
