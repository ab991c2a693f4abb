#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "signtok/nn/ops.hpp"
#include "signtok/nn/tensor.hpp"

namespace signtok::nn {

// Which part of the model a parameter belongs to. Weight transfer between
// training stages is decided per component.
enum class Component {
  frame_adapter,
  temporal_conv,
  context_transformer,
  mapper,
  language_embedding,
  language_encoder,
  translation_encoder,
  translation_decoder,
  temperature,
};

std::string_view component_name(Component c);
Component component_from_name(std::string_view name);

struct Parameter {
  std::string name;
  Component component;
  Tensor tensor;
  bool trainable = true;  // false for buffers such as batch-norm running stats
};

// Ordered, name-unique collection of parameters and buffers.
class ParameterSet {
 public:
  Tensor add(std::string name, Component component, Tensor init, bool trainable = true);

  const Parameter* find(std::string_view name) const;
  Parameter* find(std::string_view name);
  const Parameter& at(std::string_view name) const;

  const std::vector<Parameter>& items() const { return params_; }
  std::vector<Parameter>& items() { return params_; }
  std::vector<Tensor> trainable() const;
  bool has_component(Component c) const;

  void zero_grad();
  std::size_t trainable_value_count() const;

 private:
  std::vector<Parameter> params_;
  std::unordered_map<std::string, std::size_t> index_;
};

// Evaluation mode flag plus the dropout RNG for training mode.
struct ForwardContext {
  bool training = false;
  Rng* rng = nullptr;
};

Tensor xavier_uniform(std::size_t fan_in, std::size_t fan_out, Rng& rng);
Tensor normal_init(std::size_t rows, std::size_t cols, Scalar stddev, Rng& rng);

class Linear {
 public:
  Linear() = default;
  Linear(ParameterSet& params, const std::string& name, Component c, std::size_t in,
         std::size_t out, Rng& rng);
  Tensor operator()(const Tensor& x) const { return linear(x, weight, bias); }
  Tensor weight;
  Tensor bias;
};

class LayerNorm {
 public:
  LayerNorm() = default;
  LayerNorm(ParameterSet& params, const std::string& name, Component c, std::size_t dim);
  Tensor operator()(const Tensor& x) const { return layer_norm(x, gamma, beta); }
  Tensor gamma;
  Tensor beta;
};

class BatchNorm1d {
 public:
  BatchNorm1d() = default;
  BatchNorm1d(ParameterSet& params, const std::string& name, Component c, std::size_t dim);
  Tensor forward(const Tensor& x, bool training);
  Tensor gamma;
  Tensor beta;
  BatchNormBuffers buffers;
};

class Embedding {
 public:
  Embedding() = default;
  Embedding(ParameterSet& params, const std::string& name, Component c, std::size_t vocab,
            std::size_t dim, Rng& rng);
  Tensor operator()(std::span<const std::size_t> ids) const;
  Tensor table;
};

class MultiHeadAttention {
 public:
  MultiHeadAttention() = default;
  MultiHeadAttention(ParameterSet& params, const std::string& name, Component c, std::size_t dim,
                     std::size_t heads, Rng& rng);
  Tensor forward(const Tensor& query, const Lengths& q_lengths, const Tensor& memory,
                 const Lengths& m_lengths, const AttentionMask& mask) const;
  std::size_t heads() const { return heads_; }

  // Projections and the attend-then-project step, exposed for cached decoding.
  Tensor project_query(const Tensor& x) const { return q_(x); }
  Tensor project_key(const Tensor& x) const { return k_(x); }
  Tensor project_value(const Tensor& x) const { return v_(x); }
  Tensor attend(const Tensor& q, const Tensor& k, const Tensor& v, const Lengths& q_lengths,
                const Lengths& k_lengths, const AttentionMask& mask) const;

 private:
  Linear q_, k_, v_, o_;
  std::size_t heads_ = 1;
};

struct TransformerConfig {
  std::size_t layers = 3;
  std::size_t dim = 1024;
  std::size_t heads = 8;
  std::size_t ffn_dim = 4096;
  Scalar dropout = 0.1;
};

// Pre-norm transformer encoder with a final layer norm.
class TransformerEncoder {
 public:
  TransformerEncoder() = default;
  TransformerEncoder(ParameterSet& params, const std::string& name, Component c,
                     const TransformerConfig& cfg, Rng& rng);
  Tensor forward(const Tensor& x, const Lengths& lengths, const ForwardContext& ctx) const;
  const TransformerConfig& config() const { return cfg_; }

 private:
  struct Layer {
    LayerNorm norm1, norm2;
    MultiHeadAttention attn;
    Linear up, down;
  };
  TransformerConfig cfg_;
  std::vector<Layer> layers_;
  LayerNorm final_norm_;
};

// Keys and values cached per hypothesis for step-by-step decoding against a
// single memory sequence, plus the memory's cross-attention projections.
struct DecoderCache {
  struct Layer {
    std::vector<Tensor> self_k, self_v;  // one [steps x D] tensor per hypothesis
    Tensor cross_k, cross_v;             // [memory rows x D], shared
  };
  std::vector<Layer> layers;
  std::size_t hypotheses = 1;
  std::size_t steps = 0;

  // Hypothesis i of the result continues hypothesis parents[i].
  void select(std::span<const std::size_t> parents);
};

// Pre-norm decoder: causal self-attention, cross-attention, feed-forward.
class TransformerDecoder {
 public:
  TransformerDecoder() = default;
  TransformerDecoder(ParameterSet& params, const std::string& name, Component c,
                     const TransformerConfig& cfg, Rng& rng);
  Tensor forward(const Tensor& x, const Lengths& lengths, const Tensor& memory,
                 const Lengths& m_lengths, const ForwardContext& ctx) const;

  // Incremental inference: `start` caches the memory projections; each `step`
  // takes one new input row per hypothesis and returns the matching output
  // rows, equal to the last rows of `forward` over the full prefixes.
  DecoderCache start(const Tensor& memory) const;
  Tensor step(const Tensor& x, DecoderCache& cache) const;

 private:
  struct Layer {
    LayerNorm norm1, norm2, norm3;
    MultiHeadAttention self_attn, cross_attn;
    Linear up, down;
  };
  TransformerConfig cfg_;
  std::vector<Layer> layers_;
  LayerNorm final_norm_;
};

Tensor apply_dropout(const Tensor& x, Scalar p, const ForwardContext& ctx);

}  // namespace signtok::nn
