#include "signtok/nn/layers.hpp"

#include <array>
#include <cmath>

#include "signtok/error.hpp"

namespace signtok::nn {

namespace {
constexpr std::array<std::pair<Component, std::string_view>, 9> kComponentNames{{
    {Component::frame_adapter, "frame_adapter"},
    {Component::temporal_conv, "temporal_conv"},
    {Component::context_transformer, "context_transformer"},
    {Component::mapper, "mapper"},
    {Component::language_embedding, "language_embedding"},
    {Component::language_encoder, "language_encoder"},
    {Component::translation_encoder, "translation_encoder"},
    {Component::translation_decoder, "translation_decoder"},
    {Component::temperature, "temperature"},
}};
}  // namespace

std::string_view component_name(Component c) {
  for (const auto& [comp, name] : kComponentNames)
    if (comp == c) return name;
  return "unknown";
}

Component component_from_name(std::string_view name) {
  for (const auto& [comp, n] : kComponentNames)
    if (n == name) return comp;
  throw DataError("unknown component tag '" + std::string(name) + "'");
}

Tensor ParameterSet::add(std::string name, Component component, Tensor init, bool trainable) {
  if (index_.contains(name)) throw DataError("duplicate parameter name '" + name + "'");
  init.set_requires_grad(trainable);
  index_.emplace(name, params_.size());
  params_.push_back({std::move(name), component, init, trainable});
  return init;
}

const Parameter* ParameterSet::find(std::string_view name) const {
  auto it = index_.find(std::string(name));
  return it == index_.end() ? nullptr : &params_[it->second];
}

Parameter* ParameterSet::find(std::string_view name) {
  auto it = index_.find(std::string(name));
  return it == index_.end() ? nullptr : &params_[it->second];
}

const Parameter& ParameterSet::at(std::string_view name) const {
  const Parameter* p = find(name);
  if (!p) throw DataError("no parameter named '" + std::string(name) + "'");
  return *p;
}

std::vector<Tensor> ParameterSet::trainable() const {
  std::vector<Tensor> out;
  for (const auto& p : params_)
    if (p.trainable) out.push_back(p.tensor);
  return out;
}

bool ParameterSet::has_component(Component c) const {
  for (const auto& p : params_)
    if (p.component == c) return true;
  return false;
}

void ParameterSet::zero_grad() {
  for (auto& p : params_) p.tensor.zero_grad();
}

std::size_t ParameterSet::trainable_value_count() const {
  std::size_t n = 0;
  for (const auto& p : params_)
    if (p.trainable) n += p.tensor.size();
  return n;
}

Tensor xavier_uniform(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const Scalar bound = std::sqrt(6.0 / static_cast<Scalar>(fan_in + fan_out));
  std::uniform_real_distribution<Scalar> dist(-bound, bound);
  Tensor t = Tensor::zeros(fan_in, fan_out);
  for (auto& v : t.mutable_values()) v = dist(rng);
  return t;
}

Tensor normal_init(std::size_t rows, std::size_t cols, Scalar stddev, Rng& rng) {
  std::normal_distribution<Scalar> dist(0.0, stddev);
  Tensor t = Tensor::zeros(rows, cols);
  for (auto& v : t.mutable_values()) v = dist(rng);
  return t;
}

Linear::Linear(ParameterSet& params, const std::string& name, Component c, std::size_t in,
               std::size_t out, Rng& rng)
    : weight(params.add(name + ".weight", c, xavier_uniform(in, out, rng))),
      bias(params.add(name + ".bias", c, Tensor::zeros(1, out))) {}

LayerNorm::LayerNorm(ParameterSet& params, const std::string& name, Component c, std::size_t dim)
    : gamma(params.add(name + ".gamma", c, Tensor::full(1, dim, 1.0))),
      beta(params.add(name + ".beta", c, Tensor::zeros(1, dim))) {}

BatchNorm1d::BatchNorm1d(ParameterSet& params, const std::string& name, Component c,
                         std::size_t dim)
    : gamma(params.add(name + ".gamma", c, Tensor::full(1, dim, 1.0))),
      beta(params.add(name + ".beta", c, Tensor::zeros(1, dim))) {
  buffers.running_mean = params.add(name + ".running_mean", c, Tensor::zeros(1, dim), false);
  buffers.running_var = params.add(name + ".running_var", c, Tensor::full(1, dim, 1.0), false);
}

Tensor BatchNorm1d::forward(const Tensor& x, bool training) {
  return batch_norm(x, gamma, beta, buffers, training);
}

Embedding::Embedding(ParameterSet& params, const std::string& name, Component c,
                     std::size_t vocab, std::size_t dim, Rng& rng)
    : table(params.add(name + ".table", c,
                       normal_init(vocab, dim, 1.0 / std::sqrt(static_cast<Scalar>(dim)), rng))) {}

Tensor Embedding::operator()(std::span<const std::size_t> ids) const {
  for (auto id : ids) {
    if (id >= table.rows()) {
      throw DataError("embedding: token id " + std::to_string(id) + " out of range for vocabulary of " +
                      std::to_string(table.rows()));
    }
  }
  return gather_rows(table, ids);
}

MultiHeadAttention::MultiHeadAttention(ParameterSet& params, const std::string& name, Component c,
                                       std::size_t dim, std::size_t heads, Rng& rng)
    : q_(params, name + ".q", c, dim, dim, rng),
      k_(params, name + ".k", c, dim, dim, rng),
      v_(params, name + ".v", c, dim, dim, rng),
      o_(params, name + ".o", c, dim, dim, rng),
      heads_(heads) {
  if (heads == 0 || dim % heads != 0) {
    throw ShapeError("attention '" + name + "': dim " + std::to_string(dim) +
                     " not divisible by heads " + std::to_string(heads));
  }
}

Tensor MultiHeadAttention::forward(const Tensor& query, const Lengths& q_lengths,
                                   const Tensor& memory, const Lengths& m_lengths,
                                   const AttentionMask& mask) const {
  return attend(q_(query), k_(memory), v_(memory), q_lengths, m_lengths, mask);
}

Tensor MultiHeadAttention::attend(const Tensor& q, const Tensor& k, const Tensor& v, const Lengths& q_lengths,
                                  const Lengths& k_lengths, const AttentionMask& mask) const {
  return o_(attention(q, k, v, q_lengths, k_lengths, heads_, mask));
}

Tensor apply_dropout(const Tensor& x, Scalar p, const ForwardContext& ctx) {
  if (!ctx.training || p <= 0.0) return x;
  if (!ctx.rng) throw NumericError("dropout in training mode needs an RNG");
  return dropout(x, p, true, *ctx.rng);
}

TransformerEncoder::TransformerEncoder(ParameterSet& params, const std::string& name, Component c,
                                       const TransformerConfig& cfg, Rng& rng)
    : cfg_(cfg) {
  for (std::size_t i = 0; i < cfg.layers; ++i) {
    const std::string prefix = name + ".layers." + std::to_string(i);
    Layer layer;
    layer.norm1 = LayerNorm(params, prefix + ".norm1", c, cfg.dim);
    layer.attn = MultiHeadAttention(params, prefix + ".attn", c, cfg.dim, cfg.heads, rng);
    layer.norm2 = LayerNorm(params, prefix + ".norm2", c, cfg.dim);
    layer.up = Linear(params, prefix + ".ffn.up", c, cfg.dim, cfg.ffn_dim, rng);
    layer.down = Linear(params, prefix + ".ffn.down", c, cfg.ffn_dim, cfg.dim, rng);
    layers_.push_back(std::move(layer));
  }
  final_norm_ = LayerNorm(params, name + ".final_norm", c, cfg.dim);
}

Tensor TransformerEncoder::forward(const Tensor& x, const Lengths& lengths,
                                   const ForwardContext& ctx) const {
  Tensor h = x;
  for (const auto& layer : layers_) {
    Tensor n1 = layer.norm1(h);
    h = add(h, apply_dropout(layer.attn.forward(n1, lengths, n1, lengths, {}), cfg_.dropout, ctx));
    Tensor ff = layer.down(apply_dropout(gelu(layer.up(layer.norm2(h))), cfg_.dropout, ctx));
    h = add(h, apply_dropout(ff, cfg_.dropout, ctx));
  }
  return final_norm_(h);
}

TransformerDecoder::TransformerDecoder(ParameterSet& params, const std::string& name, Component c,
                                       const TransformerConfig& cfg, Rng& rng)
    : cfg_(cfg) {
  for (std::size_t i = 0; i < cfg.layers; ++i) {
    const std::string prefix = name + ".layers." + std::to_string(i);
    Layer layer;
    layer.norm1 = LayerNorm(params, prefix + ".norm1", c, cfg.dim);
    layer.self_attn = MultiHeadAttention(params, prefix + ".self_attn", c, cfg.dim, cfg.heads, rng);
    layer.norm2 = LayerNorm(params, prefix + ".norm2", c, cfg.dim);
    layer.cross_attn = MultiHeadAttention(params, prefix + ".cross_attn", c, cfg.dim, cfg.heads, rng);
    layer.norm3 = LayerNorm(params, prefix + ".norm3", c, cfg.dim);
    layer.up = Linear(params, prefix + ".ffn.up", c, cfg.dim, cfg.ffn_dim, rng);
    layer.down = Linear(params, prefix + ".ffn.down", c, cfg.ffn_dim, cfg.dim, rng);
    layers_.push_back(std::move(layer));
  }
  final_norm_ = LayerNorm(params, name + ".final_norm", c, cfg.dim);
}

Tensor TransformerDecoder::forward(const Tensor& x, const Lengths& lengths, const Tensor& memory,
                                   const Lengths& m_lengths, const ForwardContext& ctx) const {
  AttentionMask causal;
  causal.causal = true;
  Tensor h = x;
  for (const auto& layer : layers_) {
    Tensor n1 = layer.norm1(h);
    h = add(h, apply_dropout(layer.self_attn.forward(n1, lengths, n1, lengths, causal), cfg_.dropout, ctx));
    Tensor n2 = layer.norm2(h);
    h = add(h, apply_dropout(layer.cross_attn.forward(n2, lengths, memory, m_lengths, {}), cfg_.dropout, ctx));
    Tensor ff = layer.down(apply_dropout(gelu(layer.up(layer.norm3(h))), cfg_.dropout, ctx));
    h = add(h, apply_dropout(ff, cfg_.dropout, ctx));
  }
  return final_norm_(h);
}

void DecoderCache::select(std::span<const std::size_t> parents) {
  for (auto p : parents)
    if (p >= hypotheses) throw ShapeError("decoder cache: parent index out of range");
  for (auto& layer : layers) {
    std::vector<Tensor> k, v;
    for (auto p : parents) {
      k.push_back(layer.self_k[p]);
      v.push_back(layer.self_v[p]);
    }
    layer.self_k = std::move(k);
    layer.self_v = std::move(v);
  }
  hypotheses = parents.size();
}

DecoderCache TransformerDecoder::start(const Tensor& memory) const {
  DecoderCache cache;
  for (const auto& layer : layers_) {
    cache.layers.push_back({{Tensor()}, {Tensor()}, layer.cross_attn.project_key(memory),
                            layer.cross_attn.project_value(memory)});
  }
  return cache;
}

Tensor TransformerDecoder::step(const Tensor& x, DecoderCache& cache) const {
  const std::size_t hyps = x.rows();
  if (hyps != cache.hypotheses) throw ShapeError("decoder step: one input row per cached hypothesis expected");
  const Lengths ones(hyps, 1);
  Tensor h = x;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const auto& layer = layers_[l];
    auto& c = cache.layers[l];
    Tensor n1 = layer.norm1(h);
    Tensor k = layer.self_attn.project_key(n1), v = layer.self_attn.project_value(n1);
    Lengths key_lengths;
    for (std::size_t i = 0; i < hyps; ++i) {
      Tensor ki = slice_rows(k, i, 1), vi = slice_rows(v, i, 1);
      if (c.self_k[i].defined()) {
        ki = concat_rows(std::vector<Tensor>{c.self_k[i], ki});
        vi = concat_rows(std::vector<Tensor>{c.self_v[i], vi});
      }
      c.self_k[i] = ki;
      c.self_v[i] = vi;
      key_lengths.push_back(ki.rows());
    }
    h = add(h, layer.self_attn.attend(layer.self_attn.project_query(n1), concat_rows(c.self_k),
                                      concat_rows(c.self_v), ones, key_lengths, {}));
    Tensor n2 = layer.norm2(h);
    const std::vector<Tensor> mem_k(hyps, c.cross_k), mem_v(hyps, c.cross_v);
    h = add(h, layer.cross_attn.attend(layer.cross_attn.project_query(n2), concat_rows(mem_k), concat_rows(mem_v),
                                       ones, Lengths(hyps, c.cross_k.rows()), {}));
    h = add(h, layer.down(gelu(layer.up(layer.norm3(h)))));
  }
  ++cache.steps;
  return final_norm_(h);
}

}  // namespace signtok::nn
