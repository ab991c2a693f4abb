#include "signtok/losses.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "signtok/error.hpp"

namespace signtok::losses {

using nn::Scalar;
using nn::Storage;

namespace {

std::vector<std::size_t> offsets(const Lengths& lengths) {
  std::vector<std::size_t> off(lengths.size() + 1, 0);
  for (std::size_t i = 0; i < lengths.size(); ++i) off[i + 1] = off[i] + lengths[i];
  return off;
}

void require_finite(const Tensor& t, const char* what) {
  for (Scalar v : t.values())
    if (!std::isfinite(v)) throw NumericError(std::string(what) + ": non-finite input");
}

}  // namespace

std::vector<double> SimilarityBatch::grid(std::size_t i, std::size_t j) const {
  const auto ro = offsets(visual_lengths);
  const auto co = offsets(text_lengths);
  std::vector<double> out;
  out.reserve(visual_lengths.at(i) * text_lengths.at(j));
  for (std::size_t a = ro[i]; a < ro[i + 1]; ++a)
    for (std::size_t b = co[j]; b < co[j + 1]; ++b) out.push_back(token_sim.at(a, b));
  return out;
}

Tensor block_max_mean(const Tensor& sim, const Lengths& row_lengths, const Lengths& col_lengths, bool rows_to_cols) {
  if (nn::total_length(row_lengths) != sim.rows() || nn::total_length(col_lengths) != sim.cols()) {
    throw ShapeError("block_max_mean: lengths do not match similarity " + sim.shape_string());
  }
  for (auto n : row_lengths)
    if (n == 0) throw DataError("block_max_mean: empty visual token list");
  for (auto n : col_lengths)
    if (n == 0) throw DataError("block_max_mean: empty text token list");
  const std::size_t R = row_lengths.size();
  const std::size_t Cb = col_lengths.size();
  const auto ro = offsets(row_lengths);
  const auto co = offsets(col_lengths);
  const std::size_t W = sim.cols();
  const auto& s = sim.values();

  // For every block and every reduced index, the flat position of its maximum.
  std::vector<std::size_t> argmax;
  Storage out(R * Cb, 0.0);
  for (std::size_t i = 0; i < R; ++i) {
    for (std::size_t j = 0; j < Cb; ++j) {
      double acc = 0;
      if (rows_to_cols) {
        for (std::size_t a = ro[i]; a < ro[i + 1]; ++a) {
          std::size_t best = a * W + co[j];
          for (std::size_t b = co[j] + 1; b < co[j + 1]; ++b)
            if (s[a * W + b] > s[best]) best = a * W + b;
          argmax.push_back(best);
          acc += s[best];
        }
        out[i * Cb + j] = acc / static_cast<double>(row_lengths[i]);
      } else {
        for (std::size_t b = co[j]; b < co[j + 1]; ++b) {
          std::size_t best = ro[i] * W + b;
          for (std::size_t a = ro[i] + 1; a < ro[i + 1]; ++a)
            if (s[a * W + b] > s[best]) best = a * W + b;
          argmax.push_back(best);
          acc += s[best];
        }
        out[i * Cb + j] = acc / static_cast<double>(col_lengths[j]);
      }
    }
  }
  return nn::make_result(R, Cb, std::move(out), {sim},
                         [argmax = std::move(argmax), row_lengths, col_lengths, rows_to_cols, R, Cb](
                             nn::detail::Node& node) {
                           auto& g = node.parents[0]->grad;
                           std::size_t k = 0;
                           for (std::size_t i = 0; i < R; ++i) {
                             for (std::size_t j = 0; j < Cb; ++j) {
                               const std::size_t count = rows_to_cols ? row_lengths[i] : col_lengths[j];
                               const double w = node.grad[i * Cb + j] / static_cast<double>(count);
                               for (std::size_t c = 0; c < count; ++c) g[argmax[k++]] += w;
                             }
                           }
                         });
}

SimilarityBatch token_similarity_aggregate(const Tensor& visual, const Lengths& visual_lengths, const Tensor& text,
                                           const Lengths& text_lengths) {
  if (visual.cols() != text.cols()) {
    throw ShapeError("token_similarity_aggregate: visual " + visual.shape_string() + " vs text " + text.shape_string());
  }
  if (visual_lengths.empty() || text_lengths.empty()) throw DataError("token_similarity_aggregate: empty batch");
  SimilarityBatch out;
  out.visual_lengths = visual_lengths;
  out.text_lengths = text_lengths;
  out.token_sim = nn::matmul(nn::l2_normalize_rows(visual), nn::l2_normalize_rows(text), false, true);
  out.z_v2t = block_max_mean(out.token_sim, visual_lengths, text_lengths, true);
  out.z_t2v = block_max_mean(out.token_sim, visual_lengths, text_lengths, false);
  return out;
}

Tensor symmetric_diagonal_ce(const Tensor& logits) {
  const std::size_t B = logits.rows();
  if (B == 0 || logits.cols() != B) throw ShapeError("info_nce: similarity must be square, got " + logits.shape_string());
  require_finite(logits, "info_nce");
  const auto& x = logits.values();
  // Row and column softmax probabilities, computed stably.
  Storage prow(B * B), pcol(B * B);
  double loss = 0;
  for (std::size_t i = 0; i < B; ++i) {
    double m = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < B; ++j) m = std::max(m, x[i * B + j]);
    double z = 0;
    for (std::size_t j = 0; j < B; ++j) z += std::exp(x[i * B + j] - m);
    for (std::size_t j = 0; j < B; ++j) prow[i * B + j] = std::exp(x[i * B + j] - m) / z;
    loss -= x[i * B + i] - m - std::log(z);
  }
  for (std::size_t j = 0; j < B; ++j) {
    double m = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < B; ++i) m = std::max(m, x[i * B + j]);
    double z = 0;
    for (std::size_t i = 0; i < B; ++i) z += std::exp(x[i * B + j] - m);
    for (std::size_t i = 0; i < B; ++i) pcol[i * B + j] = std::exp(x[i * B + j] - m) / z;
    loss -= x[j * B + j] - m - std::log(z);
  }
  const double norm = 1.0 / (2.0 * static_cast<double>(B));
  Storage value{loss * norm};
  return nn::make_result(1, 1, std::move(value), {logits},
                         [prow = std::move(prow), pcol = std::move(pcol), B, norm](nn::detail::Node& node) {
                           auto& g = node.parents[0]->grad;
                           const double up = node.grad[0] * norm;
                           for (std::size_t i = 0; i < B; ++i)
                             for (std::size_t j = 0; j < B; ++j)
                               g[i * B + j] += up * (prow[i * B + j] + pcol[i * B + j] - (i == j ? 2.0 : 0.0));
                         });
}

Tensor info_nce(const Tensor& z, const Tensor& scale) {
  if (scale.size() != 1) throw ShapeError("info_nce: scale must be [1x1], got " + scale.shape_string());
  return symmetric_diagonal_ce(nn::scale_by(z, scale));
}

Tensor info_nce(const Tensor& z, double tau) {
  if (!(tau > 0)) throw NumericError("info_nce: temperature must be positive");
  return info_nce(z, Tensor::scalar(1.0 / tau));
}

Tensor clcl_loss(const SimilarityBatch& batch, const Tensor& scale, double alpha) {
  if (alpha < 0 || alpha > 1) throw UsageError("clcl_loss: alpha must lie in [0,1]");
  return nn::add(nn::scale(info_nce(batch.z_v2t, scale), alpha), nn::scale(info_nce(batch.z_t2v, scale), 1.0 - alpha));
}

Tensor dual_level_loss(const Tensor& l_ce, const Tensor& l_hs, double beta) {
  if (beta < 0 || beta > 1) throw UsageError("dual_level_loss: beta must lie in [0,1]");
  return nn::add(nn::scale(l_ce, beta), nn::scale(l_hs, 1.0 - beta));
}

Tensor clip_global_loss(const Tensor& visual_summary, const Tensor& text_summary, const Tensor& scale) {
  if (visual_summary.rows() != text_summary.rows() || visual_summary.cols() != text_summary.cols()) {
    throw ShapeError("clip_global_loss: visual " + visual_summary.shape_string() + " vs text " +
                     text_summary.shape_string());
  }
  Tensor cos = nn::matmul(nn::l2_normalize_rows(visual_summary), nn::l2_normalize_rows(text_summary), false, true);
  return info_nce(cos, scale);
}

Tensor clip_global_loss(const Tensor& visual, const Lengths& visual_lengths, const Tensor& text,
                        const Lengths& text_lengths, const Tensor& scale) {
  return clip_global_loss(nn::segment_mean(visual, visual_lengths), nn::segment_mean(text, text_lengths), scale);
}

Tensor lm_loss(const Tensor& logits, std::span<const std::size_t> targets, double smoothing, std::size_t pad_id) {
  const std::size_t S = logits.rows();
  const std::size_t d = logits.cols();
  if (targets.size() != S) {
    throw ShapeError("lm_loss: " + std::to_string(targets.size()) + " targets for logits " + logits.shape_string());
  }
  if (smoothing < 0 || smoothing >= 1) throw UsageError("lm_loss: label smoothing must lie in [0,1)");
  if (d < 2) throw ShapeError("lm_loss: need at least two classes");
  require_finite(logits, "lm_loss");
  const double off = smoothing / static_cast<double>(d - 1);
  const double on = 1.0 - smoothing;
  const auto& x = logits.values();
  Storage probs(S * d, 0.0);
  std::vector<bool> active(S, false);
  std::size_t count = 0;
  double loss = 0;
  for (std::size_t r = 0; r < S; ++r) {
    if (targets[r] >= d) {
      throw DataError("lm_loss: target id " + std::to_string(targets[r]) + " out of range for " + std::to_string(d) +
                      " classes");
    }
    if (targets[r] == pad_id) continue;
    active[r] = true;
    ++count;
    double m = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < d; ++c) m = std::max(m, x[r * d + c]);
    double z = 0;
    for (std::size_t c = 0; c < d; ++c) z += std::exp(x[r * d + c] - m);
    const double lz = m + std::log(z);
    for (std::size_t c = 0; c < d; ++c) {
      const double logp = x[r * d + c] - lz;
      probs[r * d + c] = std::exp(logp);
      const double q = c == targets[r] ? on : off;
      if (q > 0) loss -= q * logp;
    }
  }
  if (count == 0) throw DataError("lm_loss: every target is padding");
  const double norm = 1.0 / static_cast<double>(count);
  std::vector<std::size_t> tgt(targets.begin(), targets.end());
  Storage value{loss * norm};
  return nn::make_result(
      1, 1, std::move(value), {logits},
      [probs = std::move(probs), active = std::move(active), tgt = std::move(tgt), S, d, on, off,
       norm](nn::detail::Node& node) {
        auto& g = node.parents[0]->grad;
        const double up = node.grad[0] * norm;
        for (std::size_t r = 0; r < S; ++r) {
          if (!active[r]) continue;
          for (std::size_t c = 0; c < d; ++c) g[r * d + c] += up * (probs[r * d + c] - (c == tgt[r] ? on : off));
        }
      });
}

Tensor add_temperature(nn::ParameterSet& params) {
  return params.add("temperature.logit_scale", nn::Component::temperature,
                    Tensor::scalar(std::log(1.0 / kInitialTemperature)));
}

void clamp_temperature(Tensor& logit_scale) {
  auto v = logit_scale.mutable_values();
  v[0] = std::min(v[0], std::log(kMaxLogitScale));
}

Tensor temperature_scale(const Tensor& logit_scale) { return nn::exp(logit_scale); }

}  // namespace signtok::losses
