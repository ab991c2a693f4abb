#pragma once

#include <span>
#include <vector>

#include "signtok/nn/layers.hpp"

namespace signtok::losses {

using nn::Lengths;
using nn::Tensor;

// Token-level cosine similarities for every (video, sentence) pair of a batch and
// their aggregation into batch-level similarity matrices.
struct SimilarityBatch {
  Tensor token_sim;  // [sum N_i x sum M_j] cosine similarities; block (i,j) is s^(i,j)
  Tensor z_v2t;      // [B_v x B_t]: (1/N_i) sum_a max_b s^(i,j)_ab
  Tensor z_t2v;      // [B_v x B_t]: (1/M_j) sum_b max_a s^(i,j)_ab
  Lengths visual_lengths;
  Lengths text_lengths;

  // Copy of the grid s^(i,j) as a row-major N_i x M_j matrix.
  std::vector<double> grid(std::size_t i, std::size_t j) const;
};

SimilarityBatch token_similarity_aggregate(const Tensor& visual, const Lengths& visual_lengths, const Tensor& text,
                                           const Lengths& text_lengths);

// Mean over each row block of the per-row maximum within each column block
// (rows_to_cols = true), or the transposed rule: mean over each column block of
// the per-column maximum within each row block. Output is [row blocks x col blocks].
Tensor block_max_mean(const Tensor& sim, const Lengths& row_lengths, const Lengths& col_lengths, bool rows_to_cols);

// Symmetric InfoNCE on logits = Z * scale (scale = 1/tau, a [1x1] tensor):
// -(1/2B) sum_i log softmax_row(i)_i - (1/2B) sum_j log softmax_col(j)_j.
Tensor info_nce(const Tensor& z, const Tensor& scale);
Tensor info_nce(const Tensor& z, double tau);
// Mean cross-entropy of the diagonal under row softmax and column softmax, the
// two halves of info_nce, on raw logits.
Tensor symmetric_diagonal_ce(const Tensor& logits);

// alpha * InfoNCE(Z_V2T) + (1 - alpha) * InfoNCE(Z_T2V).
Tensor clcl_loss(const SimilarityBatch& batch, const Tensor& scale, double alpha);
Tensor dual_level_loss(const Tensor& l_ce, const Tensor& l_hs, double beta);

// InfoNCE over the B x B cosine matrix of per-sequence mean-pooled summaries.
Tensor clip_global_loss(const Tensor& visual_summary, const Tensor& text_summary, const Tensor& scale);
Tensor clip_global_loss(const Tensor& visual, const Lengths& visual_lengths, const Tensor& text,
                        const Lengths& text_lengths, const Tensor& scale);

// Mean over non-PAD steps of the cross-entropy against the label-smoothed target
// (1 - eps on the target id, eps / (d - 1) on every other id).
Tensor lm_loss(const Tensor& logits, std::span<const std::size_t> targets, double smoothing,
               std::size_t pad_id = 0);

// Learnable logit scale s with 1/tau = exp(s), initialised to tau = 0.07.
Tensor add_temperature(nn::ParameterSet& params);
inline constexpr double kInitialTemperature = 0.07;
inline constexpr double kMaxLogitScale = 100.0;
// Clamps s to at most ln(kMaxLogitScale) after an optimizer step.
void clamp_temperature(Tensor& logit_scale);
Tensor temperature_scale(const Tensor& logit_scale);  // exp(s)

}  // namespace signtok::losses
