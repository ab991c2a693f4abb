#pragma once

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "signtok/corpus.hpp"
#include "signtok/losses.hpp"

namespace signtok::metrics {

using Sentence = std::vector<std::string>;

// Whitespace tokenization; the synthetic vocabulary needs no normalization.
Sentence tokenize(std::string_view text);
std::string join(const Sentence& words);

// Corpus BLEU with a single reference per hypothesis: clipped n-gram counts are
// summed over the corpus, precisions combined by a uniform geometric mean over
// orders 1..max_n, times the brevity penalty exp(1 - r/c) when c < r. No smoothing:
// any zero precision gives 0.
double corpus_bleu(std::span<const Sentence> hyps, std::span<const Sentence> refs, int max_n);

std::size_t lcs_length(const Sentence& a, const Sentence& b);
// Mean over sentences of the LCS F1 (beta = 1); 0 for a sentence with no common subsequence.
double rouge_l_f1(std::span<const Sentence> hyps, std::span<const Sentence> refs);

struct EvalReport {
  double bleu[4] = {0, 0, 0, 0};  // BLEU-1 .. BLEU-4
  double rouge_l_f1 = 0;
  std::size_t num_sentences = 0;
  std::optional<double> alignment_accuracy;
  std::optional<double> reduction_ratio;

  double bleu4() const { return bleu[3]; }
  std::string to_json() const;
  static std::string csv_header();
  std::string csv_row() const;
};

EvalReport evaluate(std::span<const Sentence> hyps, std::span<const Sentence> refs);

// For each visual token of one video, the index of its true gloss within the
// paired pseudo-gloss sequence, or nullopt when the token has no match. A token
// is assigned the sign it overlaps most; the sign maps to its word and the word
// to its pseudo-gloss position.
std::vector<std::optional<std::size_t>> alignment_truth(std::span<const corpus::Span> token_spans,
                                                        const corpus::GroundTruth& truth,
                                                        std::span<const std::string> sign_names,
                                                        const corpus::PseudoGlossSequence& glosses);

// Fraction of matched visual tokens whose argmax over the paired sentence's
// gloss tokens (first index on ties) is the true gloss. Only the on-diagonal
// pairs (video i, sentence i) are scored; truth[i] has one entry per token.
double alignment_accuracy(const losses::SimilarityBatch& sim,
                          std::span<const std::vector<std::optional<std::size_t>>> truth);

// Analytic attention accounting for a stack of self-attention layers over B
// sequences of length L.
struct MemoryProfile {
  std::size_t length = 0;
  std::size_t layers = 0;
  std::size_t heads = 0;
  std::size_t batch = 0;
  std::size_t model_dim = 0;
  std::size_t score_elements = 0;       // per layer: B * heads * L^2
  std::size_t activation_elements = 0;  // all layers: scores + probabilities + projections
  std::size_t bytes_fp32 = 0;           // activation_elements * 4
  std::optional<std::size_t> measured_peak_bytes;

  static std::string csv_header();
  std::string csv_row() const;
};

MemoryProfile attention_memory_profile(std::size_t length, std::size_t layers, std::size_t heads,
                                       std::size_t batch, std::size_t model_dim = 0);

// Peak tensor storage (bytes above the starting live size) of one forward and
// backward pass of a transformer encoder over B sequences of length L.
std::size_t measure_attention_peak(std::size_t length, std::size_t layers, std::size_t heads, std::size_t batch,
                                   std::size_t model_dim, std::uint64_t seed = 0);

// Least-squares fit y = a + b x + c x^2; returns the coefficient of determination.
double quadratic_fit_r2(std::span<const double> x, std::span<const double> y);

}  // namespace signtok::metrics
