#include "signtok/metrics.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>

#include <json.hpp>

#include "signtok/error.hpp"
#include "signtok/nn/layers.hpp"

namespace signtok::metrics {

Sentence tokenize(std::string_view text) {
  Sentence out;
  std::istringstream in{std::string(text)};
  for (std::string w; in >> w;) out.push_back(std::move(w));
  return out;
}

std::string join(const Sentence& words) {
  std::string out;
  for (const auto& w : words) {
    if (!out.empty()) out += ' ';
    out += w;
  }
  return out;
}

namespace {

void check_corpus(std::span<const Sentence> hyps, std::span<const Sentence> refs, const char* what) {
  if (hyps.empty()) throw DataError(std::string(what) + ": empty corpus");
  if (hyps.size() != refs.size()) {
    throw DataError(std::string(what) + ": " + std::to_string(hyps.size()) + " hypotheses but " +
                    std::to_string(refs.size()) + " references");
  }
}

using NgramCounts = std::map<std::vector<std::string>, std::size_t>;

NgramCounts ngrams(const Sentence& s, std::size_t n) {
  NgramCounts counts;
  for (std::size_t i = 0; i + n <= s.size(); ++i) ++counts[Sentence(s.begin() + i, s.begin() + i + n)];
  return counts;
}

}  // namespace

double corpus_bleu(std::span<const Sentence> hyps, std::span<const Sentence> refs, int max_n) {
  check_corpus(hyps, refs, "corpus_bleu");
  if (max_n < 1 || max_n > 4) throw UsageError("corpus_bleu: max_n must lie in 1..4");
  std::vector<std::size_t> matched(max_n, 0), total(max_n, 0);
  std::size_t hyp_len = 0, ref_len = 0;
  for (std::size_t s = 0; s < hyps.size(); ++s) {
    hyp_len += hyps[s].size();
    ref_len += refs[s].size();
    for (int n = 1; n <= max_n; ++n) {
      const auto h = ngrams(hyps[s], n);
      const auto r = ngrams(refs[s], n);
      for (const auto& [gram, count] : h) {
        total[n - 1] += count;
        auto it = r.find(gram);
        if (it != r.end()) matched[n - 1] += std::min(count, it->second);
      }
    }
  }
  double log_sum = 0;
  for (int n = 0; n < max_n; ++n) {
    if (matched[n] == 0) return 0.0;
    log_sum += std::log(static_cast<double>(matched[n]) / static_cast<double>(total[n]));
  }
  const double brevity =
      hyp_len < ref_len ? std::exp(1.0 - static_cast<double>(ref_len) / static_cast<double>(hyp_len)) : 1.0;
  return brevity * std::exp(log_sum / max_n);
}

std::size_t lcs_length(const Sentence& a, const Sentence& b) {
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

double rouge_l_f1(std::span<const Sentence> hyps, std::span<const Sentence> refs) {
  check_corpus(hyps, refs, "rouge_l_f1");
  double sum = 0;
  for (std::size_t s = 0; s < hyps.size(); ++s) {
    const auto lcs = static_cast<double>(lcs_length(hyps[s], refs[s]));
    if (lcs == 0) continue;
    const double p = lcs / static_cast<double>(hyps[s].size());
    const double r = lcs / static_cast<double>(refs[s].size());
    sum += 2 * p * r / (p + r);
  }
  return sum / static_cast<double>(hyps.size());
}

EvalReport evaluate(std::span<const Sentence> hyps, std::span<const Sentence> refs) {
  EvalReport report;
  for (int n = 1; n <= 4; ++n) report.bleu[n - 1] = corpus_bleu(hyps, refs, n);
  report.rouge_l_f1 = rouge_l_f1(hyps, refs);
  report.num_sentences = hyps.size();
  return report;
}

std::string EvalReport::to_json() const {
  nlohmann::json j = {{"bleu1", bleu[0]},         {"bleu2", bleu[1]}, {"bleu3", bleu[2]},
                      {"bleu4", bleu[3]},         {"rouge_l_f1", rouge_l_f1},
                      {"num_sentences", num_sentences}};
  if (alignment_accuracy) j["alignment_accuracy"] = *alignment_accuracy;
  if (reduction_ratio) j["reduction_ratio"] = *reduction_ratio;
  return j.dump();
}

std::string EvalReport::csv_header() {
  return "bleu1,bleu2,bleu3,bleu4,rouge_l_f1,num_sentences,alignment_accuracy,reduction_ratio";
}

std::string EvalReport::csv_row() const {
  std::ostringstream out;
  out.precision(6);
  out << std::fixed << bleu[0] << ',' << bleu[1] << ',' << bleu[2] << ',' << bleu[3] << ',' << rouge_l_f1 << ','
      << num_sentences << ',';
  if (alignment_accuracy) out << *alignment_accuracy;
  out << ',';
  if (reduction_ratio) out << *reduction_ratio;
  return out.str();
}

std::vector<std::optional<std::size_t>> alignment_truth(std::span<const corpus::Span> token_spans,
                                                        const corpus::GroundTruth& truth,
                                                        std::span<const std::string> sign_names,
                                                        const corpus::PseudoGlossSequence& glosses) {
  std::vector<std::optional<std::size_t>> out;
  out.reserve(token_spans.size());
  for (const auto& token : token_spans) {
    std::size_t best_overlap = 0;
    std::optional<std::size_t> sign;
    for (std::size_t k = 0; k < truth.spans.size(); ++k) {
      const auto& s = truth.spans[k];
      const std::size_t lo = std::max(s.start, token.start), hi = std::min(s.end, token.end);
      const std::size_t overlap = hi > lo ? hi - lo : 0;
      if (overlap > best_overlap) {
        best_overlap = overlap;
        sign = truth.sign_ids[k];
      }
    }
    std::optional<std::size_t> index;
    if (sign) {
      if (*sign >= sign_names.size()) throw DataError("alignment_truth: sign id out of range in " + truth.video_id);
      auto it = std::find(glosses.glosses.begin(), glosses.glosses.end(), sign_names[*sign]);
      if (it != glosses.glosses.end()) index = static_cast<std::size_t>(it - glosses.glosses.begin());
    }
    out.push_back(index);
  }
  return out;
}

double alignment_accuracy(const losses::SimilarityBatch& sim,
                          std::span<const std::vector<std::optional<std::size_t>>> truth) {
  const std::size_t videos = sim.visual_lengths.size();
  if (truth.size() != videos) throw UsageError("alignment_accuracy: one truth vector per video");
  if (sim.text_lengths.size() < videos) throw UsageError("alignment_accuracy: missing paired sentences");
  std::size_t correct = 0, counted = 0;
  for (std::size_t i = 0; i < videos; ++i) {
    const std::size_t n = sim.visual_lengths[i], m = sim.text_lengths[i];
    if (truth[i].size() != n) throw UsageError("alignment_accuracy: truth length differs from token count");
    const auto grid = sim.grid(i, i);
    for (std::size_t a = 0; a < n; ++a) {
      if (!truth[i][a] || *truth[i][a] >= m) continue;
      const auto row = grid.begin() + static_cast<std::ptrdiff_t>(a * m);
      const auto best = static_cast<std::size_t>(std::max_element(row, row + static_cast<std::ptrdiff_t>(m)) - row);
      ++counted;
      if (best == *truth[i][a]) ++correct;
    }
  }
  if (counted == 0) throw DataError("alignment_accuracy: no visual token has a ground-truth gloss");
  return static_cast<double>(correct) / static_cast<double>(counted);
}

MemoryProfile attention_memory_profile(std::size_t length, std::size_t layers, std::size_t heads,
                                       std::size_t batch, std::size_t model_dim) {
  MemoryProfile p;
  p.length = length;
  p.layers = layers;
  p.heads = heads;
  p.batch = batch;
  p.model_dim = model_dim;
  p.score_elements = layers == 0 ? 0 : batch * heads * length * length;
  // Per layer: raw scores and softmax probabilities (quadratic), plus q, k, v,
  // the attention output and its projection (linear in L).
  const std::size_t per_layer = 2 * p.score_elements + 5 * batch * length * model_dim;
  p.activation_elements = layers * per_layer;
  p.bytes_fp32 = 4 * p.activation_elements;
  return p;
}

std::string MemoryProfile::csv_header() {
  return "length,layers,heads,batch,model_dim,score_elements,activation_elements,bytes_fp32,measured_peak_bytes";
}

std::string MemoryProfile::csv_row() const {
  std::ostringstream out;
  out << length << ',' << layers << ',' << heads << ',' << batch << ',' << model_dim << ',' << score_elements << ','
      << activation_elements << ',' << bytes_fp32 << ',';
  if (measured_peak_bytes) out << *measured_peak_bytes;
  return out.str();
}

std::size_t measure_attention_peak(std::size_t length, std::size_t layers, std::size_t heads, std::size_t batch,
                                   std::size_t model_dim, std::uint64_t seed) {
  nn::Rng rng(seed);
  nn::ParameterSet params;
  nn::TransformerEncoder encoder(params, "bench", nn::Component::context_transformer,
                                 {layers, model_dim, heads, 2 * model_dim, 0.0}, rng);
  nn::Tensor x = nn::normal_init(batch * length, model_dim, 1.0, rng);
  const nn::Lengths lengths(batch, length);
  const std::size_t before = nn::memory::stats().live_bytes;
  nn::memory::reset_peak();
  {
    nn::Tensor y = encoder.forward(x, lengths, {false, nullptr});
    nn::mean(y).backward();
  }
  return nn::memory::stats().peak_bytes - before;
}

double quadratic_fit_r2(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 3) throw UsageError("quadratic_fit_r2: need at least three paired points");
  const auto n = static_cast<Eigen::Index>(x.size());
  Eigen::MatrixXd design(n, 3);
  Eigen::VectorXd target(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    design(i, 0) = 1;
    design(i, 1) = x[i];
    design(i, 2) = x[i] * x[i];
    target(i) = y[i];
  }
  const Eigen::VectorXd coef = design.colPivHouseholderQr().solve(target);
  const Eigen::VectorXd residual = target - design * coef;
  const double ss_res = residual.squaredNorm();
  const double ss_tot = (target.array() - target.mean()).square().sum();
  return ss_tot == 0 ? 1.0 : 1.0 - ss_res / ss_tot;
}

}  // namespace signtok::metrics
