#pragma once

#include <filesystem>
#include <string_view>
#include <vector>

#include "signtok/model.hpp"
#include "signtok/nn/checkpoint.hpp"

namespace signtok::translate {

using model::ForwardContext;
using model::SegmentBatch;
using nn::Lengths;
using nn::ParameterSet;
using nn::Rng;
using nn::Tensor;

struct TranslatorConfig {
  std::size_t vocab_size = 0;
  std::size_t encoder_layers = 3;
  std::size_t decoder_layers = 3;
  std::size_t heads = 8;
  std::size_t model_dim = 1024;
  std::size_t ffn_dim = 4096;
  double dropout = 0.1;
  std::size_t max_decode_len = 150;
  std::size_t beam_width = 4;
  double length_penalty = 1.0;

  void validate() const;
};

// A decoded sequence: BOS-prefixed ids, EOS-terminated unless length-capped.
struct Hypothesis {
  std::vector<std::size_t> tokens;
  double log_prob = 0;
  double score = 0;  // log_prob / generated_length^length_penalty
  bool finished = false;

  // Generated ids without the leading BOS (includes the terminal EOS if present).
  std::vector<std::size_t> output() const { return {tokens.begin() + 1, tokens.end()}; }
};

struct BeamResult {
  Hypothesis best;
  std::vector<Hypothesis> finalized;  // every hypothesis the search finalized, in order
};

struct ForwardResult {
  Tensor logits;            // [sum of steps x vocab]
  Tensor loss;              // mean label-smoothed cross-entropy over non-PAD steps
  std::vector<double> per_sample_loss;  // unsmoothed-weighting means, one per video (no gradient)
};

// Segment tokens -> mapper -> translation encoder -> decoder with causal
// self-attention and cross-attention -> vocabulary logits.
class Translator {
 public:
  Translator(ParameterSet& params, const model::VisualEncoderConfig& visual, const model::MapperConfig& mapper,
             const TranslatorConfig& cfg, Rng& rng);

  struct Memory {
    Tensor states;
    Lengths lengths;
  };

  Memory encode(const SegmentBatch& batch, const ForwardContext& ctx);
  // Decoder logits for teacher-forced inputs (packed, one group per memory group).
  Tensor decode_logits(const Memory& memory, std::span<const std::size_t> inputs, const Lengths& lengths,
                       const ForwardContext& ctx) const;

  // targets: one BOS ... EOS framed id sequence per video.
  ForwardResult forward(const SegmentBatch& batch, const std::vector<std::vector<std::size_t>>& targets,
                        double smoothing, const ForwardContext& ctx);

  Hypothesis greedy(const SegmentBatch& single_video);
  BeamResult beam(const SegmentBatch& single_video, std::size_t beam_width);
  // Greedy when width is 1, beam search otherwise; returns generated ids.
  std::vector<std::size_t> decode(const SegmentBatch& single_video, std::size_t beam_width);

  // Incremental decoding against one encoded video: each step feeds the last
  // token of every hypothesis and returns next-token log-probabilities (PAD and
  // BOS at -inf). Results match teacher-forced decode_logits on the prefixes.
  nn::DecoderCache start_decoding(const Memory& memory) const;
  std::vector<std::vector<double>> step_log_probs(nn::DecoderCache& cache,
                                                  std::span<const std::size_t> last_tokens) const;

  const TranslatorConfig& config() const { return cfg_; }
  model::VisualEncoder& visual() { return visual_; }
  const model::Mapper& mapper() const { return mapper_; }

 private:

  TranslatorConfig cfg_;
  model::VisualEncoder visual_;
  model::Mapper mapper_;
  nn::TransformerEncoder encoder_;
  nn::Embedding embedding_;
  nn::TransformerDecoder decoder_;
  nn::Linear output_;
};

// Stage-1 weight transfer policies.
enum class TransferPolicy { none, vle, vle_plus_te };

std::string_view policy_name(TransferPolicy p);
TransferPolicy policy_from_name(std::string_view name);

// none: nothing is loaded. vle: frame adapter, temporal conv and mapper weights
// are copied. vle_plus_te: additionally the visual context transformer
// initializes the translation encoder.
void load_stage1(ParameterSet& params, const nn::Checkpoint& checkpoint, TransferPolicy policy);
void load_stage1(ParameterSet& params, const std::filesystem::path& checkpoint, TransferPolicy policy);

}  // namespace signtok::translate
