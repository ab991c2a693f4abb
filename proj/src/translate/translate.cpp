#include "signtok/translate.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>

#include "signtok/corpus.hpp"
#include "signtok/error.hpp"
#include "signtok/losses.hpp"

namespace signtok::translate {

using corpus::Vocabulary;
using nn::Component;

void TranslatorConfig::validate() const {
  if (vocab_size <= Vocabulary::kUnk) throw UsageError("translator vocabulary must include the reserved tokens");
  if (model_dim == 0 || ffn_dim == 0) throw UsageError("translator dims must be positive");
  if (heads == 0 || model_dim % heads != 0) throw UsageError("model_dim must be divisible by heads");
  if (beam_width < 1) throw UsageError("beam width must be >= 1");
  if (max_decode_len < 1) throw UsageError("max decode length must be >= 1");
  if (dropout < 0 || dropout >= 1) throw UsageError("dropout must lie in [0,1)");
}

Translator::Translator(ParameterSet& params, const model::VisualEncoderConfig& visual,
                       const model::MapperConfig& mapper, const TranslatorConfig& cfg, Rng& rng)
    : cfg_(cfg), visual_(params, visual, rng, false), mapper_(params, mapper, rng) {
  cfg.validate();
  if (mapper.out_dim != cfg.model_dim) throw UsageError("mapper output dim must equal the translator model dim");
  encoder_ = nn::TransformerEncoder(params, "translation.encoder", Component::translation_encoder,
                                    {cfg.encoder_layers, cfg.model_dim, cfg.heads, cfg.ffn_dim, cfg.dropout}, rng);
  embedding_ = nn::Embedding(params, "translation.decoder.embedding", Component::translation_decoder, cfg.vocab_size,
                             cfg.model_dim, rng);
  decoder_ = nn::TransformerDecoder(params, "translation.decoder", Component::translation_decoder,
                                    {cfg.decoder_layers, cfg.model_dim, cfg.heads, cfg.ffn_dim, cfg.dropout}, rng);
  output_ = nn::Linear(params, "translation.decoder.output", Component::translation_decoder, cfg.model_dim,
                       cfg.vocab_size, rng);
  // A small output projection keeps the initial predictive close to uniform.
  const Tensor small = nn::normal_init(cfg.model_dim, cfg.vocab_size, 0.02, rng);
  std::copy(small.values().begin(), small.values().end(), output_.weight.mutable_values().begin());
}

Translator::Memory Translator::encode(const SegmentBatch& batch, const ForwardContext& ctx) {
  Tensor mapped = mapper_(visual_.tokens(batch, ctx), ctx);
  return {encoder_.forward(nn::add_positions(mapped, batch.tokens_per_video), batch.tokens_per_video, ctx),
          batch.tokens_per_video};
}

Tensor Translator::decode_logits(const Memory& memory, std::span<const std::size_t> inputs, const Lengths& lengths,
                                 const ForwardContext& ctx) const {
  // Embeddings are scaled so lexical content and positions have comparable magnitude.
  Tensor x = nn::scale(embedding_(inputs), std::sqrt(static_cast<double>(cfg_.model_dim)));
  Tensor h = decoder_.forward(nn::add_positions(x, lengths), lengths, memory.states, memory.lengths, ctx);
  return output_(h);
}

ForwardResult Translator::forward(const SegmentBatch& batch, const std::vector<std::vector<std::size_t>>& targets,
                                  double smoothing, const ForwardContext& ctx) {
  if (targets.size() != batch.tokens_per_video.size()) throw UsageError("translate_forward: one target per video");
  std::vector<std::size_t> inputs, labels;
  Lengths lengths;
  for (const auto& t : targets) {
    if (t.size() < 2 || t.front() != Vocabulary::kBos || t.back() != Vocabulary::kEos) {
      throw DataError("translate_forward: targets must be BOS ... EOS framed and non-empty");
    }
    inputs.insert(inputs.end(), t.begin(), t.end() - 1);
    labels.insert(labels.end(), t.begin() + 1, t.end());
    lengths.push_back(t.size() - 1);
  }
  Memory memory = encode(batch, ctx);
  ForwardResult out;
  out.logits = decode_logits(memory, inputs, lengths, ctx);
  out.loss = losses::lm_loss(out.logits, labels, smoothing, Vocabulary::kPad);

  nn::NoGradGuard no_grad;
  std::size_t offset = 0;
  for (std::size_t i = 0; i < lengths.size(); ++i) {
    Tensor rows = nn::slice_rows(out.logits.detach(), offset, lengths[i]);
    out.per_sample_loss.push_back(
        losses::lm_loss(rows, std::span(labels).subspan(offset, lengths[i]), smoothing, Vocabulary::kPad).item());
    offset += lengths[i];
  }
  return out;
}

nn::DecoderCache Translator::start_decoding(const Memory& memory) const {
  if (memory.lengths.size() != 1) throw UsageError("decoding expects the memory of exactly one video");
  return decoder_.start(memory.states);
}

std::vector<std::vector<double>> Translator::step_log_probs(nn::DecoderCache& cache,
                                                            std::span<const std::size_t> last_tokens) const {
  nn::NoGradGuard no_grad;
  const std::size_t D = cfg_.model_dim;
  Tensor x = nn::scale(embedding_(last_tokens), std::sqrt(static_cast<double>(D)));
  x = nn::add_row(x, nn::slice_rows(nn::sinusoidal_positions(cache.steps + 1, D), cache.steps, 1));
  Tensor logits = output_(decoder_.step(x, cache));
  const std::size_t V = cfg_.vocab_size;
  std::vector<std::vector<double>> out;
  for (std::size_t r = 0; r < last_tokens.size(); ++r) {
    std::vector<double> lp(V);
    double m = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < V; ++c) {
      lp[c] = logits.at(r, c);
      m = std::max(m, lp[c]);
    }
    double z = 0;
    for (double v : lp) z += std::exp(v - m);
    const double lz = m + std::log(z);
    for (auto& v : lp) v -= lz;
    // PAD and BOS are never generated.
    lp[Vocabulary::kPad] = -std::numeric_limits<double>::infinity();
    lp[Vocabulary::kBos] = -std::numeric_limits<double>::infinity();
    out.push_back(std::move(lp));
  }
  return out;
}

namespace {

double normalized(double log_prob, std::size_t generated, double penalty) {
  return log_prob / std::pow(static_cast<double>(std::max<std::size_t>(generated, 1)), penalty);
}

}  // namespace

Hypothesis Translator::greedy(const SegmentBatch& single_video) {
  if (single_video.tokens_per_video.size() != 1) throw UsageError("decode expects exactly one video");
  nn::NoGradGuard no_grad;
  Memory memory = encode(single_video, {false, nullptr});
  nn::DecoderCache cache = start_decoding(memory);
  Hypothesis h;
  h.tokens = {Vocabulary::kBos};
  for (std::size_t step = 0; step < cfg_.max_decode_len; ++step) {
    const auto lp = step_log_probs(cache, std::span(&h.tokens.back(), 1))[0];
    const std::size_t best = static_cast<std::size_t>(std::max_element(lp.begin(), lp.end()) - lp.begin());
    h.tokens.push_back(best);
    h.log_prob += lp[best];
    if (best == Vocabulary::kEos) {
      h.finished = true;
      break;
    }
  }
  h.score = normalized(h.log_prob, h.tokens.size() - 1, cfg_.length_penalty);
  return h;
}

BeamResult Translator::beam(const SegmentBatch& single_video, std::size_t beam_width) {
  if (single_video.tokens_per_video.size() != 1) throw UsageError("decode expects exactly one video");
  if (beam_width < 1) throw UsageError("beam width must be >= 1");
  nn::NoGradGuard no_grad;
  Memory memory = encode(single_video, {false, nullptr});

  struct Live {
    std::vector<std::size_t> tokens;
    double log_prob;
  };
  struct Candidate {
    double log_prob;
    std::size_t beam;
    std::size_t token;
  };
  std::vector<Live> live = {{{Vocabulary::kBos}, 0.0}};
  BeamResult result;
  const double penalty = cfg_.length_penalty;

  nn::DecoderCache cache = start_decoding(memory);
  for (std::size_t step = 0; step < cfg_.max_decode_len && !live.empty(); ++step) {
    std::vector<std::size_t> last;
    for (const auto& b : live) last.push_back(b.tokens.back());
    const auto lps = step_log_probs(cache, last);

    std::vector<Candidate> cands;
    for (std::size_t b = 0; b < live.size(); ++b)
      for (std::size_t t = 0; t < lps[b].size(); ++t)
        if (std::isfinite(lps[b][t])) cands.push_back({live[b].log_prob + lps[b][t], b, t});
    // Highest log-probability first; ties resolved by beam order, then token id.
    std::stable_sort(cands.begin(), cands.end(),
                     [](const Candidate& a, const Candidate& b) { return a.log_prob > b.log_prob; });

    std::vector<Live> next;
    std::vector<std::size_t> parents;
    for (std::size_t rank = 0; rank < cands.size() && next.size() < beam_width; ++rank) {
      const auto& c = cands[rank];
      std::vector<std::size_t> tokens = live[c.beam].tokens;
      tokens.push_back(c.token);
      if (c.token == Vocabulary::kEos) {
        // Only candidates ranked within the beam may finalize.
        if (rank >= beam_width) continue;
        Hypothesis h{std::move(tokens), c.log_prob, 0.0, true};
        h.score = normalized(h.log_prob, h.tokens.size() - 1, penalty);
        result.finalized.push_back(std::move(h));
      } else {
        next.push_back({std::move(tokens), c.log_prob});
        parents.push_back(c.beam);
      }
    }
    live = std::move(next);
    cache.select(parents);
    if (result.finalized.size() >= beam_width) break;
  }
  // Beams still alive at the length cap are finalized as truncated hypotheses.
  if (result.finalized.size() < beam_width) {
    for (auto& b : live) {
      Hypothesis h{std::move(b.tokens), b.log_prob, 0.0, false};
      h.score = normalized(h.log_prob, h.tokens.size() - 1, penalty);
      result.finalized.push_back(std::move(h));
    }
  }
  if (result.finalized.empty()) throw NumericError("beam search produced no hypothesis");
  std::size_t best = 0;
  for (std::size_t i = 1; i < result.finalized.size(); ++i)
    if (result.finalized[i].score > result.finalized[best].score) best = i;
  result.best = result.finalized[best];
  return result;
}

std::vector<std::size_t> Translator::decode(const SegmentBatch& single_video, std::size_t beam_width) {
  return beam_width <= 1 ? greedy(single_video).output() : beam(single_video, beam_width).best.output();
}

// ---- stage-1 transfer ----

namespace {
constexpr std::array<std::string_view, 3> kPolicyNames = {"none", "vle", "vle_plus_te"};
constexpr std::string_view kContextPrefix = "visual.context.";
constexpr std::string_view kEncoderPrefix = "translation.encoder.";
}  // namespace

std::string_view policy_name(TransferPolicy p) { return kPolicyNames[static_cast<std::size_t>(p)]; }

TransferPolicy policy_from_name(std::string_view name) {
  for (std::size_t i = 0; i < kPolicyNames.size(); ++i)
    if (kPolicyNames[i] == name) return static_cast<TransferPolicy>(i);
  throw UsageError("unknown transfer policy '" + std::string(name) + "' (expected none, vle or vle_plus_te)");
}

void load_stage1(ParameterSet& params, const nn::Checkpoint& checkpoint, TransferPolicy policy) {
  if (policy == TransferPolicy::none) return;
  nn::restore(params, checkpoint, {Component::frame_adapter, Component::temporal_conv, Component::mapper});
  if (policy != TransferPolicy::vle_plus_te) return;

  if (!checkpoint.has_component(Component::context_transformer)) {
    throw DataError("checkpoint has no parameters tagged 'context_transformer'");
  }
  std::size_t copied = 0;
  for (const auto& e : checkpoint.params) {
    if (e.component != Component::context_transformer) continue;
    if (!e.name.starts_with(kContextPrefix)) throw DataError("unexpected context transformer parameter '" + e.name + "'");
    const std::string target = std::string(kEncoderPrefix) + e.name.substr(kContextPrefix.size());
    nn::Parameter* p = params.find(target);
    if (!p) throw DataError("translation encoder has no parameter '" + target + "' to receive '" + e.name + "'");
    if (p->tensor.rows() != e.rows || p->tensor.cols() != e.cols) {
      throw DataError("context transformer parameter '" + e.name + "' does not fit '" + target + "' " +
                      p->tensor.shape_string());
    }
    std::copy(e.values.begin(), e.values.end(), p->tensor.mutable_values().begin());
    ++copied;
  }
  std::size_t encoder_params = 0;
  for (const auto& p : params.items())
    if (p.component == Component::translation_encoder) ++encoder_params;
  if (copied != encoder_params) {
    throw DataError("context transformer (" + std::to_string(copied) + " tensors) does not match translation encoder (" +
                    std::to_string(encoder_params) + " tensors)");
  }
}

void load_stage1(ParameterSet& params, const std::filesystem::path& checkpoint, TransferPolicy policy) {
  if (policy == TransferPolicy::none) return;
  load_stage1(params, nn::load_checkpoint(checkpoint), policy);
}

}  // namespace signtok::translate
