#pragma once

#include <span>
#include <vector>

#include "signtok/corpus.hpp"
#include "signtok/nn/layers.hpp"
#include "signtok/segmenter.hpp"

namespace signtok::model {

using nn::ForwardContext;
using nn::Lengths;
using nn::ParameterSet;
using nn::Rng;
using nn::Tensor;

struct VisualEncoderConfig {
  std::size_t c_in = 1024;
  std::size_t frame_dim = 512;
  std::size_t model_dim = 1024;
  std::size_t conv_kernel = 5;
  std::size_t context_layers = 3;
  std::size_t context_heads = 8;
  std::size_t ffn_dim = 4096;
  double dropout = 0.1;

  void validate() const;
  nn::TransformerConfig context() const { return {context_layers, model_dim, context_heads, ffn_dim, dropout}; }
};

struct LanguageEncoderConfig {
  std::size_t vocab_size = 0;
  std::size_t model_dim = 1024;
  std::size_t encoder_layers = 3;
  std::size_t heads = 8;
  std::size_t ffn_dim = 4096;
  double dropout = 0.1;

  void validate() const;
  nn::TransformerConfig encoder() const { return {encoder_layers, model_dim, heads, ffn_dim, dropout}; }
};

struct MapperConfig {
  std::size_t blocks = 3;
  std::size_t in_dim = 1024;
  std::size_t out_dim = 1024;
  double dropout = 0.1;

  void validate() const;
};

// All segments of a batch of videos packed row-wise. Segments shorter than the
// conv kernel are padded by repeating their final frame up to the kernel size.
struct SegmentBatch {
  Tensor frames;                // [sum(segment_lengths) x c_in], constant
  Lengths segment_lengths;      // padded lengths, each >= kernel
  Lengths tokens_per_video;     // segment count per video
  std::vector<std::vector<corpus::Span>> spans;  // provenance, per video
};

// Optional feature-noise augmentation: adds N(0, noise_sigma^2) to every frame value.
SegmentBatch pack_segments(std::span<const corpus::FrameSequence* const> videos,
                           std::span<const segment::SegmentSet* const> segments, std::size_t kernel,
                           double noise_sigma = 0.0, Rng* rng = nullptr);
SegmentBatch pack_segments(const corpus::FrameSequence& video, const segment::SegmentSet& segments,
                           std::size_t kernel);

// Frame adapter -> valid temporal conv -> batch norm -> ReLU -> mean over time,
// plus an optional context transformer over the per-video token sequences.
class VisualEncoder {
 public:
  VisualEncoder(ParameterSet& params, const VisualEncoderConfig& cfg, Rng& rng, bool with_context);

  // One token per segment: [total segments x model_dim].
  Tensor tokens(const SegmentBatch& batch, const ForwardContext& ctx);
  // Positional encodings + context transformer over each video's token sequence.
  Tensor contextualize(const Tensor& tokens, const Lengths& tokens_per_video, const ForwardContext& ctx) const;
  // Conv output length per segment (n - k + 1 on the padded lengths).
  Lengths conv_lengths(const SegmentBatch& batch) const;

  const VisualEncoderConfig& config() const { return cfg_; }
  bool has_context() const { return has_context_; }

 private:
  VisualEncoderConfig cfg_;
  nn::Linear frame_adapter_;
  Tensor conv_weight_;
  Tensor conv_bias_;
  nn::BatchNorm1d conv_norm_;
  nn::TransformerEncoder context_;
  bool has_context_ = false;
};

struct VisualEncoding {
  Tensor tokens;   // V^tok
  Tensor context;  // H_v over V^tok
};

VisualEncoding encode_segments(VisualEncoder& encoder, const SegmentBatch& batch, const ForwardContext& ctx);

// Per-token stack of (layer norm -> linear -> GELU -> dropout) blocks.
class Mapper {
 public:
  Mapper(ParameterSet& params, const MapperConfig& cfg, Rng& rng);
  Tensor operator()(const Tensor& tokens, const ForwardContext& ctx) const;
  const MapperConfig& config() const { return cfg_; }

 private:
  struct Block {
    nn::LayerNorm norm;
    nn::Linear proj;
  };
  MapperConfig cfg_;
  std::vector<Block> blocks_;
};

struct TextEncoding {
  Tensor embeddings;  // T^E: lexical embeddings, no positions
  Tensor hidden;      // T^H: transformer over T^E + positions
  Lengths lengths;
};

class LanguageEncoder {
 public:
  LanguageEncoder(ParameterSet& params, const LanguageEncoderConfig& cfg, Rng& rng);
  // ids holds the concatenated gloss ids of every sentence; lengths their counts.
  TextEncoding encode(std::span<const std::size_t> ids, const Lengths& lengths, const ForwardContext& ctx) const;
  const LanguageEncoderConfig& config() const { return cfg_; }

 private:
  LanguageEncoderConfig cfg_;
  nn::Embedding embedding_;
  nn::TransformerEncoder encoder_;
};

}  // namespace signtok::model
