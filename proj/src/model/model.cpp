#include "signtok/model.hpp"

#include <cmath>

#include <random>

#include "signtok/error.hpp"

namespace signtok::model {

using nn::Component;

void VisualEncoderConfig::validate() const {
  if (c_in == 0 || frame_dim == 0 || model_dim == 0 || ffn_dim == 0) throw UsageError("visual encoder dims must be positive");
  if (conv_kernel == 0 || conv_kernel % 2 == 0) throw UsageError("conv kernel must be odd");
  if (context_heads == 0 || model_dim % context_heads != 0) throw UsageError("model_dim must be divisible by context_heads");
  if (dropout < 0 || dropout >= 1) throw UsageError("dropout must lie in [0,1)");
}

void LanguageEncoderConfig::validate() const {
  if (vocab_size == 0 || model_dim == 0 || ffn_dim == 0) throw UsageError("language encoder dims must be positive");
  if (heads == 0 || model_dim % heads != 0) throw UsageError("model_dim must be divisible by heads");
  if (dropout < 0 || dropout >= 1) throw UsageError("dropout must lie in [0,1)");
}

void MapperConfig::validate() const {
  if (blocks == 0 || in_dim == 0 || out_dim == 0) throw UsageError("mapper dims and block count must be positive");
  if (dropout < 0 || dropout >= 1) throw UsageError("dropout must lie in [0,1)");
}

SegmentBatch pack_segments(std::span<const corpus::FrameSequence* const> videos,
                           std::span<const segment::SegmentSet* const> segments, std::size_t kernel,
                           double noise_sigma, Rng* rng) {
  if (videos.size() != segments.size()) throw UsageError("pack_segments: video and segment-set counts differ");
  if (videos.empty()) throw DataError("pack_segments: empty batch");
  if (noise_sigma > 0 && !rng) throw UsageError("feature-noise augmentation needs an RNG");
  const std::size_t C = videos.front()->dim();
  std::size_t rows = 0;
  for (std::size_t v = 0; v < videos.size(); ++v) {
    if (videos[v]->dim() != C) throw DataError("video '" + videos[v]->video_id + "' has a different feature width");
    if (segments[v]->spans.empty()) throw DataError("video '" + videos[v]->video_id + "' has an empty segment set");
    for (const auto& s : segments[v]->spans) {
      if (s.end <= s.start || s.end > videos[v]->length()) {
        throw DataError("segment [" + std::to_string(s.start) + "," + std::to_string(s.end) + ") outside video '" +
                        videos[v]->video_id + "'");
      }
      rows += std::max(s.length(), kernel);
    }
  }

  SegmentBatch batch;
  nn::Storage data;
  data.reserve(rows * C);
  std::normal_distribution<double> noise(0.0, noise_sigma > 0 ? noise_sigma : 1.0);
  for (std::size_t v = 0; v < videos.size(); ++v) {
    const auto& frames = videos[v]->frames;
    batch.tokens_per_video.push_back(segments[v]->spans.size());
    batch.spans.push_back(segments[v]->spans);
    for (const auto& s : segments[v]->spans) {
      const std::size_t n = std::max(s.length(), kernel);
      for (std::size_t i = 0; i < n; ++i) {
        const std::size_t t = std::min(s.start + i, s.end - 1);  // repeat the last frame
        for (std::size_t c = 0; c < C; ++c) {
          double x = frames.at(t, c);
          if (noise_sigma > 0) x += noise(*rng);
          data.push_back(x);
        }
      }
      batch.segment_lengths.push_back(n);
    }
  }
  batch.frames = nn::make_result(rows, C, std::move(data), {}, nullptr);
  return batch;
}

SegmentBatch pack_segments(const corpus::FrameSequence& video, const segment::SegmentSet& segments,
                           std::size_t kernel) {
  const corpus::FrameSequence* v = &video;
  const segment::SegmentSet* s = &segments;
  return pack_segments(std::span(&v, 1), std::span(&s, 1), kernel);
}

VisualEncoder::VisualEncoder(ParameterSet& params, const VisualEncoderConfig& cfg, Rng& rng, bool with_context)
    : cfg_(cfg), has_context_(with_context) {
  cfg.validate();
  frame_adapter_ = nn::Linear(params, "visual.frame_adapter", Component::frame_adapter, cfg.c_in, cfg.frame_dim, rng);
  conv_weight_ = params.add("visual.temporal_conv.weight", Component::temporal_conv,
                            nn::xavier_uniform(cfg.conv_kernel * cfg.frame_dim, cfg.model_dim, rng));
  conv_bias_ = params.add("visual.temporal_conv.bias", Component::temporal_conv, Tensor::zeros(1, cfg.model_dim));
  conv_norm_ = nn::BatchNorm1d(params, "visual.temporal_conv.norm", Component::temporal_conv, cfg.model_dim);
  if (with_context) {
    context_ = nn::TransformerEncoder(params, "visual.context", Component::context_transformer, cfg.context(), rng);
  }
}

Lengths VisualEncoder::conv_lengths(const SegmentBatch& batch) const {
  return nn::conv1d_lengths(batch.segment_lengths, cfg_.conv_kernel);
}

Tensor VisualEncoder::tokens(const SegmentBatch& batch, const ForwardContext& ctx) {
  if (batch.frames.cols() != cfg_.c_in) {
    throw ShapeError("visual encoder expects c_in=" + std::to_string(cfg_.c_in) + ", got frames " +
                     batch.frames.shape_string());
  }
  Tensor v = frame_adapter_(batch.frames);
  Tensor conv = nn::conv1d(v, batch.segment_lengths, conv_weight_, conv_bias_, cfg_.conv_kernel);
  Tensor h = nn::relu(conv_norm_.forward(conv, ctx.training));
  return nn::segment_mean(h, conv_lengths(batch));
}

Tensor VisualEncoder::contextualize(const Tensor& tokens, const Lengths& tokens_per_video,
                                    const ForwardContext& ctx) const {
  if (!has_context_) throw UsageError("visual encoder was built without a context transformer");
  return context_.forward(nn::add_positions(tokens, tokens_per_video), tokens_per_video, ctx);
}

VisualEncoding encode_segments(VisualEncoder& encoder, const SegmentBatch& batch, const ForwardContext& ctx) {
  VisualEncoding out;
  out.tokens = encoder.tokens(batch, ctx);
  out.context = encoder.contextualize(out.tokens, batch.tokens_per_video, ctx);
  return out;
}

Mapper::Mapper(ParameterSet& params, const MapperConfig& cfg, Rng& rng) : cfg_(cfg) {
  cfg.validate();
  for (std::size_t i = 0; i < cfg.blocks; ++i) {
    const std::string prefix = "mapper.blocks." + std::to_string(i);
    const std::size_t in = i == 0 ? cfg.in_dim : cfg.out_dim;
    blocks_.push_back({nn::LayerNorm(params, prefix + ".norm", Component::mapper, in),
                       nn::Linear(params, prefix + ".proj", Component::mapper, in, cfg.out_dim, rng)});
  }
}

Tensor Mapper::operator()(const Tensor& tokens, const ForwardContext& ctx) const {
  Tensor h = tokens;
  for (const auto& b : blocks_) h = nn::apply_dropout(nn::gelu(b.proj(b.norm(h))), cfg_.dropout, ctx);
  return h;
}

LanguageEncoder::LanguageEncoder(ParameterSet& params, const LanguageEncoderConfig& cfg, Rng& rng) : cfg_(cfg) {
  cfg.validate();
  embedding_ = nn::Embedding(params, "language.embedding", Component::language_embedding, cfg.vocab_size,
                             cfg.model_dim, rng);
  encoder_ = nn::TransformerEncoder(params, "language.encoder", Component::language_encoder, cfg.encoder(), rng);
}

TextEncoding LanguageEncoder::encode(std::span<const std::size_t> ids, const Lengths& lengths,
                                     const ForwardContext& ctx) const {
  if (nn::total_length(lengths) != ids.size()) throw ShapeError("language encoder: lengths do not sum to id count");
  for (auto n : lengths)
    if (n == 0) throw DataError("language encoder: empty gloss sequence");
  TextEncoding out;
  out.lengths = lengths;
  out.embeddings = embedding_(ids);
  // Scaled so lexical content and positions have comparable magnitude.
  Tensor scaled = nn::scale(out.embeddings, std::sqrt(static_cast<double>(cfg_.model_dim)));
  out.hidden = encoder_.forward(nn::add_positions(scaled, lengths), lengths, ctx);
  return out;
}

}  // namespace signtok::model
