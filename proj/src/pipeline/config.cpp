#include <array>
#include <cstdio>
#include <set>

#include "signtok/error.hpp"
#include "signtok/pipeline.hpp"

namespace signtok::pipeline {

namespace {

constexpr std::array<std::string_view, 2> kStageNames = {"pretrain", "finetune"};
constexpr std::array<std::string_view, 2> kLossModeNames = {"clcl", "clip"};

// Reads j[key] into `out` when present, converting type errors into UsageError.
template <class T>
void read(const json& j, const char* key, T& out) {
  auto it = j.find(key);
  if (it == j.end()) return;
  try {
    out = it->get<T>();
  } catch (const json::exception& e) {
    throw UsageError(std::string("config key '") + key + "': " + e.what());
  }
}

void reject_unknown(const json& j, const std::set<std::string>& known, const char* where) {
  if (!j.is_object()) throw UsageError(std::string(where) + " must be an object");
  for (const auto& [key, value] : j.items()) {
    if (!known.contains(key)) throw UsageError(std::string("unknown ") + where + " key '" + key + "'");
  }
}

}  // namespace

std::string_view stage_name(Stage s) { return kStageNames[static_cast<std::size_t>(s)]; }

Stage stage_from_name(std::string_view name) {
  for (std::size_t i = 0; i < kStageNames.size(); ++i)
    if (kStageNames[i] == name) return static_cast<Stage>(i);
  throw UsageError("unknown stage '" + std::string(name) + "' (expected pretrain or finetune)");
}

std::string_view loss_mode_name(LossMode m) { return kLossModeNames[static_cast<std::size_t>(m)]; }

LossMode loss_mode_from_name(std::string_view name) {
  for (std::size_t i = 0; i < kLossModeNames.size(); ++i)
    if (kLossModeNames[i] == name) return static_cast<LossMode>(i);
  throw UsageError("unknown loss mode '" + std::string(name) + "' (expected clcl or clip)");
}

model::VisualEncoderConfig ModelConfig::visual(double dropout) const {
  model::VisualEncoderConfig v;
  v.c_in = c_in;
  v.frame_dim = frame_dim;
  v.model_dim = model_dim;
  v.conv_kernel = conv_kernel;
  v.context_layers = context_layers;
  v.context_heads = heads;
  v.ffn_dim = ffn_dim;
  v.dropout = dropout;
  return v;
}

model::MapperConfig ModelConfig::mapper(double dropout) const { return {mapper_blocks, model_dim, model_dim, dropout}; }

model::LanguageEncoderConfig ModelConfig::language(std::size_t vocab_size, double dropout) const {
  return {vocab_size, model_dim, language_layers, heads, ffn_dim, dropout};
}

json ModelConfig::to_json() const {
  return {{"c_in", c_in},
          {"frame_dim", frame_dim},
          {"model_dim", model_dim},
          {"heads", heads},
          {"ffn_dim", ffn_dim},
          {"conv_kernel", conv_kernel},
          {"mapper_blocks", mapper_blocks},
          {"context_layers", context_layers},
          {"language_layers", language_layers},
          {"encoder_layers", encoder_layers},
          {"decoder_layers", decoder_layers}};
}

ModelConfig ModelConfig::from_json(const json& j, const ModelConfig& base) {
  reject_unknown(j,
                 {"c_in", "frame_dim", "model_dim", "heads", "ffn_dim", "conv_kernel", "mapper_blocks",
                  "context_layers", "language_layers", "encoder_layers", "decoder_layers"},
                 "model");
  ModelConfig m = base;
  read(j, "c_in", m.c_in);
  read(j, "frame_dim", m.frame_dim);
  read(j, "model_dim", m.model_dim);
  read(j, "heads", m.heads);
  read(j, "ffn_dim", m.ffn_dim);
  read(j, "conv_kernel", m.conv_kernel);
  read(j, "mapper_blocks", m.mapper_blocks);
  read(j, "context_layers", m.context_layers);
  read(j, "language_layers", m.language_layers);
  read(j, "encoder_layers", m.encoder_layers);
  read(j, "decoder_layers", m.decoder_layers);
  return m;
}

RunConfig RunConfig::defaults(Stage stage) {
  RunConfig c;
  c.stage = stage;
  if (stage == Stage::pretrain) {
    c.batch_size = 16;
    c.lr = 0.03;
    c.weight_decay = 0.0;
    c.grad_clip = 1.0;
  } else {
    c.batch_size = 8;
    c.lr = 0.004;
    c.weight_decay = 0.001;
    c.grad_clip = 5.0;
  }
  return c;
}

void RunConfig::validate() const {
  auto fail = [](const std::string& msg) { throw UsageError("invalid run config: " + msg); };
  if (batch_size < 1) fail("batch_size must be >= 1");
  if (stage == Stage::pretrain && batch_size < 2) fail("contrastive pretraining needs batch_size >= 2 (no negatives)");
  if (!(lr > 0)) fail("lr must be positive");
  if (momentum < 0 || momentum >= 1) fail("momentum must lie in [0,1)");
  if (weight_decay < 0) fail("weight_decay must be >= 0");
  if (!(grad_clip > 0)) fail("grad_clip must be positive");
  if (dropout < 0 || dropout >= 1) fail("dropout must lie in [0,1)");
  if (label_smoothing < 0 || label_smoothing >= 1) fail("label_smoothing must lie in [0,1)");
  if (alpha < 0 || alpha > 1) fail("alpha must lie in [0,1]");
  if (beta < 0 || beta > 1) fail("beta must lie in [0,1]");
  if (feature_noise < 0) fail("feature_noise must be >= 0");
  if (segment_factor < 1) fail("segment_factor must be >= 1");
  if (beam_width < 1) fail("beam_width must be >= 1");
  if (max_decode_len < 1) fail("max_decode_len must be >= 1");
  if (segmenter != segment::Source::oracle && segmenter != segment::Source::motion_energy &&
      segmenter != segment::Source::uniform) {
    fail("segmenter must be oracle, motion_energy or uniform");
  }
  model.visual(dropout).validate();
  model.mapper(dropout).validate();
}

json RunConfig::to_json() const {
  return {{"stage", stage_name(stage)},
          {"batch_size", batch_size},
          {"lr", lr},
          {"momentum", momentum},
          {"weight_decay", weight_decay},
          {"grad_clip", grad_clip},
          {"epochs", epochs},
          {"dropout", dropout},
          {"label_smoothing", label_smoothing},
          {"alpha", alpha},
          {"beta", beta},
          {"seed", seed},
          {"segmenter", segment::source_name(segmenter)},
          {"segment_factor", segment_factor},
          {"loss_mode", loss_mode_name(loss_mode)},
          {"dual_supervision", dual_supervision},
          {"feature_noise", feature_noise},
          {"validate_every", validate_every},
          {"beam_width", beam_width},
          {"max_decode_len", max_decode_len},
          {"length_penalty", length_penalty},
          {"policy", translate::policy_name(policy)},
          {"model", model.to_json()}};
}

RunConfig RunConfig::from_json(const json& j, Stage fallback) {
  Stage stage = fallback;
  if (j.is_object() && j.contains("stage")) {
    if (!j["stage"].is_string()) throw UsageError("config key 'stage' must be a string");
    stage = stage_from_name(j["stage"].get<std::string>());
  }
  return defaults(stage).with(j);
}

RunConfig RunConfig::with(const json& j) const {
  reject_unknown(j,
                 {"stage", "batch_size", "lr", "momentum", "weight_decay", "grad_clip", "epochs", "dropout",
                  "label_smoothing", "alpha", "beta", "seed", "segmenter", "segment_factor", "loss_mode",
                  "dual_supervision", "feature_noise", "validate_every", "beam_width", "max_decode_len",
                  "length_penalty", "policy", "model"},
                 "config");
  RunConfig c = *this;
  std::string text;
  text = std::string(stage_name(c.stage));
  read(j, "stage", text);
  c.stage = stage_from_name(text);
  read(j, "batch_size", c.batch_size);
  read(j, "lr", c.lr);
  read(j, "momentum", c.momentum);
  read(j, "weight_decay", c.weight_decay);
  read(j, "grad_clip", c.grad_clip);
  read(j, "epochs", c.epochs);
  read(j, "dropout", c.dropout);
  read(j, "label_smoothing", c.label_smoothing);
  read(j, "alpha", c.alpha);
  read(j, "beta", c.beta);
  read(j, "seed", c.seed);
  text = std::string(segment::source_name(c.segmenter));
  read(j, "segmenter", text);
  c.segmenter = segment::source_from_name(text);
  read(j, "segment_factor", c.segment_factor);
  text = std::string(loss_mode_name(c.loss_mode));
  read(j, "loss_mode", text);
  c.loss_mode = loss_mode_from_name(text);
  read(j, "dual_supervision", c.dual_supervision);
  read(j, "feature_noise", c.feature_noise);
  read(j, "validate_every", c.validate_every);
  read(j, "beam_width", c.beam_width);
  read(j, "max_decode_len", c.max_decode_len);
  read(j, "length_penalty", c.length_penalty);
  text = std::string(translate::policy_name(c.policy));
  read(j, "policy", text);
  c.policy = translate::policy_from_name(text);
  if (j.contains("model")) c.model = ModelConfig::from_json(j["model"], c.model);
  c.validate();
  return c;
}

std::string fnv1a_hex(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char b : bytes) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string RunConfig::hash() const { return fnv1a_hex(to_json().dump()); }

translate::TranslatorConfig RunConfig::translator(std::size_t vocab_size) const {
  translate::TranslatorConfig t;
  t.vocab_size = vocab_size;
  t.encoder_layers = model.encoder_layers;
  t.decoder_layers = model.decoder_layers;
  t.heads = model.heads;
  t.model_dim = model.model_dim;
  t.ffn_dim = model.ffn_dim;
  t.dropout = dropout;
  t.max_decode_len = max_decode_len;
  t.beam_width = beam_width;
  t.length_penalty = length_penalty;
  return t;
}

}  // namespace signtok::pipeline
