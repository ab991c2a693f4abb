#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "signtok/corpus.hpp"
#include "signtok/losses.hpp"
#include "signtok/metrics.hpp"
#include "signtok/model.hpp"
#include "signtok/nn/checkpoint.hpp"
#include "signtok/nn/gradcheck.hpp"
#include "signtok/segmenter.hpp"
#include "signtok/translate.hpp"

namespace signtok::pipeline {

using nlohmann::json;
using nn::Rng;

enum class Stage { pretrain, finetune };
std::string_view stage_name(Stage s);
Stage stage_from_name(std::string_view name);

// Contrastive objective family: token-level CLCL or CLIP-style global pooling.
enum class LossMode { clcl, clip };
std::string_view loss_mode_name(LossMode m);
LossMode loss_mode_from_name(std::string_view name);

// Architecture shared by both stages so stage-1 weights fit the translator.
struct ModelConfig {
  std::size_t c_in = 1024;
  std::size_t frame_dim = 512;
  std::size_t model_dim = 1024;
  std::size_t heads = 8;
  std::size_t ffn_dim = 4096;
  std::size_t conv_kernel = 5;
  std::size_t mapper_blocks = 3;
  std::size_t context_layers = 3;   // visual context transformer (stage 1)
  std::size_t language_layers = 3;  // language encoder (stage 1)
  std::size_t encoder_layers = 3;   // translation encoder (stage 2)
  std::size_t decoder_layers = 3;   // translation decoder (stage 2)

  model::VisualEncoderConfig visual(double dropout) const;
  model::MapperConfig mapper(double dropout) const;
  model::LanguageEncoderConfig language(std::size_t vocab_size, double dropout) const;

  json to_json() const;
  static ModelConfig from_json(const json& j, const ModelConfig& base);
  bool operator==(const ModelConfig&) const = default;
};

struct RunConfig {
  Stage stage = Stage::pretrain;
  std::size_t batch_size = 16;
  double lr = 0.03;
  double momentum = 0.9;
  double weight_decay = 0.0;
  double grad_clip = 1.0;
  std::size_t epochs = 80;
  double dropout = 0.1;
  double label_smoothing = 0.2;
  double alpha = 0.5;  // weight of the video-to-text direction
  double beta = 0.6;   // weight of the embedding-level term
  std::uint64_t seed = 0;
  segment::Source segmenter = segment::Source::motion_energy;
  std::size_t segment_factor = 4;  // group size for the uniform segmenter
  LossMode loss_mode = LossMode::clcl;
  bool dual_supervision = true;
  double feature_noise = 0.0;  // Gaussian feature-noise augmentation sigma
  std::size_t validate_every = 5;
  std::size_t beam_width = 4;
  std::size_t max_decode_len = 150;
  double length_penalty = 1.0;
  translate::TransferPolicy policy = translate::TransferPolicy::vle;
  ModelConfig model;

  // Stage-specific optimizer defaults; everything else shared.
  static RunConfig defaults(Stage stage);
  void validate() const;

  json to_json() const;
  // Keys absent from `j` keep the defaults of the stage named in `j` (or
  // `fallback`); unknown keys are rejected.
  static RunConfig from_json(const json& j, Stage fallback = Stage::pretrain);
  // Overlays the keys of `j` onto this config.
  RunConfig with(const json& j) const;
  // Stable 16-hex-digit FNV-1a hash of the canonical JSON form.
  std::string hash() const;

  translate::TranslatorConfig translator(std::size_t vocab_size) const;
};

std::string fnv1a_hex(std::string_view bytes);

// A split with its derived segment sets and pseudo-glosses, index-aligned.
struct Dataset {
  std::vector<corpus::FrameSequence> videos;
  std::vector<corpus::TaggedSentence> sentences;
  std::vector<corpus::GroundTruth> truth;  // empty when not known
  std::vector<segment::SegmentSet> segments;
  std::vector<corpus::PseudoGlossSequence> glosses;
  std::vector<std::string> sign_names;  // synthetic lexicon, when known

  std::size_t size() const { return videos.size(); }
  bool has_truth() const { return truth.size() == videos.size() && !videos.empty(); }
  // Output tokens per input frame over the whole split.
  double reduction_ratio() const;
};

Dataset prepare_dataset(std::vector<corpus::FrameSequence> videos, std::vector<corpus::TaggedSentence> sentences,
                        std::vector<corpus::GroundTruth> truth, const RunConfig& cfg);
Dataset prepare_dataset(const corpus::SyntheticCorpus& corpus, const RunConfig& cfg);
// Contiguous index range [begin, end) of a dataset.
Dataset slice(const Dataset& data, std::size_t begin, std::size_t end);
// Recomputes segment sets with the segmenter named in cfg.
void resegment(Dataset& data, const RunConfig& cfg);

struct Vocabularies {
  corpus::Vocabulary text;   // spoken words (translation targets)
  corpus::Vocabulary gloss;  // pseudo-glosses (language encoder input)
};
Vocabularies build_vocabularies(const Dataset& train);
json vocabularies_to_json(const Vocabularies& v);
Vocabularies vocabularies_from_json(const json& j);

// BOS + ids + EOS for the spoken sentence.
std::vector<std::size_t> target_ids(const corpus::TaggedSentence& sentence, const corpus::Vocabulary& text);

// ---- stage 1 ----

struct LossTerms {
  nn::Tensor total;
  nn::Tensor ce;  // embedding-level term
  nn::Tensor hs;  // hidden-state-level term (undefined without dual supervision)
};

// Visual encoder with context transformer, mapper, language encoder, temperature.
class PretrainModel {
 public:
  PretrainModel(const ModelConfig& model, std::size_t gloss_vocab, double dropout, Rng& rng);

  struct Outputs {
    nn::Tensor mapped;          // L = mapper(V^tok)
    nn::Tensor visual_context;  // context transformer over L (dual supervision only)
    model::TextEncoding text;
    nn::Lengths tokens_per_video;
  };
  Outputs forward(const model::SegmentBatch& batch, std::span<const std::size_t> gloss_ids,
                  const nn::Lengths& gloss_lengths, bool with_context, const model::ForwardContext& ctx);
  LossTerms loss(const Outputs& out, const RunConfig& cfg) const;

  nn::ParameterSet& params() { return params_; }
  const nn::ParameterSet& params() const { return params_; }

 private:
  nn::ParameterSet params_;
  model::VisualEncoder visual_;
  model::Mapper mapper_;
  model::LanguageEncoder language_;
  nn::Tensor logit_scale_;
};

struct EpochLog {
  std::size_t epoch = 0;
  std::map<std::string, double> losses;  // mean per active loss term
  double lr = 0;
  std::size_t samples = 0;  // samples that contributed gradients
  std::size_t skipped = 0;  // samples skipped (empty pseudo-gloss or dropped remainder)
  std::optional<metrics::EvalReport> validation;

  json to_json() const;
  static EpochLog from_json(const json& j);
  bool operator==(const EpochLog& other) const { return to_json() == other.to_json(); }
};

// Run-directory layout: config.snapshot, checkpoints/, logs/, reports/.
struct RunDir {
  std::filesystem::path root;

  explicit RunDir(std::filesystem::path r) : root(std::move(r)) {}
  std::filesystem::path config_snapshot() const { return root / "config.snapshot"; }
  std::filesystem::path checkpoints() const { return root / "checkpoints"; }
  std::filesystem::path logs() const { return root / "logs"; }
  std::filesystem::path reports() const { return root / "reports"; }
  std::filesystem::path epoch_log() const { return logs() / "epochs.jsonl"; }
  std::filesystem::path timing_log() const { return logs() / "timing.jsonl"; }
  // Creates the directories and writes the config snapshot first.
  void initialize(const json& config) const;
};

struct StageResult {
  nn::Checkpoint last;
  nn::Checkpoint best;  // finetune: best validation BLEU-4; pretrain: same as last
  std::vector<EpochLog> logs;
  std::optional<metrics::EvalReport> initial_validation;
  std::size_t best_epoch = 0;
};

struct TrainOptions {
  std::optional<RunDir> run_dir;  // write checkpoints/logs when set
  bool resume = false;            // continue from run_dir/checkpoints/last.ckpt
  std::size_t stop_after = 0;     // stop after this epoch (0 = run all), for interrupted-run tests
};

StageResult pretrain(const RunConfig& cfg, const Dataset& train, const TrainOptions& options = {});

// Rebuilds a stage-1 model (including vocabularies) from its checkpoint.
struct LoadedPretrain {
  RunConfig config;
  Vocabularies vocab;
  std::unique_ptr<PretrainModel> model;
};
LoadedPretrain load_pretrain(const nn::Checkpoint& ckpt);

// ---- stage 2 ----

struct TranslationModel {
  TranslationModel(const RunConfig& cfg, std::size_t text_vocab, Rng& rng);
  nn::ParameterSet params;
  translate::Translator translator;
};

StageResult finetune(const RunConfig& cfg, const Dataset& train, const Dataset& dev, const nn::Checkpoint* stage1,
                     const TrainOptions& options = {});

struct LoadedTranslation {
  RunConfig config;
  Vocabularies vocab;
  std::unique_ptr<TranslationModel> model;
};
// `overrides` is overlaid on the stored config (e.g. decoding settings).
LoadedTranslation load_translation(const nn::Checkpoint& ckpt, const json& overrides = json::object());

struct TranslationOutput {
  std::string video_id;
  metrics::Sentence hypothesis;
  metrics::Sentence reference;
};
std::vector<TranslationOutput> translate_dataset(translate::Translator& translator, const corpus::Vocabulary& text,
                                                 const Dataset& data, std::size_t beam_width);
metrics::EvalReport evaluate_outputs(const std::vector<TranslationOutput>& outputs);

// ---- alignment diagnostics ----

// Embedding-level token similarities of paired videos and pseudo-glosses.
struct SimilarityRecord {
  std::string video_id;
  std::size_t token = 0;
  corpus::Span span;  // frames covered by the visual token
  std::size_t gloss = 0;
  std::string gloss_text;
  double similarity = 0;
  bool argmax = false;
  std::optional<std::size_t> truth;
};
// One entry of the video-to-text aggregate matrices Z within an evaluation chunk.
struct PairScore {
  std::size_t chunk = 0;
  std::string video_id;
  std::string text_id;  // video whose pseudo-gloss forms the text side
  double z_v2t = 0;
  double z_t2v = 0;
};
struct AlignmentResult {
  double accuracy = 0;
  std::vector<SimilarityRecord> records;
  std::vector<PairScore> pairs;
};
AlignmentResult evaluate_alignment(PretrainModel& model, const Vocabularies& vocab, const RunConfig& cfg,
                                   const Dataset& data);
std::string similarity_csv(const std::vector<SimilarityRecord>& records);
std::string pair_score_csv(const std::vector<PairScore>& pairs);

// ---- ablation grid ----

struct AblationRow {
  std::string config_hash;
  std::string axis;
  std::string value;
  metrics::EvalReport report;
};

// axis is one of "beta", "loss_mode" (values "clcl" | "clip", optionally
// suffixed ":dual" or ":single"), or "policy". Each cell runs a full pretrain +
// finetune from the base configs and evaluates on `test` with beam search.
std::vector<AblationRow> run_ablation_grid(const RunConfig& pretrain_cfg, const RunConfig& finetune_cfg,
                                           const std::string& axis, const std::vector<std::string>& values,
                                           const Dataset& train, const Dataset& dev, const Dataset& test);
std::string ablation_csv(const std::vector<AblationRow>& rows);

// ---- gradient checks ----

enum class GradLoss { ce, hs, total, clip, lm };
std::string_view grad_loss_name(GradLoss l);
GradLoss grad_loss_from_name(std::string_view name);

// Reverse-mode vs central-difference check of one loss on a random batch of
// `batch` pairs with at most five tokens per side.
nn::GradCheckResult check_loss_gradient(GradLoss loss, std::size_t batch, std::uint64_t seed = 0);

}  // namespace signtok::pipeline
