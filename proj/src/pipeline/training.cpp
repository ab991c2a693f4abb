#include <algorithm>
#include <chrono>
#include <fstream>
#include <numeric>
#include <sstream>

#include "signtok/error.hpp"
#include "signtok/nn/optim.hpp"
#include "signtok/pipeline.hpp"

namespace signtok::pipeline {

namespace fs = std::filesystem;
using corpus::Vocabulary;
using model::ForwardContext;
using nn::Tensor;

// ---- stage-1 model ----

PretrainModel::PretrainModel(const ModelConfig& model, std::size_t gloss_vocab, double dropout, Rng& rng)
    : visual_(params_, model.visual(dropout), rng, true),
      mapper_(params_, model.mapper(dropout), rng),
      language_(params_, model.language(gloss_vocab, dropout), rng),
      logit_scale_(losses::add_temperature(params_)) {}

PretrainModel::Outputs PretrainModel::forward(const model::SegmentBatch& batch, std::span<const std::size_t> gloss_ids,
                                              const nn::Lengths& gloss_lengths, bool with_context,
                                              const ForwardContext& ctx) {
  Outputs out;
  out.tokens_per_video = batch.tokens_per_video;
  out.mapped = mapper_(visual_.tokens(batch, ctx), ctx);
  if (with_context) out.visual_context = visual_.contextualize(out.mapped, batch.tokens_per_video, ctx);
  out.text = language_.encode(gloss_ids, gloss_lengths, ctx);
  return out;
}

LossTerms PretrainModel::loss(const Outputs& out, const RunConfig& cfg) const {
  const Tensor scale = losses::temperature_scale(logit_scale_);
  auto level = [&](const Tensor& visual, const Tensor& text) {
    if (cfg.loss_mode == LossMode::clcl) {
      auto sim = losses::token_similarity_aggregate(visual, out.tokens_per_video, text, out.text.lengths);
      return losses::clcl_loss(sim, scale, cfg.alpha);
    }
    return losses::clip_global_loss(visual, out.tokens_per_video, text, out.text.lengths, scale);
  };
  LossTerms terms;
  terms.ce = level(out.mapped, out.text.embeddings);
  if (cfg.dual_supervision) {
    if (!out.visual_context.defined()) throw UsageError("dual supervision needs the visual context outputs");
    terms.hs = level(out.visual_context, out.text.hidden);
    terms.total = losses::dual_level_loss(terms.ce, terms.hs, cfg.beta);
  } else {
    terms.total = terms.ce;
  }
  return terms;
}

// ---- logs and run directories ----

namespace {

json report_json(const metrics::EvalReport& r) { return json::parse(r.to_json()); }

metrics::EvalReport report_from_json(const json& j) {
  metrics::EvalReport r;
  for (int n = 0; n < 4; ++n) r.bleu[n] = j.at("bleu" + std::to_string(n + 1)).get<double>();
  r.rouge_l_f1 = j.at("rouge_l_f1").get<double>();
  r.num_sentences = j.at("num_sentences").get<std::size_t>();
  if (j.contains("alignment_accuracy")) r.alignment_accuracy = j["alignment_accuracy"].get<double>();
  if (j.contains("reduction_ratio")) r.reduction_ratio = j["reduction_ratio"].get<double>();
  return r;
}

}  // namespace

json EpochLog::to_json() const {
  json j = {{"epoch", epoch}, {"losses", losses}, {"lr", lr}, {"samples", samples}, {"skipped", skipped}};
  if (validation) j["validation"] = report_json(*validation);
  return j;
}

EpochLog EpochLog::from_json(const json& j) {
  try {
    EpochLog e;
    e.epoch = j.at("epoch").get<std::size_t>();
    e.losses = j.at("losses").get<std::map<std::string, double>>();
    e.lr = j.at("lr").get<double>();
    e.samples = j.at("samples").get<std::size_t>();
    e.skipped = j.at("skipped").get<std::size_t>();
    if (j.contains("validation")) e.validation = report_from_json(j["validation"]);
    return e;
  } catch (const json::exception& ex) {
    throw DataError(std::string("malformed epoch log record: ") + ex.what());
  }
}

void RunDir::initialize(const json& config) const {
  fs::create_directories(root);
  {
    std::ofstream out(config_snapshot());
    if (!out) throw DataError("cannot write " + config_snapshot().string());
    out << config.dump(2) << '\n';
  }
  fs::create_directories(checkpoints());
  fs::create_directories(logs());
  fs::create_directories(reports());
}

namespace {

std::string rng_state(const Rng& rng) {
  std::ostringstream out;
  out << rng;
  return out.str();
}

void set_rng_state(Rng& rng, const std::string& state) {
  std::istringstream in(state);
  in >> rng;
  if (!in) throw DataError("checkpoint holds a malformed RNG state");
}

std::vector<EpochLog> read_epoch_logs(const fs::path& path, std::size_t up_to) {
  std::vector<EpochLog> logs;
  std::ifstream in(path);
  for (std::string line; std::getline(in, line);) {
    if (line.empty()) continue;
    auto e = EpochLog::from_json(json::parse(line));
    if (e.epoch <= up_to) logs.push_back(std::move(e));
  }
  return logs;
}

void rewrite_epoch_logs(const fs::path& path, const std::vector<EpochLog>& logs) {
  std::ofstream out(path, std::ios::trunc);
  for (const auto& e : logs) out << e.to_json().dump() << '\n';
}

void append_line(const fs::path& path, const json& j) {
  std::ofstream out(path, std::ios::app);
  if (!out) throw DataError("cannot append to " + path.string());
  out << j.dump() << '\n';
}

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

// Packs the selected examples of a dataset.
model::SegmentBatch pack(const Dataset& data, std::span<const std::size_t> indices, const RunConfig& cfg, double noise,
                         Rng* rng) {
  std::vector<const corpus::FrameSequence*> videos;
  std::vector<const segment::SegmentSet*> sets;
  for (auto i : indices) {
    videos.push_back(&data.videos[i]);
    sets.push_back(&data.segments[i]);
  }
  return model::pack_segments(videos, sets, cfg.model.conv_kernel, noise, rng);
}

// Loads run state for a resumed run; returns the number of completed epochs.
std::size_t resume_state(const TrainOptions& options, nn::ParameterSet& params, nn::Sgd& sgd, Rng& rng,
                         std::vector<EpochLog>& logs, nn::Checkpoint& last) {
  if (!options.resume || !options.run_dir) return 0;
  const fs::path path = options.run_dir->checkpoints() / "last.ckpt";
  if (!fs::exists(path)) return 0;
  last = nn::load_checkpoint(path);
  nn::restore_all(params, last);
  sgd.load_state(last.optimizer);
  set_rng_state(rng, last.rng_state);
  logs = read_epoch_logs(options.run_dir->epoch_log(), last.epoch);
  if (logs.size() != last.epoch) throw DataError("epoch log is shorter than the checkpointed epoch count");
  rewrite_epoch_logs(options.run_dir->epoch_log(), logs);
  return last.epoch;
}

nn::Checkpoint snapshot(const nn::ParameterSet& params, const nn::Sgd& sgd, const Rng& rng, std::size_t epoch,
                        const json& meta) {
  nn::Checkpoint c = nn::capture(params);
  c.epoch = epoch;
  c.rng_state = rng_state(rng);
  c.optimizer = sgd.state();
  c.meta = meta.dump();
  return c;
}

nn::SgdConfig sgd_config(const RunConfig& cfg) {
  return {cfg.lr, cfg.momentum, cfg.weight_decay, cfg.grad_clip, cfg.epochs};
}

json parse_meta(const nn::Checkpoint& ckpt) {
  try {
    return json::parse(ckpt.meta);
  } catch (const json::exception& e) {
    throw DataError(std::string("checkpoint metadata is not valid JSON: ") + e.what());
  }
}

}  // namespace

// ---- stage 1 ----

StageResult pretrain(const RunConfig& cfg, const Dataset& train, const TrainOptions& options) {
  if (cfg.stage != Stage::pretrain) throw UsageError("pretrain needs a pretrain-stage config");
  cfg.validate();
  const Vocabularies vocab = build_vocabularies(train);
  const json meta = {{"stage", "pretrain"}, {"config", cfg.to_json()}, {"vocab", vocabularies_to_json(vocab)}};
  if (options.run_dir && !options.resume) options.run_dir->initialize(cfg.to_json());

  Rng rng(cfg.seed);
  PretrainModel model(cfg.model, vocab.gloss.size(), cfg.dropout, rng);
  nn::Sgd sgd(model.params(), sgd_config(cfg));
  auto* logit_scale = &model.params().find("temperature.logit_scale")->tensor;

  std::vector<std::size_t> eligible;
  std::vector<std::vector<std::size_t>> gloss_ids(train.size());
  for (std::size_t i = 0; i < train.size(); ++i) {
    if (train.glosses[i].empty_flag) continue;
    eligible.push_back(i);
    gloss_ids[i] = vocab.gloss.encode(train.glosses[i].glosses);
  }
  if (eligible.size() < cfg.batch_size) {
    throw DataError("pretraining needs at least " + std::to_string(cfg.batch_size) +
                    " samples with non-empty pseudo-glosses; found " + std::to_string(eligible.size()));
  }

  StageResult result;
  std::size_t start = resume_state(options, model.params(), sgd, rng, result.logs, result.last);
  const std::size_t end = options.stop_after ? std::min(options.stop_after, cfg.epochs) : cfg.epochs;
  for (std::size_t epoch = start + 1; epoch <= end; ++epoch) {
    const auto t0 = Clock::now();
    sgd.set_epoch(epoch - 1);
    std::vector<std::size_t> order = eligible;
    std::shuffle(order.begin(), order.end(), rng);
    const std::size_t batches = order.size() / cfg.batch_size;

    EpochLog log;
    log.epoch = epoch;
    log.lr = sgd.lr();
    log.skipped = train.size() - batches * cfg.batch_size;
    double total = 0, ce = 0, hs = 0;
    for (std::size_t b = 0; b < batches; ++b) {
      std::span<const std::size_t> idx(order.data() + b * cfg.batch_size, cfg.batch_size);
      auto batch = pack(train, idx, cfg, cfg.feature_noise, &rng);
      std::vector<std::size_t> ids;
      nn::Lengths lengths;
      for (auto i : idx) {
        ids.insert(ids.end(), gloss_ids[i].begin(), gloss_ids[i].end());
        lengths.push_back(gloss_ids[i].size());
      }
      model.params().zero_grad();
      auto out = model.forward(batch, ids, lengths, cfg.dual_supervision, {true, &rng});
      auto terms = model.loss(out, cfg);
      if (!std::isfinite(terms.total.item())) {
        throw NumericError("pretrain: non-finite loss at epoch " + std::to_string(epoch));
      }
      terms.total.backward();
      sgd.step();
      losses::clamp_temperature(*logit_scale);
      total += terms.total.item();
      ce += terms.ce.item();
      if (terms.hs.defined()) hs += terms.hs.item();
      log.samples += idx.size();
    }
    const auto n = static_cast<double>(batches);
    log.losses["total"] = total / n;
    log.losses["ce"] = ce / n;
    if (cfg.dual_supervision) log.losses["hs"] = hs / n;
    result.logs.push_back(log);
    result.last = snapshot(model.params(), sgd, rng, epoch, meta);
    if (options.run_dir) {
      nn::save_checkpoint(options.run_dir->checkpoints() / "last.ckpt", result.last);
      append_line(options.run_dir->epoch_log(), log.to_json());
      append_line(options.run_dir->timing_log(), {{"epoch", epoch}, {"seconds", seconds_since(t0)}});
    }
  }
  if (result.last.params.empty()) result.last = snapshot(model.params(), sgd, rng, start, meta);
  result.best = result.last;
  result.best_epoch = result.last.epoch;
  if (options.run_dir) nn::save_checkpoint(options.run_dir->checkpoints() / "pretrain.ckpt", result.last);
  return result;
}

LoadedPretrain load_pretrain(const nn::Checkpoint& ckpt) {
  const json meta = parse_meta(ckpt);
  if (meta.value("stage", "") != "pretrain") throw DataError("checkpoint is not a stage-1 checkpoint");
  LoadedPretrain out;
  out.config = RunConfig::from_json(meta.at("config"), Stage::pretrain);
  out.vocab = vocabularies_from_json(meta.at("vocab"));
  Rng rng(out.config.seed);
  out.model = std::make_unique<PretrainModel>(out.config.model, out.vocab.gloss.size(), out.config.dropout, rng);
  nn::restore_all(out.model->params(), ckpt);
  return out;
}

// ---- stage 2 ----

TranslationModel::TranslationModel(const RunConfig& cfg, std::size_t text_vocab, Rng& rng)
    : translator(params, cfg.model.visual(cfg.dropout), cfg.model.mapper(cfg.dropout), cfg.translator(text_vocab),
                 rng) {}

std::vector<TranslationOutput> translate_dataset(translate::Translator& translator, const Vocabulary& text,
                                                 const Dataset& data, std::size_t beam_width) {
  std::vector<TranslationOutput> out;
  out.reserve(data.size());
  const std::size_t kernel = translator.visual().config().conv_kernel;
  for (std::size_t i = 0; i < data.size(); ++i) {
    auto batch = model::pack_segments(data.videos[i], data.segments[i], kernel);
    auto ids = translator.decode(batch, beam_width);
    out.push_back({data.videos[i].video_id, text.decode(ids), data.sentences[i].texts()});
  }
  return out;
}

metrics::EvalReport evaluate_outputs(const std::vector<TranslationOutput>& outputs) {
  std::vector<metrics::Sentence> hyps, refs;
  for (const auto& o : outputs) {
    hyps.push_back(o.hypothesis);
    refs.push_back(o.reference);
  }
  return metrics::evaluate(hyps, refs);
}

StageResult finetune(const RunConfig& cfg, const Dataset& train, const Dataset& dev, const nn::Checkpoint* stage1,
                     const TrainOptions& options) {
  if (cfg.stage != Stage::finetune) throw UsageError("finetune needs a finetune-stage config");
  cfg.validate();
  if (cfg.policy != translate::TransferPolicy::none && stage1 == nullptr) {
    throw UsageError("transfer policy '" + std::string(translate::policy_name(cfg.policy)) +
                     "' needs a stage-1 checkpoint");
  }
  if (train.size() == 0) throw DataError("finetune: empty training split");
  const Vocabularies vocab = build_vocabularies(train);
  json meta = {{"stage", "finetune"}, {"config", cfg.to_json()}, {"vocab", vocabularies_to_json(vocab)}};
  if (options.run_dir && !options.resume) options.run_dir->initialize(cfg.to_json());

  Rng rng(cfg.seed);
  TranslationModel model(cfg, vocab.text.size(), rng);
  if (stage1) translate::load_stage1(model.params, *stage1, cfg.policy);
  nn::Sgd sgd(model.params, sgd_config(cfg));

  std::vector<std::vector<std::size_t>> targets;
  for (const auto& s : train.sentences) targets.push_back(target_ids(s, vocab.text));

  auto validate = [&]() -> std::optional<metrics::EvalReport> {
    if (dev.size() == 0) return std::nullopt;
    auto report = evaluate_outputs(translate_dataset(model.translator, vocab.text, dev, 1));
    report.reduction_ratio = dev.reduction_ratio();
    return report;
  };

  StageResult result;
  double best_bleu = -1;
  std::size_t start = resume_state(options, model.params, sgd, rng, result.logs, result.last);
  if (start > 0) {
    const json m = parse_meta(result.last);
    best_bleu = m.at("best_bleu4").get<double>();
    result.best_epoch = m.at("best_epoch").get<std::size_t>();
    if (m.contains("initial_validation")) result.initial_validation = report_from_json(m["initial_validation"]);
    result.best = nn::load_checkpoint(options.run_dir->checkpoints() / "best.ckpt");
  } else {
    result.initial_validation = validate();
    if (result.initial_validation) best_bleu = result.initial_validation->bleu4();
    result.best = snapshot(model.params, sgd, rng, 0, meta);
  }
  auto meta_now = [&]() {
    json m = meta;
    m["best_bleu4"] = best_bleu;
    m["best_epoch"] = result.best_epoch;
    if (result.initial_validation) m["initial_validation"] = report_json(*result.initial_validation);
    return m;
  };

  std::vector<std::size_t> order(train.size());
  const std::size_t end = options.stop_after ? std::min(options.stop_after, cfg.epochs) : cfg.epochs;
  for (std::size_t epoch = start + 1; epoch <= end; ++epoch) {
    const auto t0 = Clock::now();
    sgd.set_epoch(epoch - 1);
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);

    EpochLog log;
    log.epoch = epoch;
    log.lr = sgd.lr();
    double total = 0;
    std::size_t batches = 0;
    for (std::size_t b = 0; b < order.size(); b += cfg.batch_size) {
      const std::size_t n = std::min(cfg.batch_size, order.size() - b);
      std::span<const std::size_t> idx(order.data() + b, n);
      auto batch = pack(train, idx, cfg, cfg.feature_noise, &rng);
      std::vector<std::vector<std::size_t>> batch_targets;
      for (auto i : idx) batch_targets.push_back(targets[i]);
      model.params.zero_grad();
      auto r = model.translator.forward(batch, batch_targets, cfg.label_smoothing, {true, &rng});
      if (!std::isfinite(r.loss.item())) {
        throw NumericError("finetune: non-finite loss at epoch " + std::to_string(epoch));
      }
      r.loss.backward();
      sgd.step();
      total += r.loss.item();
      ++batches;
      log.samples += n;
    }
    log.losses["lm"] = total / static_cast<double>(batches);
    const bool validate_now = epoch == cfg.epochs || (cfg.validate_every > 0 && epoch % cfg.validate_every == 0);
    if (validate_now) {
      log.validation = validate();
      // Ties go to the later (longer-trained) epoch.
      if (log.validation && log.validation->bleu4() >= best_bleu) {
        best_bleu = log.validation->bleu4();
        result.best_epoch = epoch;
        result.best = snapshot(model.params, sgd, rng, epoch, meta_now());
        if (options.run_dir) nn::save_checkpoint(options.run_dir->checkpoints() / "best.ckpt", result.best);
      }
    }
    result.logs.push_back(log);
    result.last = snapshot(model.params, sgd, rng, epoch, meta_now());
    if (options.run_dir) {
      if (epoch == 1 && result.best_epoch == 0) {
        nn::save_checkpoint(options.run_dir->checkpoints() / "best.ckpt", result.best);
      }
      nn::save_checkpoint(options.run_dir->checkpoints() / "last.ckpt", result.last);
      append_line(options.run_dir->epoch_log(), log.to_json());
      append_line(options.run_dir->timing_log(), {{"epoch", epoch}, {"seconds", seconds_since(t0)}});
    }
  }
  if (result.last.params.empty()) result.last = snapshot(model.params, sgd, rng, start, meta_now());
  // Without a validation split the last epoch is the selected model.
  if (dev.size() == 0) {
    result.best = result.last;
    result.best_epoch = result.last.epoch;
  }
  if (options.run_dir) {
    nn::save_checkpoint(options.run_dir->checkpoints() / "best.ckpt", result.best);
    nn::save_checkpoint(options.run_dir->checkpoints() / "last.ckpt", result.last);
  }
  return result;
}

LoadedTranslation load_translation(const nn::Checkpoint& ckpt, const json& overrides) {
  const json meta = parse_meta(ckpt);
  if (meta.value("stage", "") != "finetune") throw DataError("checkpoint is not a translation checkpoint");
  LoadedTranslation out;
  out.config = RunConfig::from_json(meta.at("config"), Stage::finetune).with(overrides);
  out.vocab = vocabularies_from_json(meta.at("vocab"));
  Rng rng(out.config.seed);
  out.model = std::make_unique<TranslationModel>(out.config, out.vocab.text.size(), rng);
  nn::restore_all(out.model->params, ckpt);
  return out;
}

// ---- alignment ----

AlignmentResult evaluate_alignment(PretrainModel& model, const Vocabularies& vocab, const RunConfig& cfg,
                                   const Dataset& data) {
  if (!data.has_truth() || data.sign_names.empty()) {
    throw DataError("alignment evaluation needs ground truth and the sign lexicon");
  }
  constexpr std::size_t kChunk = 64;
  std::vector<std::size_t> eligible;
  for (std::size_t i = 0; i < data.size(); ++i)
    if (!data.glosses[i].empty_flag) eligible.push_back(i);

  AlignmentResult result;
  double correct = 0;
  std::size_t counted = 0;
  nn::NoGradGuard no_grad;
  for (std::size_t b = 0; b < eligible.size(); b += kChunk) {
    std::span<const std::size_t> idx(eligible.data() + b, std::min(kChunk, eligible.size() - b));
    auto batch = pack(data, idx, cfg, 0.0, nullptr);
    std::vector<std::size_t> ids;
    nn::Lengths lengths;
    std::vector<std::vector<std::optional<std::size_t>>> truth;
    for (std::size_t k = 0; k < idx.size(); ++k) {
      const auto i = idx[k];
      const auto g = vocab.gloss.encode(data.glosses[i].glosses);
      ids.insert(ids.end(), g.begin(), g.end());
      lengths.push_back(g.size());
      truth.push_back(metrics::alignment_truth(batch.spans[k], data.truth[i], data.sign_names, data.glosses[i]));
    }
    auto out = model.forward(batch, ids, lengths, false, {false, nullptr});
    auto sim = losses::token_similarity_aggregate(out.mapped, out.tokens_per_video, out.text.embeddings,
                                                  out.text.lengths);
    std::size_t matched = 0;
    for (std::size_t k = 0; k < idx.size(); ++k)
      for (const auto& t : truth[k])
        if (t && *t < lengths[k]) ++matched;
    if (matched > 0) {
      correct += metrics::alignment_accuracy(sim, truth) * static_cast<double>(matched);
      counted += matched;
    }
    const std::size_t chunk = b / kChunk;
    for (std::size_t i = 0; i < idx.size(); ++i)
      for (std::size_t j = 0; j < idx.size(); ++j)
        result.pairs.push_back({chunk, data.videos[idx[i]].video_id, data.videos[idx[j]].video_id,
                                sim.z_v2t.at(i, j), sim.z_t2v.at(i, j)});
    for (std::size_t k = 0; k < idx.size(); ++k) {
      const std::size_t n = batch.tokens_per_video[k], m = lengths[k];
      const auto grid = sim.grid(k, k);
      for (std::size_t a = 0; a < n; ++a) {
        const auto row = grid.begin() + static_cast<std::ptrdiff_t>(a * m);
        const auto best = static_cast<std::size_t>(std::max_element(row, row + static_cast<std::ptrdiff_t>(m)) - row);
        for (std::size_t c = 0; c < m; ++c) {
          result.records.push_back({data.videos[idx[k]].video_id, a, batch.spans[k][a], c,
                                    data.glosses[idx[k]].glosses[c], grid[a * m + c], c == best, truth[k][a]});
        }
      }
    }
  }
  if (counted == 0) throw DataError("alignment evaluation: no visual token has a ground-truth gloss");
  result.accuracy = correct / static_cast<double>(counted);
  return result;
}

std::string similarity_csv(const std::vector<SimilarityRecord>& records) {
  std::ostringstream out;
  out << "video_id,token,span_start,span_end,gloss_index,gloss,similarity,is_argmax,truth_index\n";
  out.precision(6);
  for (const auto& r : records) {
    out << r.video_id << ',' << r.token << ',' << r.span.start << ',' << r.span.end << ',' << r.gloss << ',' << r.gloss_text << ',' << std::fixed << r.similarity
        << ',' << (r.argmax ? 1 : 0) << ',';
    if (r.truth) out << *r.truth;
    out << '\n';
  }
  return out.str();
}

std::string pair_score_csv(const std::vector<PairScore>& pairs) {
  std::ostringstream out;
  out << "chunk,video_id,text_id,z_v2t,z_t2v\n";
  out.precision(6);
  out << std::fixed;
  for (const auto& p : pairs)
    out << p.chunk << ',' << p.video_id << ',' << p.text_id << ',' << p.z_v2t << ',' << p.z_t2v << '\n';
  return out.str();
}

}  // namespace signtok::pipeline
