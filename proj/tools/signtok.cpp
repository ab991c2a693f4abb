// signtok: batch front end for the segment-aware sign-language translation
// pipeline. One command per invocation; every command writes its outputs under
// a run directory whose config.snapshot (the effective settings) is written
// before anything else.
//
// Exit codes: 0 ok, 2 usage, 3 data error, 4 numerical-check failure. Failures
// print one structured line to stderr:
//   signtok: error {"code":3,"kind":"data","message":"..."}

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include "signtok/error.hpp"
#include "signtok/pipeline.hpp"

namespace {

namespace fs = std::filesystem;
using namespace signtok;
using pipeline::Dataset;
using pipeline::RunConfig;
using pipeline::RunDir;
using pipeline::Stage;
using nlohmann::json;

constexpr const char* kLexiconFile = "lexicon.json";

// ---- small helpers ----

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_text(const fs::path& path, const std::string& text) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
}

json read_json(const fs::path& path) {
  try {
    return json::parse(read_text(path));
  } catch (const json::parse_error& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream in(text);
  for (std::string item; std::getline(in, item, ',');)
    if (!item.empty()) out.push_back(item);
  return out;
}

std::vector<std::size_t> parse_sizes(const std::string& text) {
  std::vector<std::size_t> out;
  for (const auto& item : split_list(text)) {
    std::size_t used = 0;
    unsigned long long v = 0;
    try {
      v = std::stoull(item, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != item.size() || v == 0) throw UsageError("'" + item + "' is not a positive integer");
    out.push_back(static_cast<std::size_t>(v));
  }
  if (out.empty()) throw UsageError("expected a comma-separated list of positive integers");
  return out;
}

// "energy" is accepted as shorthand for the motion-energy segmenter.
segment::Source parse_source(const std::string& name) {
  return segment::source_from_name(name == "energy" ? "motion_energy" : name);
}

// Creates the run directory and writes the effective settings first.
RunDir open_run(const std::string& dir, const json& snapshot) {
  RunDir run(dir);
  run.initialize(snapshot);
  return run;
}

// ---- config-file overrides for option-only commands ----

// Applies `{"flag-name": value, ...}` from a JSON file to options of `cmd`
// that were not given on the command line. Unknown keys are rejected.
void apply_flag_file(CLI::App* cmd, const std::string& path) {
  const json j = read_json(path);
  if (!j.is_object()) throw UsageError(path + ": config file must hold an object");
  for (const auto& [key, value] : j.items()) {
    std::string name = key;
    std::replace(name.begin(), name.end(), '_', '-');
    CLI::Option* opt = cmd->get_option_no_throw("--" + name);
    if (opt == nullptr || name == "config") throw UsageError(path + ": unknown key '" + key + "'");
    if (opt->count() > 0) continue;  // explicit flags win
    std::string text;
    if (value.is_string()) text = value.get<std::string>();
    else if (value.is_boolean()) text = value.get<bool>() ? "true" : "false";
    else text = value.dump();
    opt->add_result(text);
    opt->run_callback();
  }
}

// ---- training configuration ----

struct TrainFlags {
  std::string config_file;
  std::optional<std::size_t> epochs, seed, batch_size, beam;
  std::optional<double> lr, beta, noise;
  std::optional<std::string> loss_mode, policy, segmenter;
  bool single = false;

  void add(CLI::App* cmd, Stage stage) {
    cmd->add_option("--config", config_file, "Run config JSON; flags given here override it")
        ->check(CLI::ExistingFile);
    cmd->add_option("--epochs", epochs, "Training epochs");
    cmd->add_option("--seed", seed, "Random seed");
    cmd->add_option("--batch-size", batch_size, "Batch size");
    cmd->add_option("--lr", lr, "Initial learning rate");
    cmd->add_option("--feature-noise", noise, "Gaussian feature-noise augmentation sigma");
    cmd->add_option("--segmenter", segmenter, "oracle | energy | uniform");
    if (stage == Stage::pretrain) {
      cmd->add_option("--beta", beta, "Weight of the embedding-level alignment term");
      cmd->add_option("--loss-mode", loss_mode, "clcl | clip");
      cmd->add_flag("--single", single, "Disable dual (hidden-state) supervision");
    } else {
      cmd->add_option("--policy", policy, "Stage-1 transfer policy: none | vle | vle_plus_te");
      cmd->add_option("--beam", beam, "Beam width for the test-split report");
    }
  }

  RunConfig resolve(Stage stage) const {
    json base = config_file.empty() ? json::object() : read_json(config_file);
    if (!base.is_object()) throw UsageError(config_file + ": run config must be an object");
    if (base.contains("stage") && base["stage"] != std::string(pipeline::stage_name(stage))) {
      throw UsageError(config_file + ": config is for stage '" + base["stage"].dump() + "'");
    }
    base["stage"] = std::string(pipeline::stage_name(stage));
    json o = json::object();
    if (epochs) o["epochs"] = *epochs;
    if (seed) o["seed"] = *seed;
    if (batch_size) o["batch_size"] = *batch_size;
    if (lr) o["lr"] = *lr;
    if (noise) o["feature_noise"] = *noise;
    if (segmenter) o["segmenter"] = std::string(segment::source_name(parse_source(*segmenter)));
    if (beta) o["beta"] = *beta;
    if (loss_mode) o["loss_mode"] = *loss_mode;
    if (single) o["dual_supervision"] = false;
    if (policy) o["policy"] = *policy;
    if (beam) o["beam_width"] = *beam;
    return RunConfig::from_json(base, stage).with(o);
  }
};

// ---- corpus loading ----

// Loads <root>/<split> plus the sign lexicon in <root>/lexicon.json if present.
Dataset load_split(const std::string& root, const std::string& split, const RunConfig& cfg) {
  const fs::path dir = fs::path(root) / split;
  if (!fs::is_directory(dir)) throw DataError("missing split directory " + dir.string());
  auto data = corpus::read_split(dir);
  Dataset d = pipeline::prepare_dataset(std::move(data.videos), std::move(data.sentences), std::move(data.truth), cfg);
  const fs::path lexicon = fs::path(root) / kLexiconFile;
  if (fs::exists(lexicon)) {
    try {
      d.sign_names = read_json(lexicon).at("sign_names").get<std::vector<std::string>>();
    } catch (const json::exception& e) {
      throw DataError(lexicon.string() + ": " + e.what());
    }
  }
  return d;
}

std::string translations_jsonl(const std::vector<pipeline::TranslationOutput>& outputs) {
  std::string text;
  for (const auto& o : outputs) {
    text += json{{"video_id", o.video_id},
                 {"hypothesis", metrics::join(o.hypothesis)},
                 {"reference", metrics::join(o.reference)}}
                .dump();
    text += '\n';
  }
  return text;
}

void write_report(const RunDir& run, const std::string& stem, const metrics::EvalReport& report) {
  write_text(run.reports() / (stem + ".json"), report.to_json() + "\n");
  write_text(run.reports() / (stem + ".csv"), metrics::EvalReport::csv_header() + "\n" + report.csv_row() + "\n");
}

// ---- commands ----

struct GenerateSynth {
  std::uint64_t seed = 0;
  std::size_t videos = 200, signs = 40;
  std::optional<std::size_t> min_signs, max_signs;
  double noise = 0.1, dev_fraction = 0.1, test_fraction = 0.1;

  void add(CLI::App* cmd) {
    cmd->add_option("--seed", seed, "Corpus seed");
    cmd->add_option("--videos", videos, "Total number of videos")->check(CLI::PositiveNumber);
    cmd->add_option("--signs", signs, "Sign vocabulary size")->check(CLI::PositiveNumber);
    cmd->add_option("--min-signs", min_signs, "Fewest signs per video")->check(CLI::PositiveNumber);
    cmd->add_option("--max-signs", max_signs, "Most signs per video")->check(CLI::PositiveNumber);
    cmd->add_option("--noise", noise, "Per-frame Gaussian noise sigma")->check(CLI::NonNegativeNumber);
    cmd->add_option("--dev-fraction", dev_fraction, "Share of videos in the dev split")->check(CLI::Range(0.0, 1.0));
    cmd->add_option("--test-fraction", test_fraction, "Share of videos in the test split")->check(CLI::Range(0.0, 1.0));
  }

  void run(const std::string& run_dir) const {
    corpus::SyntheticSpec spec;
    spec.seed = seed;
    spec.sign_vocab_size = signs;
    spec.noise_sigma = noise;
    if (min_signs) spec.sentence_min = *min_signs;
    if (max_signs) spec.sentence_max = *max_signs;
    spec.validate();
    const auto n_dev = static_cast<std::size_t>(dev_fraction * static_cast<double>(videos));
    const auto n_test = static_cast<std::size_t>(test_fraction * static_cast<double>(videos));
    if (n_dev + n_test >= videos) throw UsageError("dev and test fractions leave no training videos");
    const json snapshot = {{"command", "generate-synth"}, {"seed", seed},    {"videos", videos},
                           {"signs", signs},              {"noise", noise}, {"dev_fraction", dev_fraction},
                           {"min_signs", spec.sentence_min}, {"max_signs", spec.sentence_max},
                           {"test_fraction", test_fraction}};
    const RunDir run = open_run(run_dir, snapshot);
    const auto corpus = corpus::generate_synthetic(spec, videos);
    const fs::path data = run.root / "data";
    auto write = [&](const std::string& name, std::size_t begin, std::size_t end) {
      auto cut = [&](const auto& v) { return std::decay_t<decltype(v)>(v.begin() + begin, v.begin() + end); };
      corpus::write_split(data / name, cut(corpus.videos), cut(corpus.sentences), cut(corpus.truth));
    };
    const std::size_t n_train = videos - n_dev - n_test;
    write("train", 0, n_train);
    write("dev", n_train, n_train + n_dev);
    write("test", n_train + n_dev, videos);
    write_text(data / kLexiconFile, json{{"sign_names", corpus.sign_names}}.dump(2) + "\n");
    std::cout << json{{"data", data.string()}, {"train", n_train}, {"dev", n_dev}, {"test", n_test}}.dump() << '\n';
  }
};

struct Segment {
  std::string data, split = "train", method = "energy", energy = "activity";
  std::size_t factor = 4, min_len = 5, smooth = 3, tolerance = 2;

  void add(CLI::App* cmd) {
    cmd->add_option("--data", data, "Corpus root (holds the split directories)")->required();
    cmd->add_option("--split", split, "Split to segment");
    cmd->add_option("--method", method, "oracle | energy | uniform");
    cmd->add_option("--factor", factor, "Group size for the uniform method")->check(CLI::PositiveNumber);
    cmd->add_option("--min-len", min_len, "Minimum span length for the energy method")->check(CLI::PositiveNumber);
    cmd->add_option("--smooth", smooth, "Odd smoothing window for the energy method")->check(CLI::PositiveNumber);
    cmd->add_option("--energy", energy, "activity | difference");
    cmd->add_option("--tolerance", tolerance, "Boundary tolerance (frames) for the F1 report");
  }

  void run(const std::string& run_dir) const {
    const segment::Source source = parse_source(method);
    const segment::EnergyOptions opts{smooth, min_len, segment::energy_from_name(energy)};
    if (smooth % 2 == 0) throw UsageError("--smooth must be odd");
    const json snapshot = {{"command", "segment"}, {"data", data},       {"split", split},   {"method", method},
                           {"factor", factor},     {"min_len", min_len}, {"smooth", smooth}, {"energy", energy}};
    const RunDir run = open_run(run_dir, snapshot);
    const auto split_data = corpus::read_split(fs::path(data) / split);
    std::vector<segment::SegmentSet> sets;
    for (std::size_t i = 0; i < split_data.videos.size(); ++i) {
      switch (source) {
        case segment::Source::oracle:
          if (split_data.truth.empty()) throw DataError("oracle segmentation needs ground_truth.jsonl");
          sets.push_back(segment::segment_oracle(split_data.truth[i]));
          break;
        case segment::Source::motion_energy:
          sets.push_back(segment::segment_motion_energy(split_data.videos[i], opts));
          break;
        case segment::Source::uniform:
          sets.push_back(segment::segment_uniform(split_data.videos[i], factor));
          break;
        default:
          throw UsageError("--method must be oracle, energy or uniform");
      }
    }
    segment::write_segment_file(run.reports() / "segments.jsonl", sets);
    const auto ratio = segment::reduction_report(sets);
    json summary = {{"videos", sets.size()}, {"frames", ratio.total_frames}, {"tokens", ratio.total_tokens},
                    {"reduction_ratio", ratio.ratio}};
    if (!split_data.truth.empty()) {
      std::vector<segment::SegmentSet> truth;
      for (const auto& t : split_data.truth) truth.push_back(segment::segment_oracle(t));
      const auto f1 = segment::boundary_f1(sets, truth, tolerance);
      summary["boundary"] = {{"precision", f1.precision}, {"recall", f1.recall}, {"f1", f1.f1}, {"tolerance", tolerance}};
    }
    write_text(run.reports() / "segmentation.json", summary.dump(2) + "\n");
    std::cout << summary.dump() << '\n';
  }
};

struct Pretrain {
  std::string data;
  bool resume = false;
  TrainFlags flags;

  void add(CLI::App* cmd) {
    cmd->add_option("--data", data, "Corpus root (train/, optional dev/ and lexicon.json)")->required();
    cmd->add_flag("--resume", resume, "Continue from <run-dir>/checkpoints/last.ckpt");
    flags.add(cmd, Stage::pretrain);
  }

  void run(const std::string& run_dir) const {
    const RunConfig cfg = flags.resolve(Stage::pretrain);
    const RunDir run(run_dir);
    if (!resume) run.initialize(cfg.to_json());
    const Dataset train = load_split(data, "train", cfg);
    const auto result = pipeline::pretrain(cfg, train, {run, resume, 0});
    json summary = {{"checkpoint", (run.checkpoints() / "pretrain.ckpt").string()},
                    {"epochs", result.last.epoch},
                    {"config_hash", cfg.hash()}};
    if (!result.logs.empty()) summary["final_losses"] = result.logs.back().losses;
    if (fs::is_directory(fs::path(data) / "dev")) {
      const Dataset dev = load_split(data, "dev", cfg);
      if (dev.has_truth() && !dev.sign_names.empty()) {
        auto loaded = pipeline::load_pretrain(result.last);
        const auto align = pipeline::evaluate_alignment(*loaded.model, loaded.vocab, cfg, dev);
        summary["dev_alignment_accuracy"] = align.accuracy;
      }
    }
    write_text(run.reports() / "pretrain.json", summary.dump(2) + "\n");
    std::cout << summary.dump() << '\n';
  }
};

struct Train {
  std::string data, stage1;
  bool resume = false;
  TrainFlags flags;

  void add(CLI::App* cmd) {
    cmd->add_option("--data", data, "Corpus root (train/, dev/, test/)")->required();
    cmd->add_option("--stage1", stage1, "Stage-1 checkpoint (needed unless --policy none)")
        ->check(CLI::ExistingFile);
    cmd->add_flag("--resume", resume, "Continue from <run-dir>/checkpoints/last.ckpt");
    flags.add(cmd, Stage::finetune);
  }

  void run(const std::string& run_dir) const {
    const RunConfig cfg = flags.resolve(Stage::finetune);
    const RunDir run(run_dir);
    if (!resume) run.initialize(cfg.to_json());
    const Dataset train = load_split(data, "train", cfg);
    const Dataset dev = fs::is_directory(fs::path(data) / "dev") ? load_split(data, "dev", cfg) : Dataset{};
    std::optional<nn::Checkpoint> s1;
    if (!stage1.empty()) s1 = nn::load_checkpoint(stage1);
    const auto result = pipeline::finetune(cfg, train, dev, s1 ? &*s1 : nullptr, {run, resume, 0});
    json summary = {{"best_checkpoint", (run.checkpoints() / "best.ckpt").string()},
                    {"best_epoch", result.best_epoch},
                    {"config_hash", cfg.hash()}};
    if (result.initial_validation) summary["initial_dev_bleu4"] = result.initial_validation->bleu4();
    if (fs::is_directory(fs::path(data) / "test")) {
      const Dataset test = load_split(data, "test", cfg);
      auto loaded = pipeline::load_translation(result.best);
      const auto outputs = pipeline::translate_dataset(loaded.model->translator, loaded.vocab.text, test,
                                                       cfg.beam_width);
      auto report = pipeline::evaluate_outputs(outputs);
      report.reduction_ratio = test.reduction_ratio();
      write_text(run.reports() / "test_translations.jsonl", translations_jsonl(outputs));
      write_report(run, "test_report", report);
      summary["test"] = json::parse(report.to_json());
    }
    write_text(run.reports() / "train.json", summary.dump(2) + "\n");
    std::cout << summary.dump() << '\n';
  }
};

struct Translate {
  std::string checkpoint, data, split = "test";
  std::size_t beam = 4, max_len = 150;

  void add(CLI::App* cmd) {
    cmd->add_option("--checkpoint", checkpoint, "Translation checkpoint")->required()->check(CLI::ExistingFile);
    cmd->add_option("--data", data, "Corpus root")->required();
    cmd->add_option("--split", split, "Split to translate");
    cmd->add_option("--beam", beam, "Beam width (1 = greedy)")->check(CLI::PositiveNumber);
    cmd->add_option("--max-len", max_len, "Maximum generated tokens")->check(CLI::PositiveNumber);
  }

  void run(const std::string& run_dir) const {
    const json snapshot = {{"command", "translate"}, {"checkpoint", checkpoint}, {"data", data},
                           {"split", split},         {"beam", beam},             {"max_len", max_len}};
    const RunDir run = open_run(run_dir, snapshot);
    auto loaded = pipeline::load_translation(nn::load_checkpoint(checkpoint),
                                             {{"max_decode_len", max_len}, {"beam_width", beam}});
    const Dataset d = load_split(data, split, loaded.config);
    const auto outputs = pipeline::translate_dataset(loaded.model->translator, loaded.vocab.text, d, beam);
    const fs::path out = run.reports() / "translations.jsonl";
    write_text(out, translations_jsonl(outputs));
    std::cout << json{{"translations", out.string()}, {"videos", outputs.size()}}.dump() << '\n';
  }
};

struct Evaluate {
  std::string translations, hyp, ref;

  void add(CLI::App* cmd) {
    cmd->add_option("--translations", translations, "JSONL with hypothesis and reference fields")
        ->check(CLI::ExistingFile);
    cmd->add_option("--hyp", hyp, "Hypotheses, one sentence per line")->check(CLI::ExistingFile);
    cmd->add_option("--ref", ref, "References, one sentence per line")->check(CLI::ExistingFile);
  }

  static std::vector<metrics::Sentence> read_lines(const std::string& path) {
    std::vector<metrics::Sentence> out;
    std::istringstream in(read_text(path));
    for (std::string line; std::getline(in, line);) out.push_back(metrics::tokenize(line));
    return out;
  }

  void run(const std::string& run_dir) const {
    if (translations.empty() == (hyp.empty() || ref.empty())) {
      throw UsageError("give either --translations or both --hyp and --ref");
    }
    const json snapshot = {{"command", "evaluate"}, {"translations", translations}, {"hyp", hyp}, {"ref", ref}};
    const RunDir run = open_run(run_dir, snapshot);
    std::vector<metrics::Sentence> hyps, refs;
    if (!translations.empty()) {
      std::istringstream in(read_text(translations));
      std::size_t line_no = 0;
      for (std::string line; std::getline(in, line);) {
        ++line_no;
        if (line.empty()) continue;
        try {
          const json j = json::parse(line);
          hyps.push_back(metrics::tokenize(j.at("hypothesis").get<std::string>()));
          refs.push_back(metrics::tokenize(j.at("reference").get<std::string>()));
        } catch (const json::exception& e) {
          throw DataError(translations + ":" + std::to_string(line_no) + ": " + e.what());
        }
      }
    } else {
      hyps = read_lines(hyp);
      refs = read_lines(ref);
    }
    const auto report = metrics::evaluate(hyps, refs);
    write_report(run, "report", report);
    std::cout << report.to_json() << '\n' << metrics::EvalReport::csv_header() << '\n' << report.csv_row() << '\n';
  }
};

struct GradCheck {
  std::string loss = "all";
  std::size_t batch = 3;
  std::uint64_t seed = 0;
  double tolerance = 1e-5;

  void add(CLI::App* cmd) {
    cmd->add_option("--loss", loss, "ce | clcl (alias of ce) | hs | total | clip | lm | all");
    cmd->add_option("--batch", batch, "Pairs in the random batch")->check(CLI::PositiveNumber);
    cmd->add_option("--seed", seed, "Random seed");
    cmd->add_option("--tolerance", tolerance, "Maximum accepted relative error")->check(CLI::PositiveNumber);
  }

  // Returns true when every checked loss is within tolerance.
  bool run(const std::string& run_dir) const {
    const json snapshot = {{"command", "gradcheck"}, {"loss", loss}, {"batch", batch}, {"seed", seed},
                           {"tolerance", tolerance}};
    const RunDir run = open_run(run_dir, snapshot);
    std::vector<pipeline::GradLoss> which;
    if (loss == "all") {
      which = {pipeline::GradLoss::ce, pipeline::GradLoss::hs, pipeline::GradLoss::total, pipeline::GradLoss::clip,
               pipeline::GradLoss::lm};
    } else {
      which = {pipeline::grad_loss_from_name(loss == "clcl" ? "ce" : loss)};
    }
    bool ok = true;
    json results = json::array();
    for (auto l : which) {
      const auto r = pipeline::check_loss_gradient(l, batch, seed);
      const bool pass = r.max_rel_error <= tolerance;
      ok = ok && pass;
      json line = {{"loss", pipeline::grad_loss_name(l)}, {"max_rel_error", r.max_rel_error},
                   {"coords", r.coords_checked},          {"worst", r.worst},
                   {"pass", pass}};
      std::cout << line.dump() << '\n';
      results.push_back(line);
    }
    write_text(run.reports() / "gradcheck.json", results.dump(2) + "\n");
    return ok;
  }
};

struct BenchMemory {
  std::string lengths = "16,32,64,128";
  std::size_t layers = 3, heads = 8, batch = 1, dim = 1024, measure_dim = 32;
  bool measure = false;

  void add(CLI::App* cmd) {
    cmd->add_option("--lengths", lengths, "Comma-separated sequence lengths");
    cmd->add_option("--layers", layers, "Self-attention layers")->check(CLI::PositiveNumber);
    cmd->add_option("--heads", heads, "Attention heads")->check(CLI::PositiveNumber);
    cmd->add_option("--batch", batch, "Sequences per batch")->check(CLI::PositiveNumber);
    cmd->add_option("--dim", dim, "Model width for the analytic count");
    cmd->add_flag("--measure", measure, "Also measure peak tensor storage of a forward+backward pass");
    cmd->add_option("--measure-dim", measure_dim, "Model width of the measured encoder")->check(CLI::PositiveNumber);
  }

  void run(const std::string& run_dir) const {
    const auto ls = parse_sizes(lengths);
    const json snapshot = {{"command", "bench-memory"}, {"lengths", ls},  {"layers", layers},
                           {"heads", heads},            {"batch", batch}, {"dim", dim},
                           {"measure", measure},        {"measure_dim", measure_dim}};
    const RunDir run = open_run(run_dir, snapshot);
    if (measure && measure_dim % heads != 0) throw UsageError("--measure-dim must be divisible by --heads");
    std::string csv = metrics::MemoryProfile::csv_header() + "\n";
    for (auto L : ls) {
      auto p = metrics::attention_memory_profile(L, layers, heads, batch, dim);
      if (measure) p.measured_peak_bytes = metrics::measure_attention_peak(L, layers, heads, batch, measure_dim);
      csv += p.csv_row() + "\n";
    }
    write_text(run.reports() / "memory.csv", csv);
    std::cout << csv;
  }
};

struct ExportSimilarity {
  std::string checkpoint, data, split = "dev";

  void add(CLI::App* cmd) {
    cmd->add_option("--checkpoint", checkpoint, "Stage-1 checkpoint")->required()->check(CLI::ExistingFile);
    cmd->add_option("--data", data, "Corpus root (needs ground truth and lexicon.json)")->required();
    cmd->add_option("--split", split, "Split to export");
  }

  void run(const std::string& run_dir) const {
    const json snapshot = {{"command", "export-similarity"}, {"checkpoint", checkpoint}, {"data", data},
                           {"split", split}};
    const RunDir run = open_run(run_dir, snapshot);
    auto loaded = pipeline::load_pretrain(nn::load_checkpoint(checkpoint));
    const Dataset d = load_split(data, split, loaded.config);
    const auto result = pipeline::evaluate_alignment(*loaded.model, loaded.vocab, loaded.config, d);
    write_text(run.reports() / "token_similarity.csv", pipeline::similarity_csv(result.records));
    write_text(run.reports() / "z_matrix.csv", pipeline::pair_score_csv(result.pairs));
    const json summary = {{"alignment_accuracy", result.accuracy}, {"token_rows", result.records.size()}};
    write_text(run.reports() / "alignment.json", summary.dump(2) + "\n");
    std::cout << summary.dump() << '\n';
  }
};

struct Ablate {
  std::string data, axis, values, pretrain_config, finetune_config;
  std::optional<std::size_t> pretrain_epochs, finetune_epochs, seed;

  void add(CLI::App* cmd) {
    cmd->add_option("--data", data, "Corpus root (train/, dev/, test/)")->required();
    cmd->add_option("--axis", axis, "beta | loss_mode | policy")->required();
    cmd->add_option("--values", values, "Comma-separated axis values, e.g. 0,0.2,0.4 or clcl:dual,clip:single")
        ->required();
    cmd->add_option("--pretrain-config", pretrain_config, "Stage-1 run config JSON")->check(CLI::ExistingFile);
    cmd->add_option("--finetune-config", finetune_config, "Stage-2 run config JSON")->check(CLI::ExistingFile);
    cmd->add_option("--pretrain-epochs", pretrain_epochs, "Override stage-1 epochs");
    cmd->add_option("--finetune-epochs", finetune_epochs, "Override stage-2 epochs");
    cmd->add_option("--seed", seed, "Seed for both stages");
  }

  void run(const std::string& run_dir) const {
    auto load = [](const std::string& path, Stage stage) {
      json j = path.empty() ? json::object() : read_json(path);
      j["stage"] = std::string(pipeline::stage_name(stage));
      return RunConfig::from_json(j, stage);
    };
    RunConfig pre = load(pretrain_config, Stage::pretrain), fine = load(finetune_config, Stage::finetune);
    if (pretrain_epochs) pre.epochs = *pretrain_epochs;
    if (finetune_epochs) fine.epochs = *finetune_epochs;
    if (seed) pre.seed = fine.seed = *seed;
    pre.validate();
    fine.validate();
    const auto list = split_list(values);
    const json snapshot = {{"command", "ablate"}, {"axis", axis},          {"values", list},
                           {"data", data},        {"pretrain", pre.to_json()}, {"finetune", fine.to_json()}};
    const RunDir run = open_run(run_dir, snapshot);
    const Dataset train = load_split(data, "train", pre), dev = load_split(data, "dev", pre),
                  test = load_split(data, "test", pre);
    const auto rows = pipeline::run_ablation_grid(pre, fine, axis, list, train, dev, test);
    const std::string csv = pipeline::ablation_csv(rows);
    write_text(run.reports() / "ablation.csv", csv);
    std::cout << csv;
  }
};

int fail(ExitCode code, std::string_view kind, const std::string& message) {
  std::cerr << "signtok: error "
            << json{{"code", static_cast<int>(code)}, {"kind", kind}, {"message", message}}.dump() << '\n';
  return static_cast<int>(code);
}

std::string_view kind_of(ExitCode code) {
  switch (code) {
    case ExitCode::usage: return "usage";
    case ExitCode::numeric: return "numeric";
    case ExitCode::data: return "data";
    case ExitCode::ok: break;
  }
  return "ok";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Segment-aware sign-language translation: synthetic data, contrastive pretraining, "
               "translation fine-tuning and evaluation."};
  app.require_subcommand(1);
  app.allow_extras(false);

  std::string run_dir;
  std::string flag_file;
  auto command = [&](const char* name, const char* help, bool flag_config) {
    CLI::App* cmd = app.add_subcommand(name, help);
    cmd->add_option("--run-dir", run_dir, "Output run directory (default runs/<command>)");
    if (flag_config) {
      cmd->add_option("--config", flag_file, "JSON object of flag values; explicit flags win")
          ->check(CLI::ExistingFile);
    }
    return cmd;
  };

  GenerateSynth generate;
  Segment seg;
  Pretrain pre;
  Train train;
  Translate trans;
  Evaluate eval;
  GradCheck grad;
  BenchMemory bench;
  ExportSimilarity similarity;
  Ablate ablate;

  auto* c_generate = command("generate-synth", "Write a seeded synthetic corpus (train/dev/test + lexicon)", true);
  generate.add(c_generate);
  auto* c_segment = command("segment", "Segment a split and report reduction ratio and boundary F1", true);
  seg.add(c_segment);
  auto* c_pretrain = command("pretrain", "Stage 1: contrastive visual-language pretraining", false);
  pre.add(c_pretrain);
  auto* c_train = command("train", "Stage 2: translation fine-tuning (+ test report)", false);
  train.add(c_train);
  auto* c_translate = command("translate", "Decode a split to JSONL {video_id, hypothesis, reference}", true);
  trans.add(c_translate);
  auto* c_evaluate = command("evaluate", "BLEU-1..4 and ROUGE-L of hypotheses against references", true);
  eval.add(c_evaluate);
  auto* c_grad = command("gradcheck", "Compare loss gradients with central differences", true);
  grad.add(c_grad);
  auto* c_bench = command("bench-memory", "Attention memory accounting across a length sweep", true);
  bench.add(c_bench);
  auto* c_similarity = command("export-similarity", "Export token similarity grids and Z matrices", true);
  similarity.add(c_similarity);
  auto* c_ablate = command("ablate", "Run a pretrain+finetune grid along one axis", false);
  ablate.add(c_ablate);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail(ExitCode::usage, "usage", e.what());
  }

  try {
    CLI::App* cmd = app.get_subcommands().front();
    if (!flag_file.empty()) apply_flag_file(cmd, flag_file);
    if (run_dir.empty()) run_dir = (fs::path("runs") / cmd->get_name()).string();
    const std::string name = cmd->get_name();
    if (name == "generate-synth") generate.run(run_dir);
    else if (name == "segment") seg.run(run_dir);
    else if (name == "pretrain") pre.run(run_dir);
    else if (name == "train") train.run(run_dir);
    else if (name == "translate") trans.run(run_dir);
    else if (name == "evaluate") eval.run(run_dir);
    else if (name == "gradcheck") {
      if (!grad.run(run_dir)) return fail(ExitCode::numeric, "numeric", "gradient check above tolerance");
    } else if (name == "bench-memory") bench.run(run_dir);
    else if (name == "export-similarity") similarity.run(run_dir);
    else if (name == "ablate") ablate.run(run_dir);
    return 0;
  } catch (const CLI::ParseError& e) {
    return fail(ExitCode::usage, "usage", e.what());
  } catch (const Error& e) {
    return fail(e.exit_code(), kind_of(e.exit_code()), e.what());
  } catch (const json::exception& e) {
    return fail(ExitCode::data, "data", e.what());
  } catch (const std::filesystem::filesystem_error& e) {
    return fail(ExitCode::data, "data", e.what());
  }
}
