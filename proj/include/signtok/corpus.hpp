#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace signtok::corpus {

// Row-major float matrix (frames x channels).
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<float> data;

  float at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
  float& at(std::size_t r, std::size_t c) { return data[r * cols + c]; }
};

struct FrameSequence {
  std::string video_id;
  Matrix frames;  // T x c_in
  double fps = 25.0;

  std::size_t length() const { return frames.rows; }
  std::size_t dim() const { return frames.cols; }
};

// Closed 12-tag part-of-speech set (UPOS subset).
enum class Pos { NOUN, VERB, ADJ, ADV, PRON, PROPN, NUM, DET, ADP, PART, CCONJ, PUNCT };

std::string_view pos_name(Pos p);
Pos pos_from_name(std::string_view name);
// Content-word tags retained for pseudo-glosses.
const std::set<Pos>& default_keep_tags();

struct Word {
  std::string text;
  Pos pos;
  bool operator==(const Word&) const = default;
};

struct TaggedSentence {
  std::string video_id;
  std::vector<Word> words;

  std::vector<std::string> texts() const;
};

struct PseudoGlossSequence {
  std::string video_id;
  std::vector<std::string> glosses;
  std::vector<std::size_t> source_indices;  // positions in the tagged sentence
  // Set when no word survived filtering; such samples are kept out of contrastive batches.
  bool empty_flag = false;
};

PseudoGlossSequence extract_pseudo_gloss(const TaggedSentence& sentence,
                                         const std::set<Pos>& keep_tags = default_keep_tags());

// Token <-> id bijection with PAD/BOS/EOS/UNK fixed at ids 0..3.
class Vocabulary {
 public:
  static constexpr std::size_t kPad = 0;
  static constexpr std::size_t kBos = 1;
  static constexpr std::size_t kEos = 2;
  static constexpr std::size_t kUnk = 3;

  Vocabulary();
  explicit Vocabulary(const std::vector<std::string>& tokens);  // full table incl. reserved

  std::size_t size() const { return tokens_.size(); }
  std::size_t id(const std::string& token) const;  // UNK if absent
  bool contains(const std::string& token) const { return ids_.contains(token); }
  const std::string& token(std::size_t id) const;
  const std::vector<std::string>& tokens() const { return tokens_; }

  std::vector<std::size_t> encode(const std::vector<std::string>& words) const;
  // Drops reserved ids; stops at the first EOS.
  std::vector<std::string> decode(const std::vector<std::size_t>& ids) const;

  bool operator==(const Vocabulary& other) const { return tokens_ == other.tokens_; }

 private:
  void push(const std::string& token);
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, std::size_t> ids_;
};

// Reserved tokens plus every word with count >= min_count; ids assigned by
// descending frequency, ties broken lexicographically.
Vocabulary build_vocabulary(const std::vector<TaggedSentence>& sentences, std::size_t min_count = 1);
// Same rule over plain word sequences (e.g. pseudo-gloss strings).
Vocabulary build_vocabulary(const std::vector<std::vector<std::string>>& sequences, std::size_t min_count = 1);

struct Span {
  std::size_t start = 0;  // inclusive frame index
  std::size_t end = 0;    // exclusive frame index
  std::size_t length() const { return end - start; }
  bool operator==(const Span&) const = default;
};

struct GroundTruth {
  std::string video_id;
  std::vector<Span> spans;
  std::vector<std::size_t> sign_ids;
};

struct SyntheticSpec {
  std::size_t sign_vocab_size = 40;
  std::size_t prototype_dim = 32;
  std::size_t duration_min = 5;
  std::size_t duration_max = 10;
  std::size_t sentence_min = 5;
  std::size_t sentence_max = 10;
  double noise_sigma = 0.1;
  double filler_prob = 0.2;
  double swap_prob = 0.1;
  std::uint64_t seed = 0;
  double fps = 25.0;

  void validate() const;
};

struct SyntheticCorpus {
  std::vector<FrameSequence> videos;
  std::vector<TaggedSentence> sentences;
  std::vector<GroundTruth> truth;
  std::vector<std::string> sign_names;  // index = sign id
};

// Renders each video as a concatenation of signs: sign g contributes
// envelope(t) * prototype_g + N(0, sigma^2) for each of its d frames, with the
// raised-cosine envelope 0.5 * (1 - cos(2 pi t / d)) starting from rest. The
// spoken sentence follows a seeded grammar drawn once per corpus. Each sign
// belongs to one of seven content classes (sign id mod 7); each ordered pair of
// classes carries a filler word with probability filler_prob and is spoken in
// swapped order with probability swap_prob, applied to every adjacent sign pair
// of those classes.
SyntheticCorpus generate_synthetic(const SyntheticSpec& spec, std::size_t num_videos);

// ---- file formats ----

// "SGF1" | u32 version=1 | u32 T | u32 c_in | T*c_in float32, little-endian.
void write_frame_file(const std::filesystem::path& path, const FrameSequence& video);
FrameSequence read_frame_file(const std::filesystem::path& path, const std::string& video_id);

struct ManifestEntry {
  std::string video_id;
  std::string path;  // relative to the manifest's directory unless absolute
};

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& manifest_path);
// Loads every entry in manifest order; errors name the offending video_id.
std::vector<FrameSequence> load_frame_sequences(const std::filesystem::path& manifest_path);

void write_transcripts(const std::filesystem::path& path, const std::vector<TaggedSentence>& sentences);
std::vector<TaggedSentence> read_transcripts(const std::filesystem::path& path);
void write_ground_truth(const std::filesystem::path& path, const std::vector<GroundTruth>& truth);
std::vector<GroundTruth> read_ground_truth(const std::filesystem::path& path);

// A split directory holds manifest.jsonl, transcripts.jsonl, ground_truth.jsonl
// (optional) and features/<video_id>.sgf.
struct CorpusSplit {
  std::vector<FrameSequence> videos;
  std::vector<TaggedSentence> sentences;  // aligned with videos
  std::vector<GroundTruth> truth;         // aligned with videos, empty if absent
};

void write_split(const std::filesystem::path& dir, const std::vector<FrameSequence>& videos,
                 const std::vector<TaggedSentence>& sentences, const std::vector<GroundTruth>& truth);
CorpusSplit read_split(const std::filesystem::path& dir);

}  // namespace signtok::corpus
