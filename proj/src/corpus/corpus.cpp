#include "signtok/corpus.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <random>

#include "signtok/error.hpp"

namespace signtok::corpus {

namespace {

constexpr std::array<std::string_view, 12> kPosNames = {"NOUN", "VERB", "ADJ",  "ADV", "PRON", "PROPN",
                                                        "NUM",  "DET",  "ADP", "PART", "CCONJ", "PUNCT"};

}  // namespace

std::string_view pos_name(Pos p) { return kPosNames[static_cast<std::size_t>(p)]; }

Pos pos_from_name(std::string_view name) {
  for (std::size_t i = 0; i < kPosNames.size(); ++i)
    if (kPosNames[i] == name) return static_cast<Pos>(i);
  throw DataError("unknown part-of-speech tag '" + std::string(name) + "'");
}

const std::set<Pos>& default_keep_tags() {
  static const std::set<Pos> tags = {Pos::NOUN, Pos::VERB, Pos::ADJ, Pos::NUM, Pos::ADV, Pos::PRON, Pos::PROPN};
  return tags;
}

std::vector<std::string> TaggedSentence::texts() const {
  std::vector<std::string> out;
  out.reserve(words.size());
  for (const auto& w : words) out.push_back(w.text);
  return out;
}

PseudoGlossSequence extract_pseudo_gloss(const TaggedSentence& sentence, const std::set<Pos>& keep_tags) {
  PseudoGlossSequence out;
  out.video_id = sentence.video_id;
  for (std::size_t i = 0; i < sentence.words.size(); ++i) {
    if (keep_tags.contains(sentence.words[i].pos)) {
      out.glosses.push_back(sentence.words[i].text);
      out.source_indices.push_back(i);
    }
  }
  out.empty_flag = out.glosses.empty();
  return out;
}

// ---- vocabulary ----

Vocabulary::Vocabulary() {
  for (const char* t : {"<pad>", "<bos>", "<eos>", "<unk>"}) push(t);
}

Vocabulary::Vocabulary(const std::vector<std::string>& tokens) {
  if (tokens.size() < 4 || tokens[kPad] != "<pad>" || tokens[kBos] != "<bos>" || tokens[kEos] != "<eos>" ||
      tokens[kUnk] != "<unk>") {
    throw DataError("vocabulary table must start with <pad>, <bos>, <eos>, <unk>");
  }
  for (const auto& t : tokens) push(t);
}

void Vocabulary::push(const std::string& token) {
  if (!ids_.emplace(token, tokens_.size()).second) throw DataError("duplicate vocabulary token '" + token + "'");
  tokens_.push_back(token);
}

std::size_t Vocabulary::id(const std::string& token) const {
  auto it = ids_.find(token);
  return it == ids_.end() ? kUnk : it->second;
}

const std::string& Vocabulary::token(std::size_t id) const {
  if (id >= tokens_.size()) throw DataError("token id " + std::to_string(id) + " out of vocabulary range");
  return tokens_[id];
}

std::vector<std::size_t> Vocabulary::encode(const std::vector<std::string>& words) const {
  std::vector<std::size_t> ids;
  ids.reserve(words.size());
  for (const auto& w : words) ids.push_back(id(w));
  return ids;
}

std::vector<std::string> Vocabulary::decode(const std::vector<std::size_t>& ids) const {
  std::vector<std::string> words;
  for (std::size_t i : ids) {
    if (i == kEos) break;
    if (i == kPad || i == kBos) continue;
    words.push_back(token(i));
  }
  return words;
}

Vocabulary build_vocabulary(const std::vector<TaggedSentence>& sentences, std::size_t min_count) {
  std::vector<std::vector<std::string>> sequences;
  sequences.reserve(sentences.size());
  for (const auto& s : sentences) sequences.push_back(s.texts());
  return build_vocabulary(sequences, min_count);
}

Vocabulary build_vocabulary(const std::vector<std::vector<std::string>>& sequences, std::size_t min_count) {
  if (sequences.empty()) throw DataError("cannot build a vocabulary from an empty corpus");
  std::map<std::string, std::size_t> counts;
  for (const auto& s : sequences)
    for (const auto& w : s) ++counts[w];
  std::vector<std::pair<std::string, std::size_t>> kept;
  for (const auto& [word, n] : counts)
    if (n >= min_count) kept.emplace_back(word, n);
  std::stable_sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  Vocabulary vocab;
  std::vector<std::string> table = vocab.tokens();
  for (const auto& [word, n] : kept)
    if (!vocab.contains(word)) table.push_back(word);
  return Vocabulary(table);
}

// ---- synthetic corpus ----

void SyntheticSpec::validate() const {
  auto fail = [](const std::string& msg) { throw UsageError("invalid synthetic spec: " + msg); };
  if (sign_vocab_size < 1) fail("sign_vocab_size must be >= 1");
  if (prototype_dim < 1) fail("prototype_dim must be >= 1");
  if (duration_min < 5) fail("duration_min must be >= 5");
  if (duration_max < duration_min) fail("duration_max must be >= duration_min");
  if (sentence_min < 1 || sentence_max < sentence_min) fail("sentence length range is empty");
  if (sentence_max > sign_vocab_size) fail("sentence_max exceeds sign_vocab_size (signs are drawn without repetition)");
  if (!(noise_sigma >= 0) || !std::isfinite(noise_sigma)) fail("noise_sigma must be finite and >= 0");
  if (!(filler_prob >= 0 && filler_prob <= 1)) fail("filler_prob must lie in [0,1]");
  if (!(swap_prob >= 0 && swap_prob <= 1)) fail("swap_prob must lie in [0,1]");
  if (!(fps > 0)) fail("fps must be positive");
}

namespace {

// Pronounceable, unique name for sign `index` built from consonant-vowel syllables.
std::string sign_name(std::size_t index) {
  static constexpr std::string_view consonants = "bdfgklmnprstvz";
  static constexpr std::string_view vowels = "aeiou";
  const std::size_t base = consonants.size() * vowels.size();
  std::string name;
  std::size_t n = index;
  do {
    const std::size_t syl = n % base;
    name += consonants[syl / vowels.size()];
    name += vowels[syl % vowels.size()];
    n /= base;
  } while (n > 0);
  if (name.size() < 4) name += "ho";  // h is not a syllable consonant, so padded names stay unique
  return name;
}

const std::array<Word, 6>& filler_words() {
  static const std::array<Word, 6> words = {Word{"the", Pos::DET}, Word{"a", Pos::DET},  Word{"this", Pos::DET},
                                            Word{"to", Pos::PART}, Word{"not", Pos::PART}, Word{"up", Pos::PART}};
  return words;
}

constexpr std::array<Pos, 7> kContentTags = {Pos::NOUN, Pos::VERB, Pos::ADJ,  Pos::NUM,
                                             Pos::ADV,  Pos::PRON, Pos::PROPN};

struct PairRule {
  int filler = -1;  // index into filler_words(), -1 for none
  bool swap = false;
};

}  // namespace

SyntheticCorpus generate_synthetic(const SyntheticSpec& spec, std::size_t num_videos) {
  spec.validate();
  const std::size_t G = spec.sign_vocab_size;
  const std::size_t C = spec.prototype_dim;

  // The lexicon (prototypes, names, grammar) depends only on the seed, so corpora
  // generated with the same seed but different sizes share it.
  std::mt19937_64 lex_rng(spec.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);

  std::vector<std::vector<double>> prototypes(G, std::vector<double>(C));
  for (auto& p : prototypes) {
    double norm = 0;
    do {
      norm = 0;
      for (auto& v : p) {
        v = normal(lex_rng);
        norm += v * v;
      }
      norm = std::sqrt(norm);
    } while (norm < 1e-8);
    for (auto& v : p) v /= norm;
  }

  SyntheticCorpus out;
  constexpr std::size_t K = kContentTags.size();  // content classes
  std::vector<Pos> sign_pos(G);
  for (std::size_t g = 0; g < G; ++g) {
    out.sign_names.push_back(sign_name(g));
    sign_pos[g] = kContentTags[g % K];
  }

  // Grammar rules are keyed by the ordered pair of content classes, so every
  // rule recurs across many sign pairs and can be learned from examples.
  auto sign_class = [](std::size_t g) { return g % K; };
  std::vector<PairRule> rules(K * K);
  std::uniform_int_distribution<int> pick_filler(0, static_cast<int>(filler_words().size()) - 1);
  for (auto& r : rules) {
    const double uf = unif(lex_rng);
    const int which = pick_filler(lex_rng);
    const double us = unif(lex_rng);
    r.filler = uf < spec.filler_prob ? which : -1;
    r.swap = us < spec.swap_prob;
  }

  std::mt19937_64 rng(spec.seed ^ 0x9e3779b97f4a7c15ULL);
  std::normal_distribution<double> noise_dist(0.0, 1.0);
  std::uniform_int_distribution<std::size_t> pick_len(spec.sentence_min, spec.sentence_max);
  std::uniform_int_distribution<std::size_t> pick_dur(spec.duration_min, spec.duration_max);

  std::vector<std::size_t> pool(G);
  for (std::size_t v = 0; v < num_videos; ++v) {
    const std::string vid = "synth_" + std::to_string(v);
    const std::size_t n = pick_len(rng);

    // Partial Fisher-Yates draw of n distinct signs.
    for (std::size_t g = 0; g < G; ++g) pool[g] = g;
    std::vector<std::size_t> signs(n);
    for (std::size_t i = 0; i < n; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, G - 1);
      std::swap(pool[i], pool[pick(rng)]);
      signs[i] = pool[i];
    }

    std::vector<std::size_t> durations(n);
    std::size_t T = 0;
    for (auto& d : durations) {
      d = pick_dur(rng);
      T += d;
    }

    FrameSequence video;
    video.video_id = vid;
    video.fps = spec.fps;
    video.frames.rows = T;
    video.frames.cols = C;
    video.frames.data.resize(T * C);
    GroundTruth truth;
    truth.video_id = vid;
    std::size_t t0 = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t d = durations[i];
      const auto& mu = prototypes[signs[i]];
      for (std::size_t t = 0; t < d; ++t) {
        const double w = 0.5 * (1.0 - std::cos(2.0 * std::numbers::pi * static_cast<double>(t) / static_cast<double>(d)));
        for (std::size_t c = 0; c < C; ++c) {
          const double noise = spec.noise_sigma > 0 ? spec.noise_sigma * noise_dist(rng) : 0.0;
          video.frames.at(t0 + t, c) = static_cast<float>(w * mu[c] + noise);
        }
      }
      truth.spans.push_back({t0, t0 + d});
      truth.sign_ids.push_back(signs[i]);
      t0 += d;
    }

    // Spoken order: adjacent pairs flagged by the grammar are swapped (non-overlapping, left to right).
    std::vector<std::size_t> spoken = signs;
    for (std::size_t i = 0; i + 1 < spoken.size(); ++i) {
      if (rules[sign_class(spoken[i]) * K + sign_class(spoken[i + 1])].swap) {
        std::swap(spoken[i], spoken[i + 1]);
        ++i;
      }
    }
    TaggedSentence sentence;
    sentence.video_id = vid;
    for (std::size_t i = 0; i < spoken.size(); ++i) {
      sentence.words.push_back({out.sign_names[spoken[i]], sign_pos[spoken[i]]});
      if (i + 1 < spoken.size()) {
        const int f = rules[sign_class(spoken[i]) * K + sign_class(spoken[i + 1])].filler;
        if (f >= 0) sentence.words.push_back(filler_words()[static_cast<std::size_t>(f)]);
      }
    }

    out.videos.push_back(std::move(video));
    out.sentences.push_back(std::move(sentence));
    out.truth.push_back(std::move(truth));
  }
  return out;
}

}  // namespace signtok::corpus
