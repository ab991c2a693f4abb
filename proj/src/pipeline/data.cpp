#include "signtok/error.hpp"
#include "signtok/pipeline.hpp"

namespace signtok::pipeline {

using corpus::Vocabulary;

double Dataset::reduction_ratio() const {
  std::size_t tokens = 0, frames = 0;
  for (std::size_t i = 0; i < size(); ++i) {
    tokens += segments[i].size();
    frames += videos[i].length();
  }
  return frames == 0 ? 0.0 : static_cast<double>(tokens) / static_cast<double>(frames);
}

void resegment(Dataset& data, const RunConfig& cfg) {
  data.segments.clear();
  data.segments.reserve(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    switch (cfg.segmenter) {
      case segment::Source::oracle:
        if (!data.has_truth()) throw UsageError("oracle segmentation needs ground-truth boundaries");
        data.segments.push_back(segment::segment_oracle(data.truth[i]));
        break;
      case segment::Source::motion_energy:
        data.segments.push_back(segment::segment_motion_energy(data.videos[i]));
        break;
      case segment::Source::uniform:
        data.segments.push_back(segment::segment_uniform(data.videos[i], cfg.segment_factor));
        break;
      default:
        throw UsageError("segmenter '" + std::string(segment::source_name(cfg.segmenter)) +
                         "' cannot drive training");
    }
  }
}

Dataset prepare_dataset(std::vector<corpus::FrameSequence> videos, std::vector<corpus::TaggedSentence> sentences,
                        std::vector<corpus::GroundTruth> truth, const RunConfig& cfg) {
  if (videos.size() != sentences.size()) throw DataError("dataset: video and sentence counts differ");
  if (!truth.empty() && truth.size() != videos.size()) throw DataError("dataset: ground-truth count differs");
  Dataset d;
  d.videos = std::move(videos);
  d.sentences = std::move(sentences);
  d.truth = std::move(truth);
  for (std::size_t i = 0; i < d.size(); ++i) {
    if (d.sentences[i].video_id != d.videos[i].video_id) {
      throw DataError("dataset: sentence for '" + d.videos[i].video_id + "' is out of order");
    }
    d.glosses.push_back(corpus::extract_pseudo_gloss(d.sentences[i]));
  }
  resegment(d, cfg);
  return d;
}

Dataset prepare_dataset(const corpus::SyntheticCorpus& corpus, const RunConfig& cfg) {
  Dataset d = prepare_dataset(corpus.videos, corpus.sentences, corpus.truth, cfg);
  d.sign_names = corpus.sign_names;
  return d;
}

Dataset slice(const Dataset& data, std::size_t begin, std::size_t end) {
  if (begin > end || end > data.size()) throw UsageError("dataset slice out of range");
  auto cut = [&](const auto& v) {
    using V = std::decay_t<decltype(v)>;
    return v.empty() ? V{} : V(v.begin() + static_cast<std::ptrdiff_t>(begin), v.begin() + static_cast<std::ptrdiff_t>(end));
  };
  Dataset out;
  out.videos = cut(data.videos);
  out.sentences = cut(data.sentences);
  out.truth = cut(data.truth);
  out.segments = cut(data.segments);
  out.glosses = cut(data.glosses);
  out.sign_names = data.sign_names;
  return out;
}

Vocabularies build_vocabularies(const Dataset& train) {
  std::vector<std::vector<std::string>> glosses;
  for (const auto& g : train.glosses)
    if (!g.empty_flag) glosses.push_back(g.glosses);
  if (glosses.empty()) throw DataError("training split has no non-empty pseudo-gloss sequence");
  return {corpus::build_vocabulary(train.sentences), corpus::build_vocabulary(glosses)};
}

json vocabularies_to_json(const Vocabularies& v) { return {{"text", v.text.tokens()}, {"gloss", v.gloss.tokens()}}; }

Vocabularies vocabularies_from_json(const json& j) {
  try {
    return {Vocabulary(j.at("text").get<std::vector<std::string>>()),
            Vocabulary(j.at("gloss").get<std::vector<std::string>>())};
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed vocabulary record: ") + e.what());
  }
}

std::vector<std::size_t> target_ids(const corpus::TaggedSentence& sentence, const Vocabulary& text) {
  std::vector<std::size_t> ids = {Vocabulary::kBos};
  for (auto id : text.encode(sentence.texts())) ids.push_back(id);
  ids.push_back(Vocabulary::kEos);
  return ids;
}

}  // namespace signtok::pipeline
