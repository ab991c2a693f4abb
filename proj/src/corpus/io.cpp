#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "signtok/corpus.hpp"
#include "signtok/error.hpp"

namespace signtok::corpus {

static_assert(std::endian::native == std::endian::little, "frame file I/O assumes a little-endian host");

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

constexpr char kFrameMagic[4] = {'S', 'G', 'F', '1'};
constexpr std::uint32_t kFrameVersion = 1;

std::string read_bytes(const fs::path& path, const std::string& what) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError(what + ": cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::ofstream open_for_write(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  return out;
}

template <class F>
void for_each_record(const fs::path& path, F&& fn) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json rec;
    try {
      rec = json::parse(line);
      fn(rec);
    } catch (const json::exception& e) {
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
}

}  // namespace

void write_frame_file(const fs::path& path, const FrameSequence& video) {
  auto out = open_for_write(path);
  const auto T = static_cast<std::uint32_t>(video.frames.rows);
  const auto C = static_cast<std::uint32_t>(video.frames.cols);
  out.write(kFrameMagic, 4);
  out.write(reinterpret_cast<const char*>(&kFrameVersion), 4);
  out.write(reinterpret_cast<const char*>(&T), 4);
  out.write(reinterpret_cast<const char*>(&C), 4);
  out.write(reinterpret_cast<const char*>(video.frames.data.data()),
            static_cast<std::streamsize>(video.frames.data.size() * sizeof(float)));
}

FrameSequence read_frame_file(const fs::path& path, const std::string& video_id) {
  const std::string tag = "video '" + video_id + "'";
  const std::string bytes = read_bytes(path, tag);
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kFrameMagic, 4) != 0) {
    throw DataError(tag + ": " + path.string() + " is not a frame feature file");
  }
  std::uint32_t header[3];
  std::memcpy(header, bytes.data() + 4, sizeof(header));
  if (header[0] != kFrameVersion) throw DataError(tag + ": unsupported frame file version " + std::to_string(header[0]));
  const std::size_t T = header[1];
  const std::size_t C = header[2];
  if (T < 1 || C < 1) throw DataError(tag + ": header declares an empty frame matrix");
  const std::size_t payload = bytes.size() - 16;
  if (payload != T * C * sizeof(float)) {
    throw DataError(tag + ": header declares T=" + std::to_string(T) + ", c_in=" + std::to_string(C) + " (" +
                    std::to_string(T * C) + " floats) but payload holds " + std::to_string(payload / sizeof(float)) +
                    (payload % sizeof(float) ? " floats plus a partial value" : " floats"));
  }
  FrameSequence video;
  video.video_id = video_id;
  video.frames.rows = T;
  video.frames.cols = C;
  video.frames.data.resize(T * C);
  std::memcpy(video.frames.data.data(), bytes.data() + 16, payload);
  for (std::size_t i = 0; i < video.frames.data.size(); ++i) {
    if (!std::isfinite(video.frames.data[i])) {
      throw DataError(tag + ": non-finite value at frame " + std::to_string(i / C) + ", channel " +
                      std::to_string(i % C));
    }
  }
  return video;
}

std::vector<ManifestEntry> read_manifest(const fs::path& manifest_path) {
  std::vector<ManifestEntry> entries;
  for_each_record(manifest_path, [&](const json& rec) {
    entries.push_back({rec.at("video_id").get<std::string>(), rec.at("path").get<std::string>()});
  });
  return entries;
}

std::vector<FrameSequence> load_frame_sequences(const fs::path& manifest_path) {
  const fs::path base = manifest_path.parent_path();
  std::vector<FrameSequence> videos;
  for (const auto& e : read_manifest(manifest_path)) {
    const fs::path p = fs::path(e.path).is_absolute() ? fs::path(e.path) : base / e.path;
    videos.push_back(read_frame_file(p, e.video_id));
  }
  return videos;
}

void write_transcripts(const fs::path& path, const std::vector<TaggedSentence>& sentences) {
  auto out = open_for_write(path);
  for (const auto& s : sentences) {
    json words = json::array();
    for (const auto& w : s.words) words.push_back({{"text", w.text}, {"pos", std::string(pos_name(w.pos))}});
    out << json{{"video_id", s.video_id}, {"words", words}}.dump() << '\n';
  }
}

std::vector<TaggedSentence> read_transcripts(const fs::path& path) {
  std::vector<TaggedSentence> sentences;
  for_each_record(path, [&](const json& rec) {
    TaggedSentence s;
    s.video_id = rec.at("video_id").get<std::string>();
    for (const auto& w : rec.at("words")) {
      s.words.push_back({w.at("text").get<std::string>(), pos_from_name(w.at("pos").get<std::string>())});
    }
    if (s.words.empty()) throw DataError("transcript for '" + s.video_id + "' has no words");
    sentences.push_back(std::move(s));
  });
  return sentences;
}

void write_ground_truth(const fs::path& path, const std::vector<GroundTruth>& truth) {
  auto out = open_for_write(path);
  for (const auto& g : truth) {
    json spans = json::array();
    for (const auto& s : g.spans) spans.push_back({s.start, s.end});
    out << json{{"video_id", g.video_id}, {"spans", spans}, {"sign_ids", g.sign_ids}}.dump() << '\n';
  }
}

std::vector<GroundTruth> read_ground_truth(const fs::path& path) {
  std::vector<GroundTruth> truth;
  for_each_record(path, [&](const json& rec) {
    GroundTruth g;
    g.video_id = rec.at("video_id").get<std::string>();
    for (const auto& s : rec.at("spans")) {
      g.spans.push_back({s.at(0).get<std::size_t>(), s.at(1).get<std::size_t>()});
    }
    g.sign_ids = rec.value("sign_ids", std::vector<std::size_t>{});
    truth.push_back(std::move(g));
  });
  return truth;
}

void write_split(const fs::path& dir, const std::vector<FrameSequence>& videos,
                 const std::vector<TaggedSentence>& sentences, const std::vector<GroundTruth>& truth) {
  fs::create_directories(dir / "features");
  auto manifest = open_for_write(dir / "manifest.jsonl");
  for (const auto& v : videos) {
    const std::string rel = "features/" + v.video_id + ".sgf";
    write_frame_file(dir / rel, v);
    manifest << json{{"video_id", v.video_id}, {"path", rel}}.dump() << '\n';
  }
  write_transcripts(dir / "transcripts.jsonl", sentences);
  if (!truth.empty()) write_ground_truth(dir / "ground_truth.jsonl", truth);
}

namespace {

template <class T>
std::vector<T> align_to(const std::vector<FrameSequence>& videos, std::vector<T> records, const std::string& what) {
  std::map<std::string, T> by_id;
  for (auto& r : records) {
    const std::string id = r.video_id;
    if (!by_id.emplace(id, std::move(r)).second) throw DataError("duplicate " + what + " record for '" + id + "'");
  }
  std::vector<T> out;
  out.reserve(videos.size());
  for (const auto& v : videos) {
    auto it = by_id.find(v.video_id);
    if (it == by_id.end()) throw DataError("no " + what + " record for video '" + v.video_id + "'");
    out.push_back(std::move(it->second));
  }
  return out;
}

}  // namespace

CorpusSplit read_split(const fs::path& dir) {
  CorpusSplit split;
  split.videos = load_frame_sequences(dir / "manifest.jsonl");
  split.sentences = align_to(split.videos, read_transcripts(dir / "transcripts.jsonl"), "transcript");
  if (fs::exists(dir / "ground_truth.jsonl")) {
    split.truth = align_to(split.videos, read_ground_truth(dir / "ground_truth.jsonl"), "ground-truth");
    for (std::size_t i = 0; i < split.videos.size(); ++i) {
      const auto& g = split.truth[i];
      std::size_t cursor = 0;
      for (const auto& s : g.spans) {
        if (s.start != cursor || s.end <= s.start) {
          throw DataError("ground truth for '" + g.video_id + "' does not partition the video");
        }
        cursor = s.end;
      }
      if (cursor != split.videos[i].length() || g.sign_ids.size() != g.spans.size()) {
        throw DataError("ground truth for '" + g.video_id + "' does not partition the video");
      }
    }
  }
  return split;
}

}  // namespace signtok::corpus
