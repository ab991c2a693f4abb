#include "signtok/segmenter.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <numeric>

#include <json.hpp>

#include "signtok/error.hpp"

namespace signtok::segment {

using corpus::FrameSequence;
using corpus::Matrix;
using json = nlohmann::json;

namespace {

constexpr std::array<std::string_view, 6> kSourceNames = {"oracle", "motion_energy", "uniform",
                                                          "stride", "maxpool_groups", "window"};

template <class E, std::size_t N>
E enum_from(const std::array<std::string_view, N>& names, std::string_view name, const char* what) {
  for (std::size_t i = 0; i < N; ++i)
    if (names[i] == name) return static_cast<E>(i);
  throw UsageError(std::string("unknown ") + what + " '" + std::string(name) + "'");
}

constexpr std::array<std::string_view, 2> kEnergyNames = {"activity", "difference"};
constexpr std::array<std::string_view, 3> kReductionNames = {"maxpool", "stride", "window"};

}  // namespace

std::string_view source_name(Source s) { return kSourceNames[static_cast<std::size_t>(s)]; }
Source source_from_name(std::string_view name) { return enum_from<Source>(kSourceNames, name, "segment source"); }
std::string_view energy_name(Energy e) { return kEnergyNames[static_cast<std::size_t>(e)]; }
Energy energy_from_name(std::string_view name) { return enum_from<Energy>(kEnergyNames, name, "energy"); }
std::string_view reduction_name(Reduction r) { return kReductionNames[static_cast<std::size_t>(r)]; }
Reduction reduction_from_name(std::string_view name) {
  return enum_from<Reduction>(kReductionNames, name, "reduction strategy");
}

std::vector<std::size_t> SegmentSet::lengths() const {
  std::vector<std::size_t> out;
  out.reserve(spans.size());
  for (const auto& s : spans) out.push_back(s.length());
  return out;
}

std::vector<std::size_t> SegmentSet::interior_boundaries() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 1; i < spans.size(); ++i) out.push_back(spans[i].start);
  return out;
}

bool SegmentSet::partitions() const {
  std::size_t cursor = 0;
  for (const auto& s : spans) {
    if (s.start != cursor || s.end <= s.start) return false;
    cursor = s.end;
  }
  return cursor == frames && !spans.empty();
}

// ---- motion energy ----

std::vector<double> frame_energy(const FrameSequence& video, Energy kind) {
  const std::size_t T = video.length();
  const std::size_t C = video.dim();
  std::vector<double> e(T, 0.0);
  for (std::size_t t = 0; t < T; ++t) {
    double acc = 0;
    for (std::size_t c = 0; c < C; ++c) {
      double v = video.frames.at(t, c);
      if (kind == Energy::difference) v -= t > 0 ? video.frames.at(t - 1, c) : 0.0;
      acc += v * v;
    }
    e[t] = std::sqrt(acc);
  }
  if (kind == Energy::difference) {
    if (T > 1) e[0] = e[1];
    else e[0] = 0;
  }
  return e;
}

std::vector<double> smooth_energy(const std::vector<double>& energy, std::size_t window) {
  if (window == 0 || window % 2 == 0) throw UsageError("smoothing window must be a positive odd integer");
  const std::size_t half = window / 2;
  const std::size_t T = energy.size();
  std::vector<double> out(T);
  for (std::size_t t = 0; t < T; ++t) {
    const std::size_t lo = t >= half ? t - half : 0;
    const std::size_t hi = std::min(T, t + half + 1);
    double acc = 0;
    for (std::size_t i = lo; i < hi; ++i) acc += energy[i];
    out[t] = acc / static_cast<double>(hi - lo);
  }
  return out;
}

SegmentSet segment_motion_energy(const FrameSequence& video, const EnergyOptions& opts) {
  const std::size_t T = video.length();
  SegmentSet set{video.video_id, {}, Source::motion_energy, T};
  if (T == 0) throw DataError("video '" + video.video_id + "' has no frames");
  const auto s = smooth_energy(frame_energy(video, opts.energy), opts.smooth_window);

  std::vector<std::size_t> cuts;  // interior boundary frames, ascending
  for (std::size_t t = 1; t + 1 < T; ++t)
    if (s[t] < s[t - 1] && s[t] < s[t + 1]) cuts.push_back(t);

  auto span_len = [&](std::size_t i) {
    const std::size_t start = i == 0 ? 0 : cuts[i - 1];
    const std::size_t end = i == cuts.size() ? T : cuts[i];
    return end - start;
  };
  while (!cuts.empty()) {
    std::size_t shortest = 0;
    for (std::size_t i = 1; i <= cuts.size(); ++i)
      if (span_len(i) < span_len(shortest)) shortest = i;
    if (span_len(shortest) >= opts.min_len) break;
    // Span i is bounded by cuts[i-1] (left) and cuts[i] (right).
    std::size_t drop;
    if (shortest == 0) drop = 0;
    else if (shortest == cuts.size()) drop = cuts.size() - 1;
    else drop = s[cuts[shortest - 1]] > s[cuts[shortest]] ? shortest - 1 : shortest;
    cuts.erase(cuts.begin() + static_cast<std::ptrdiff_t>(drop));
  }

  std::size_t start = 0;
  for (std::size_t c : cuts) {
    set.spans.push_back({start, c});
    start = c;
  }
  set.spans.push_back({start, T});
  return set;
}

SegmentSet segment_uniform(const std::string& video_id, std::size_t frames, std::size_t factor) {
  if (factor < 1) throw UsageError("uniform segmentation factor must be >= 1");
  SegmentSet set{video_id, {}, Source::uniform, frames};
  for (std::size_t t = 0; t < frames; t += factor) set.spans.push_back({t, std::min(frames, t + factor)});
  return set;
}

SegmentSet segment_uniform(const FrameSequence& video, std::size_t factor) {
  return segment_uniform(video.video_id, video.length(), factor);
}

SegmentSet segment_oracle(const corpus::GroundTruth& truth) {
  SegmentSet set{truth.video_id, truth.spans, Source::oracle, truth.spans.empty() ? 0 : truth.spans.back().end};
  if (!set.partitions()) throw DataError("ground truth for '" + truth.video_id + "' does not partition the video");
  return set;
}

// ---- baseline reductions ----

std::size_t reduced_length(std::size_t frames, Reduction strategy, std::size_t factor) {
  (void)strategy;  // all strategies emit one row per `factor` input rows (ceil)
  if (factor < 1) throw UsageError("reduction factor must be >= 1");
  return (frames + factor - 1) / factor;
}

Matrix reduce_baseline(const Matrix& features, Reduction strategy, std::size_t factor, std::size_t window) {
  if (factor < 1 || window < 1) throw UsageError("reduction factor and window must be >= 1");
  const std::size_t T = features.rows;
  const std::size_t C = features.cols;
  Matrix out;
  out.cols = C;
  out.rows = reduced_length(T, strategy, factor);
  out.data.assign(out.rows * C, 0.0f);
  for (std::size_t r = 0; r < out.rows; ++r) {
    const std::size_t start = r * factor;
    switch (strategy) {
      case Reduction::stride:
        for (std::size_t c = 0; c < C; ++c) out.at(r, c) = features.at(start, c);
        break;
      case Reduction::maxpool: {
        const std::size_t end = std::min(T, start + factor);
        for (std::size_t c = 0; c < C; ++c) {
          float m = features.at(start, c);
          for (std::size_t t = start + 1; t < end; ++t) m = std::max(m, features.at(t, c));
          out.at(r, c) = m;
        }
        break;
      }
      case Reduction::window: {
        const std::size_t end = std::min(T, start + window);
        for (std::size_t c = 0; c < C; ++c) {
          double acc = 0;
          for (std::size_t t = start; t < end; ++t) acc += features.at(t, c);
          out.at(r, c) = static_cast<float>(acc / static_cast<double>(end - start));
        }
        break;
      }
    }
  }
  return out;
}

ReductionReport reduction_report(const std::vector<SegmentSet>& sets) {
  if (sets.empty()) throw UsageError("reduction report needs at least one segment set");
  ReductionReport r;
  for (const auto& s : sets) {
    r.total_frames += s.frames;
    r.total_tokens += s.size();
  }
  if (r.total_frames == 0) throw DataError("reduction report over zero frames");
  r.ratio = static_cast<double>(r.total_tokens) / static_cast<double>(r.total_frames);
  return r;
}

// ---- boundary evaluation ----

namespace {

std::size_t match_boundaries(const std::vector<std::size_t>& pred, const std::vector<std::size_t>& truth,
                             std::size_t tol) {
  struct Pair {
    std::size_t dist, p, t;
  };
  std::vector<Pair> pairs;
  for (std::size_t i = 0; i < pred.size(); ++i)
    for (std::size_t j = 0; j < truth.size(); ++j) {
      const std::size_t d = pred[i] > truth[j] ? pred[i] - truth[j] : truth[j] - pred[i];
      if (d <= tol) pairs.push_back({d, i, j});
    }
  std::stable_sort(pairs.begin(), pairs.end(), [](const Pair& a, const Pair& b) { return a.dist < b.dist; });
  std::vector<bool> used_p(pred.size()), used_t(truth.size());
  std::size_t matched = 0;
  for (const auto& pr : pairs) {
    if (used_p[pr.p] || used_t[pr.t]) continue;
    used_p[pr.p] = used_t[pr.t] = true;
    ++matched;
  }
  return matched;
}

BoundaryScore finish(std::size_t matched, std::size_t predicted, std::size_t actual) {
  BoundaryScore s{0, 0, 0, matched, predicted, actual};
  if (predicted == 0 && actual == 0) {
    s.precision = s.recall = s.f1 = 1.0;  // both agree there is nothing to cut
    return s;
  }
  s.precision = predicted ? static_cast<double>(matched) / static_cast<double>(predicted) : 0.0;
  s.recall = actual ? static_cast<double>(matched) / static_cast<double>(actual) : 0.0;
  s.f1 = s.precision + s.recall > 0 ? 2 * s.precision * s.recall / (s.precision + s.recall) : 0.0;
  return s;
}

}  // namespace

BoundaryScore boundary_f1(const SegmentSet& pred, const SegmentSet& truth, std::size_t tol) {
  const auto p = pred.interior_boundaries();
  const auto t = truth.interior_boundaries();
  return finish(match_boundaries(p, t, tol), p.size(), t.size());
}

BoundaryScore boundary_f1(const std::vector<SegmentSet>& pred, const std::vector<SegmentSet>& truth,
                          std::size_t tol) {
  if (pred.size() != truth.size()) throw UsageError("boundary_f1: prediction and truth counts differ");
  std::size_t matched = 0, predicted = 0, actual = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (pred[i].video_id != truth[i].video_id) {
      throw DataError("boundary_f1: video '" + pred[i].video_id + "' paired with '" + truth[i].video_id + "'");
    }
    const auto s = boundary_f1(pred[i], truth[i], tol);
    matched += s.matched;
    predicted += s.predicted;
    actual += s.actual;
  }
  return finish(matched, predicted, actual);
}

// ---- segment files ----

void write_segment_file(const std::filesystem::path& path, const std::vector<SegmentSet>& sets) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  for (const auto& s : sets) {
    json spans = json::array();
    for (const auto& sp : s.spans) spans.push_back({sp.start, sp.end});
    out << json{{"video_id", s.video_id},
                {"spans", spans},
                {"sign_ids", json::array()},
                {"source", std::string(source_name(s.source))},
                {"frames", s.frames}}
               .dump()
        << '\n';
  }
}

std::vector<SegmentSet> read_segment_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  std::vector<SegmentSet> sets;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const json rec = json::parse(line);
      SegmentSet s;
      s.video_id = rec.at("video_id").get<std::string>();
      for (const auto& sp : rec.at("spans")) s.spans.push_back({sp.at(0).get<std::size_t>(), sp.at(1).get<std::size_t>()});
      s.source = source_from_name(rec.value("source", std::string("oracle")));
      s.frames = rec.value("frames", s.spans.empty() ? std::size_t{0} : s.spans.back().end);
      sets.push_back(std::move(s));
    } catch (const json::exception& e) {
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return sets;
}

}  // namespace signtok::segment
