#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "signtok/corpus.hpp"

namespace signtok::segment {

using corpus::Span;

enum class Source { oracle, motion_energy, uniform, stride, maxpool_groups, window };

std::string_view source_name(Source s);
Source source_from_name(std::string_view name);

// Ordered, non-overlapping spans over a video of `frames` frames. For oracle,
// motion_energy and uniform sources the spans partition [0, frames).
struct SegmentSet {
  std::string video_id;
  std::vector<Span> spans;
  Source source = Source::oracle;
  std::size_t frames = 0;

  std::size_t size() const { return spans.size(); }
  std::vector<std::size_t> lengths() const;
  // Start frames of every span except the first.
  std::vector<std::size_t> interior_boundaries() const;
  bool partitions() const;
};

enum class Energy {
  activity,    // e_t = |f_t|: rest poses between signs are energy minima
  difference,  // e_t = |f_t - f_{t-1}|, e_0 = e_1
};

std::string_view energy_name(Energy e);
Energy energy_from_name(std::string_view name);

struct EnergyOptions {
  std::size_t smooth_window = 3;  // odd width of the centred moving average
  std::size_t min_len = 5;
  Energy energy = Energy::activity;
};

std::vector<double> frame_energy(const corpus::FrameSequence& video, Energy kind);
// Centred moving average; windows are truncated at the sequence ends.
std::vector<double> smooth_energy(const std::vector<double>& energy, std::size_t window);

// Boundaries at strict local minima of the smoothed energy; spans shorter than
// min_len are merged across their weaker (higher-energy) boundary, shortest
// first, until every span reaches min_len or a single span remains.
SegmentSet segment_motion_energy(const corpus::FrameSequence& video, const EnergyOptions& opts = {});

// Contiguous groups of `factor` frames; the last group may be shorter.
SegmentSet segment_uniform(const corpus::FrameSequence& video, std::size_t factor);
SegmentSet segment_uniform(const std::string& video_id, std::size_t frames, std::size_t factor);

SegmentSet segment_oracle(const corpus::GroundTruth& truth);

enum class Reduction { maxpool, stride, window };

std::string_view reduction_name(Reduction r);
Reduction reduction_from_name(std::string_view name);

// maxpool: elementwise max over contiguous groups of `factor` rows (last group may be short);
// stride: rows 0, factor, 2*factor, ...;
// window: mean over windows of `window` rows advanced by `factor` (every start < T; windows truncated at the end).
corpus::Matrix reduce_baseline(const corpus::Matrix& features, Reduction strategy, std::size_t factor,
                               std::size_t window = 1);
// Number of rows reduce_baseline produces for T input rows.
std::size_t reduced_length(std::size_t frames, Reduction strategy, std::size_t factor);

struct ReductionReport {
  std::size_t total_frames = 0;
  std::size_t total_tokens = 0;
  double ratio = 0;
};

ReductionReport reduction_report(const std::vector<SegmentSet>& sets);

struct BoundaryScore {
  double precision = 0;
  double recall = 0;
  double f1 = 0;
  std::size_t matched = 0;
  std::size_t predicted = 0;
  std::size_t actual = 0;
};

// Interior boundaries match one-to-one when within +-tol frames; pairs are taken
// greedily in order of increasing distance (earlier boundaries first on ties).
BoundaryScore boundary_f1(const SegmentSet& pred, const SegmentSet& truth, std::size_t tol);
// Micro-averaged over a corpus: matches and counts are summed before the ratios.
BoundaryScore boundary_f1(const std::vector<SegmentSet>& pred, const std::vector<SegmentSet>& truth,
                          std::size_t tol);

// Line-delimited {video_id, spans:[[start,end]], sign_ids:[...], source, frames} records.
void write_segment_file(const std::filesystem::path& path, const std::vector<SegmentSet>& sets);
std::vector<SegmentSet> read_segment_file(const std::filesystem::path& path);

}  // namespace signtok::segment
