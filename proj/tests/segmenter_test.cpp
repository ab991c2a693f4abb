#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <filesystem>

#include "signtok/error.hpp"
#include "signtok/segmenter.hpp"

using namespace signtok;
using namespace signtok::segment;
using corpus::FrameSequence;
using corpus::Matrix;

namespace {

Matrix column(std::vector<float> values) {
  Matrix m;
  m.rows = values.size();
  m.cols = 1;
  m.data = std::move(values);
  return m;
}

FrameSequence video_from_energy(const std::vector<float>& energy) {
  FrameSequence v;
  v.video_id = "e";
  v.frames = column(energy);
  return v;
}

std::vector<Span> spans_of(std::initializer_list<std::pair<std::size_t, std::size_t>> list) {
  std::vector<Span> out;
  for (auto [a, b] : list) out.push_back({a, b});
  return out;
}

SegmentSet set_with_boundaries(std::size_t T, std::vector<std::size_t> cuts) {
  SegmentSet s{"v", {}, Source::motion_energy, T};
  std::size_t start = 0;
  for (auto c : cuts) {
    s.spans.push_back({start, c});
    start = c;
  }
  s.spans.push_back({start, T});
  return s;
}

std::vector<SegmentSet> segment_corpus(const corpus::SyntheticCorpus& c, const EnergyOptions& opts = {}) {
  std::vector<SegmentSet> out;
  for (const auto& v : c.videos) out.push_back(segment_motion_energy(v, opts));
  return out;
}

std::vector<SegmentSet> oracle_corpus(const corpus::SyntheticCorpus& c) {
  std::vector<SegmentSet> out;
  for (const auto& g : c.truth) out.push_back(segment_oracle(g));
  return out;
}

}  // namespace

TEST_CASE("constant frames yield a single span") {
  FrameSequence v = video_from_energy(std::vector<float>(30, 0.7f));
  auto s = segment_motion_energy(v);
  CHECK(s.spans == spans_of({{0, 30}}));
  CHECK(segment_motion_energy(v, {.energy = Energy::difference}).spans == spans_of({{0, 30}}));
}

TEST_CASE("noiseless fixed-duration renderings are segmented exactly") {
  corpus::SyntheticSpec spec;
  spec.noise_sigma = 0;
  spec.duration_min = spec.duration_max = 8;
  auto c = corpus::generate_synthetic(spec, 40);
  for (std::size_t i = 0; i < c.videos.size(); ++i) {
    auto s = segment_motion_energy(c.videos[i]);
    CHECK(s.spans == c.truth[i].spans);
    CHECK(s.partitions());
  }
}

TEST_CASE("short detected spans are merged across their weaker boundary") {
  // Minima at 3 (deep) and 6 (shallow): spans [0,3) [3,6) [6,12).
  std::vector<float> e = {5, 4, 3, 0.1f, 3, 4, 2, 4, 5, 6, 5, 4};
  auto v = video_from_energy(e);
  auto raw = segment_motion_energy(v, {.smooth_window = 1, .min_len = 1});
  CHECK(raw.interior_boundaries() == std::vector<std::size_t>{3, 6});
  auto merged = segment_motion_energy(v, {.smooth_window = 1, .min_len = 5});
  for (const auto& sp : merged.spans) CHECK((sp.length() >= 5 || merged.size() == 1));
  CHECK(merged.partitions());
  // The leftmost shortest span [0,3) can only merge rightwards.
  CHECK(merged.spans == spans_of({{0, 6}, {6, 12}}));

  std::vector<float> e2 = {5, 4, 3, 2, 1, 0.1f, 3, 4, 2, 4, 5, 6, 5, 4};
  auto merged2 = segment_motion_energy(video_from_energy(e2), {.smooth_window = 1, .min_len = 5});
  CHECK(merged2.spans == spans_of({{0, 5}, {5, 14}}));  // [5,8) drops its shallow right boundary

  std::vector<float> e3 = {5, 4, 3, 2, 1, 0.5f, 3, 4, 0.1f, 4, 5, 6, 5, 4};
  auto merged3 = segment_motion_energy(video_from_energy(e3), {.smooth_window = 1, .min_len = 5});
  CHECK(merged3.spans == spans_of({{0, 8}, {8, 14}}));  // [5,8) drops its shallow left boundary
}

TEST_CASE("video shorter than min_len is kept whole") {
  auto s = segment_motion_energy(video_from_energy({3, 1, 3}), {.smooth_window = 1, .min_len = 5});
  CHECK(s.spans == spans_of({{0, 3}}));
}

TEST_CASE("difference energy duplicates the first step") {
  auto e = frame_energy(video_from_energy({0, 1, 3, 6}), Energy::difference);
  CHECK(e == std::vector<double>{1, 1, 2, 3});
  auto a = frame_energy(video_from_energy({0, -1, 3}), Energy::activity);
  CHECK(a == std::vector<double>{0, 1, 3});
  CHECK(smooth_energy({3, 0, 3, 6}, 3) == std::vector<double>{1.5, 2, 3, 4.5});
  CHECK_THROWS_AS(smooth_energy({1, 2}, 2), UsageError);
}

TEST_CASE("uniform segmentation") {
  CHECK(segment_uniform("v", 16, 4).spans == spans_of({{0, 4}, {4, 8}, {8, 12}, {12, 16}}));
  CHECK(segment_uniform("v", 10, 4).spans == spans_of({{0, 4}, {4, 8}, {8, 10}}));
  auto id = segment_uniform("v", 7, 1);
  CHECK(id.size() == 7);
  CHECK(id.partitions());
  CHECK_THROWS_AS(segment_uniform("v", 7, 0), UsageError);
}

TEST_CASE("baseline reductions") {
  auto rows = column({1, 3, 2, 0});
  CHECK(reduce_baseline(rows, Reduction::maxpool, 2).data == std::vector<float>{3, 2});
  CHECK(reduce_baseline(rows, Reduction::stride, 2).data == std::vector<float>{1, 2});
  CHECK(reduce_baseline(rows, Reduction::window, 2, 2).data == std::vector<float>{2, 1});
  for (auto r : {Reduction::maxpool, Reduction::stride, Reduction::window})
    CHECK(reduce_baseline(rows, r, 1, 1).data == rows.data);
  // Group-aligned maxpool dominates striding elementwise.
  Matrix m;
  m.rows = 8;
  m.cols = 3;
  for (int i = 0; i < 24; ++i) m.data.push_back(static_cast<float>(std::sin(1.7 * i)));
  auto mp = reduce_baseline(m, Reduction::maxpool, 4);
  auto sd = reduce_baseline(m, Reduction::stride, 4);
  for (std::size_t i = 0; i < mp.data.size(); ++i) CHECK(mp.data[i] >= sd.data[i]);
  CHECK(reduce_baseline(column({1, 2, 3, 4, 5}), Reduction::maxpool, 2).data == std::vector<float>{2, 4, 5});
}

TEST_CASE("reduction ratios") {
  SegmentSet one{"v", {}, Source::oracle, 62};
  for (std::size_t i = 0; i < 8; ++i) one.spans.push_back({i, i + 1});
  CHECK(reduction_report({one}).ratio == doctest::Approx(0.1290).epsilon(1e-3));

  std::vector<SegmentSet> uni = {segment_uniform("a", 16, 4), segment_uniform("b", 40, 4)};
  CHECK(reduction_report(uni).ratio == 0.25);
  std::vector<SegmentSet> ident = {segment_uniform("a", 9, 1), segment_uniform("b", 3, 1)};
  CHECK(reduction_report(ident).ratio == 1.0);
  CHECK_THROWS(reduction_report({}));
}

TEST_CASE("boundary F1") {
  auto truth = set_with_boundaries(24, {8, 16});
  auto s = boundary_f1(truth, truth, 2);
  CHECK(s.f1 == 1.0);
  auto none = boundary_f1(set_with_boundaries(24, {}), truth, 2);
  CHECK(none.precision == 0.0);
  CHECK(none.recall == 0.0);
  CHECK(none.f1 == 0.0);
  auto near = boundary_f1(set_with_boundaries(24, {9, 17}), truth, 2);
  CHECK(near.precision == 1.0);
  CHECK(near.recall == 1.0);
  CHECK(near.f1 == 1.0);
  // One-to-one matching: two predictions near one truth boundary count once.
  auto dup = boundary_f1(set_with_boundaries(24, {7, 9}), set_with_boundaries(24, {8}), 2);
  CHECK(dup.matched == 1);
  CHECK(dup.precision == 0.5);
  CHECK(dup.recall == 1.0);
  CHECK(boundary_f1(set_with_boundaries(24, {12}), truth, 2).matched == 0);
}

TEST_CASE("energy segmentation recovers noisy synthetic boundaries") {
  corpus::SyntheticSpec spec;
  spec.seed = 21;
  auto c = corpus::generate_synthetic(spec, 120);
  auto pred = segment_corpus(c);
  for (const auto& s : pred) CHECK(s.partitions());
  CHECK(boundary_f1(pred, oracle_corpus(c), 2).f1 >= 0.8);

  spec.noise_sigma = 0;
  auto clean = corpus::generate_synthetic(spec, 120);
  CHECK(boundary_f1(segment_corpus(clean), oracle_corpus(clean), 2).f1 == 1.0);
  // Without smoothing every rest frame is a strict minimum, so recovery is exact.
  CHECK(boundary_f1(segment_corpus(clean, {.smooth_window = 1}), oracle_corpus(clean), 0).f1 == 1.0);
}

TEST_CASE("segment files round-trip") {
  auto path = std::filesystem::temp_directory_path() / "signtok_segmenter_test" / "segments.jsonl";
  std::vector<SegmentSet> sets = {segment_uniform("a", 10, 4), set_with_boundaries(24, {8, 16})};
  write_segment_file(path, sets);
  auto back = read_segment_file(path);
  REQUIRE(back.size() == 2);
  CHECK(back[0].spans == sets[0].spans);
  CHECK(back[0].source == Source::uniform);
  CHECK(back[1].frames == 24);
  CHECK(back[1].source == Source::motion_energy);
}
