#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "signtok/error.hpp"
#include "signtok/losses.hpp"
#include "signtok/nn/gradcheck.hpp"

using namespace signtok;
using namespace signtok::losses;
using nn::Rng;

namespace {

Tensor mat(std::size_t r, std::size_t c, std::initializer_list<double> v, bool grad = false) {
  return Tensor::from(r, c, v, grad);
}

Tensor random(std::size_t r, std::size_t c, Rng& rng, bool grad = true) {
  Tensor t = nn::normal_init(r, c, 1.0, rng);
  t.set_requires_grad(grad);
  return t;
}

// Direct evaluation of the symmetric diagonal cross-entropy, independent of the fused op.
double reference_info_nce(const std::vector<std::vector<double>>& z, double tau) {
  const std::size_t B = z.size();
  double loss = 0;
  for (std::size_t i = 0; i < B; ++i) {
    double row = 0, col = 0;
    for (std::size_t j = 0; j < B; ++j) {
      row += std::exp(z[i][j] / tau);
      col += std::exp(z[j][i] / tau);
    }
    loss -= std::log(std::exp(z[i][i] / tau) / row) + std::log(std::exp(z[i][i] / tau) / col);
  }
  return loss / (2.0 * static_cast<double>(B));
}

}  // namespace

TEST_CASE("max-mean aggregation hand case") {
  const double h = std::sqrt(0.5);
  auto batch = token_similarity_aggregate(mat(2, 2, {1, 0, 0, 1}), {2}, mat(2, 2, {1, 0, h, h}), {2});
  const double expected = (1 + h) / 2;  // 0.8536
  CHECK(batch.z_v2t.item() == doctest::Approx(expected).epsilon(1e-12));
  CHECK(batch.z_t2v.item() == doctest::Approx(expected).epsilon(1e-12));
  CHECK(expected == doctest::Approx(0.8536).epsilon(1e-4));
}

TEST_CASE("single tokens aggregate to their cosine") {
  auto u = mat(1, 3, {1, 2, 2});
  auto t = mat(1, 3, {2, 0, 1});
  auto batch = token_similarity_aggregate(u, {1}, t, {1});
  const double cos = (2 + 0 + 2) / (3.0 * std::sqrt(5.0));
  CHECK(batch.z_v2t.item() == doctest::Approx(cos).epsilon(1e-12));
  CHECK(batch.z_t2v.item() == doctest::Approx(cos).epsilon(1e-12));
}

TEST_CASE("aggregation ignores token order and visual duplication") {
  Rng rng(1);
  Tensor v = random(5, 4, rng, false);
  Tensor t = random(3, 4, rng, false);
  auto base = token_similarity_aggregate(v, {2, 3}, t, {1, 2});

  std::vector<std::size_t> order = {1, 0, 4, 2, 3};
  std::vector<std::size_t> torder = {0, 2, 1};
  auto perm = token_similarity_aggregate(nn::gather_rows(v, order), {2, 3}, nn::gather_rows(t, torder), {1, 2});
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(perm.z_v2t.values()[i] == doctest::Approx(base.z_v2t.values()[i]).epsilon(1e-14));
    CHECK(perm.z_t2v.values()[i] == doctest::Approx(base.z_t2v.values()[i]).epsilon(1e-14));
  }

  std::vector<std::size_t> dup = {0, 1, 0, 1};
  auto d = token_similarity_aggregate(nn::gather_rows(v, dup), {4}, t, {1, 2});
  auto single = token_similarity_aggregate(nn::slice_rows(v, 0, 2), {2}, t, {1, 2});
  for (std::size_t j = 0; j < 2; ++j) CHECK(d.z_v2t.values()[j] == doctest::Approx(single.z_v2t.values()[j]));
  for (double s : base.token_sim.values()) CHECK(std::abs(s) <= 1.0 + 1e-12);
}

TEST_CASE("info_nce closed forms") {
  CHECK(std::abs(info_nce(mat(1, 1, {0.37}), 0.5).item()) < 1e-12);
  CHECK(info_nce(mat(2, 2, {0.3, 0.3, 0.3, 0.3}), 1.0).item() == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  const double diag = reference_info_nce({{2, 0}, {0, 2}}, 1.0);
  CHECK(diag == doctest::Approx(std::log1p(std::exp(-2.0))).epsilon(1e-12));
  CHECK(diag == doctest::Approx(0.1269).epsilon(1e-3));
  CHECK(info_nce(mat(2, 2, {2, 0, 0, 2}), 1.0).item() == doctest::Approx(diag).epsilon(1e-12));

  std::vector<std::vector<double>> z = {{0.9, 0.1, -0.3}, {0.2, 0.5, 0.4}, {-0.1, 0.3, 0.8}};
  CHECK(info_nce(mat(3, 3, {0.9, 0.1, -0.3, 0.2, 0.5, 0.4, -0.1, 0.3, 0.8}), 0.07).item() ==
        doctest::Approx(reference_info_nce(z, 0.07)).epsilon(1e-12));
  CHECK_THROWS_AS(info_nce(mat(1, 1, {std::nan("")}), 1.0), NumericError);
}

TEST_CASE("info_nce is permutation invariant and decreasing in the diagonal margin") {
  auto z = mat(3, 3, {0.9, 0.1, -0.3, 0.2, 0.5, 0.4, -0.1, 0.3, 0.8});
  std::vector<std::size_t> p = {2, 0, 1};
  std::vector<double> permuted(9);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 3; ++j) permuted[i * 3 + j] = z.at(p[i], p[j]);
  CHECK(info_nce(Tensor::from(3, 3, permuted), 0.5).item() == doctest::Approx(info_nce(z, 0.5).item()).epsilon(1e-13));

  double prev = 1e9;
  for (double margin = 0; margin <= 3.0; margin += 0.25) {
    auto m = mat(2, 2, {margin, 0, 0, margin});
    const double l = info_nce(m, 1.0).item();
    CHECK(l < prev);
    prev = l;
  }
}

TEST_CASE("clcl direction weighting") {
  Rng rng(2);
  Tensor v = random(6, 5, rng, false);
  Tensor t = random(5, 5, rng, false);
  auto batch = token_similarity_aggregate(v, {2, 1, 3}, t, {2, 2, 1});
  auto scale = Tensor::scalar(1 / 0.3);
  CHECK(clcl_loss(batch, scale, 1.0).item() == doctest::Approx(info_nce(batch.z_v2t, scale).item()).epsilon(1e-14));
  CHECK(clcl_loss(batch, scale, 0.0).item() == doctest::Approx(info_nce(batch.z_t2v, scale).item()).epsilon(1e-14));
  const double a = clcl_loss(batch, scale, 0.25).item();
  const double expected = 0.25 * info_nce(batch.z_v2t, scale).item() + 0.75 * info_nce(batch.z_t2v, scale).item();
  CHECK(a == doctest::Approx(expected).epsilon(1e-14));
}

TEST_CASE("symmetric batches make clcl independent of alpha") {
  Rng rng(3);
  std::normal_distribution<double> n(0, 1);
  for (int trial = 0; trial < 5; ++trial) {
    SimilarityBatch b;
    std::vector<double> z(16);
    for (auto& x : z) x = n(rng);
    std::vector<double> zt(16);
    for (std::size_t i = 0; i < 4; ++i)
      for (std::size_t j = 0; j < 4; ++j) zt[i * 4 + j] = z[j * 4 + i];
    b.z_v2t = Tensor::from(4, 4, z);
    b.z_t2v = Tensor::from(4, 4, zt);
    auto scale = Tensor::scalar(2.0);
    const double l0 = clcl_loss(b, scale, 0.0).item();
    for (double alpha : {0.2, 0.5, 0.9, 1.0}) CHECK(clcl_loss(b, scale, alpha).item() == doctest::Approx(l0).epsilon(1e-13));
  }
}

TEST_CASE("dual-level loss is the beta mix") {
  auto ce = Tensor::scalar(2.0);
  auto hs = Tensor::scalar(5.0);
  CHECK(dual_level_loss(ce, hs, 1.0).item() == 2.0);
  CHECK(dual_level_loss(ce, hs, 0.0).item() == 5.0);
  CHECK(dual_level_loss(ce, hs, 0.6).item() == doctest::Approx(0.6 * 2 + 0.4 * 5));
  CHECK_THROWS_AS(dual_level_loss(ce, hs, 1.5), UsageError);
}

TEST_CASE("clip global loss") {
  auto scale = Tensor::scalar(1.0);
  Rng rng(4);
  CHECK(std::abs(clip_global_loss(random(1, 4, rng, false), random(1, 4, rng, false), scale).item()) < 1e-12);

  // Margin sweep over scaled identities: loss falls monotonically towards 0.
  double prev = 1e9;
  for (double s : {1.0, 2.0, 5.0, 10.0, 30.0}) {
    auto eye = mat(3, 3, {1, 0, 0, 0, 1, 0, 0, 0, 1});
    const double l = clip_global_loss(eye, eye, Tensor::scalar(s)).item();
    CHECK(l < prev);
    prev = l;
  }
  CHECK(prev < 1e-10);

  // With one token per sequence, CLCL collapses to the global loss.
  Tensor v = random(4, 6, rng, false);
  Tensor t = random(4, 6, rng, false);
  Lengths ones = {1, 1, 1, 1};
  auto batch = token_similarity_aggregate(v, ones, t, ones);
  auto s = Tensor::scalar(3.0);
  CHECK(clcl_loss(batch, s, 0.5).item() == doctest::Approx(clip_global_loss(v, ones, t, ones, s).item()).epsilon(1e-13));
}

TEST_CASE("label-smoothed language-model loss") {
  // Uniform logits give ln d for any smoothing.
  for (double eps : {0.0, 0.2, 0.5}) {
    auto logits = Tensor::full(3, 7, 0.4);
    std::vector<std::size_t> tgt = {4, 2, 6};
    CHECK(lm_loss(logits, tgt, eps).item() == doctest::Approx(std::log(7.0)).epsilon(1e-12));
  }
  std::vector<std::size_t> tgt0 = {0};
  CHECK(lm_loss(mat(1, 2, {std::log(3.0), 0.0}), tgt0, 0.0, 99).item() ==
        doctest::Approx(std::log(4.0 / 3.0)).epsilon(1e-12));
  std::vector<std::size_t> tgt1 = {1};
  CHECK(lm_loss(mat(1, 3, {-40, 40, -40}), tgt1, 0.0).item() < 1e-30);

  // PAD steps neither count nor contribute.
  std::vector<std::size_t> padded = {5, 0, 0};
  auto l = mat(3, 6, {0.1, 0.5, -1, 2, 0.3, 1.2, 9, 9, 9, 9, 9, -9, 3, -3, 1, 0, 0, 0});
  auto only = nn::slice_rows(l, 0, 1);
  std::vector<std::size_t> first = {5};
  CHECK(lm_loss(l, padded, 0.2).item() == doctest::Approx(lm_loss(only, first, 0.2).item()).epsilon(1e-14));
  CHECK_THROWS_AS(lm_loss(l, std::vector<std::size_t>{7, 1, 1}, 0.2), DataError);
}

TEST_CASE("lm loss is bounded below by the smoothed-target entropy") {
  const std::size_t d = 5;
  const double eps = 0.2;
  const double off = eps / (d - 1);
  const double entropy = -(1 - eps) * std::log(1 - eps) - (d - 1) * off * std::log(off);
  std::vector<std::size_t> tgt = {2};
  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) CHECK(lm_loss(random(1, d, rng, false), tgt, eps).item() > entropy);
  std::vector<double> matched(d, std::log(off));
  matched[2] = std::log(1 - eps);
  CHECK(lm_loss(Tensor::from(1, d, matched), tgt, eps).item() == doctest::Approx(entropy).epsilon(1e-12));
}

TEST_CASE("loss gradients match finite differences") {
  Rng rng(6);
  Tensor v = random(7, 5, rng);
  Tensor t = random(6, 5, rng);
  Tensor s = Tensor::scalar(std::log(1 / 0.5), true);
  auto clcl = [&] {
    auto b = token_similarity_aggregate(v, {3, 2, 2}, t, {1, 3, 2});
    return clcl_loss(b, temperature_scale(s), 0.3);
  };
  CHECK(nn::grad_check(clcl, {{"v", v}, {"t", t}, {"s", s}}, {.eps = 1e-6}).max_rel_error < 1e-6);

  auto clip = [&] { return clip_global_loss(v, {3, 2, 2}, t, {1, 3, 2}, temperature_scale(s)); };
  CHECK(nn::grad_check(clip, {{"v", v}, {"t", t}, {"s", s}}, {.eps = 1e-6}).max_rel_error < 1e-6);

  Tensor logits = random(4, 6, rng);
  std::vector<std::size_t> tgt = {3, 5, 0, 2};
  auto lm = [&] { return lm_loss(logits, tgt, 0.2); };
  CHECK(nn::grad_check(lm, {{"logits", logits}}, {.eps = 1e-6}).max_rel_error < 1e-6);
}

TEST_CASE("temperature starts at 0.07 and is clamped") {
  nn::ParameterSet params;
  Tensor s = add_temperature(params);
  CHECK(1.0 / temperature_scale(s).item() == doctest::Approx(0.07).epsilon(1e-12));
  CHECK(params.at("temperature.logit_scale").component == nn::Component::temperature);
  s.mutable_values()[0] = 10.0;
  clamp_temperature(s);
  CHECK(temperature_scale(s).item() == doctest::Approx(100.0).epsilon(1e-12));
}
