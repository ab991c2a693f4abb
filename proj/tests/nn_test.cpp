#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <filesystem>

#include "signtok/error.hpp"
#include "signtok/nn/checkpoint.hpp"
#include "signtok/nn/gradcheck.hpp"
#include "signtok/nn/layers.hpp"
#include "signtok/nn/ops.hpp"
#include "signtok/nn/optim.hpp"

using namespace signtok;
using namespace signtok::nn;

namespace {

Tensor random_tensor(std::size_t rows, std::size_t cols, Rng& rng, bool grad = true, Scalar sd = 1.0) {
  Tensor t = normal_init(rows, cols, sd, rng);
  t.set_requires_grad(grad);
  return t;
}

// Projects an op output onto fixed random weights so every output coordinate
// contributes to the scalar under test.
Tensor project(const Tensor& y, std::uint64_t seed) {
  Rng rng(seed);
  Tensor w = normal_init(y.rows(), y.cols(), 1.0, rng);
  return sum(mul(y, w));
}

double check(const std::function<Tensor()>& f, std::vector<std::pair<std::string, Tensor>> inputs) {
  auto r = grad_check(f, inputs, {.eps = 1e-6});
  INFO("worst coordinate: " << r.worst);
  return r.max_rel_error;
}

}  // namespace

TEST_CASE("matmul gradients for every transpose combination") {
  Rng rng(1);
  for (int ta = 0; ta < 2; ++ta) {
    for (int tb = 0; tb < 2; ++tb) {
      Tensor a = ta ? random_tensor(4, 3, rng) : random_tensor(3, 4, rng);
      Tensor b = tb ? random_tensor(5, 4, rng) : random_tensor(4, 5, rng);
      auto f = [&] { return project(matmul(a, b, ta, tb), 7); };
      CHECK(check(f, {{"a", a}, {"b", b}}) < 1e-6);
    }
  }
}

TEST_CASE("elementwise and broadcast gradients") {
  Rng rng(2);
  Tensor a = random_tensor(3, 4, rng);
  Tensor b = random_tensor(3, 4, rng);
  Tensor row = random_tensor(1, 4, rng);
  Tensor s = random_tensor(1, 1, rng);
  auto f = [&] {
    Tensor y = add(mul(a, b), sub(scale(a, 0.3), b));
    y = add_row(scale_by(y, s), row);
    return project(exp(scale(gelu(y), 0.2)), 3);
  };
  CHECK(check(f, {{"a", a}, {"b", b}, {"row", row}, {"s", s}}) < 1e-6);
}

TEST_CASE("relu gradient away from the kink") {
  Tensor x = Tensor::from(2, 2, {-1.0, 0.5, 2.0, -0.25}, true);
  auto f = [&] { return project(relu(x), 5); };
  CHECK(check(f, {{"x", x}}) < 1e-8);
}

TEST_CASE("softmax rows sum to one and masked entries are exactly zero") {
  Rng rng(3);
  Tensor x = random_tensor(4, 5, rng);
  std::vector<bool> mask(20, false);
  mask[1] = mask[7] = mask[8] = true;
  for (int j = 0; j < 5; ++j) mask[15 + j] = true;  // fully masked last row
  Tensor p = softmax_rows(x, mask);
  for (std::size_t r = 0; r < 3; ++r) {
    double s = 0.0;
    for (std::size_t j = 0; j < 5; ++j) s += p.at(r, j);
    CHECK(std::abs(s - 1.0) < 1e-9);
  }
  CHECK(p.at(0, 1) == 0.0);
  CHECK(p.at(1, 2) == 0.0);
  CHECK(p.at(1, 3) == 0.0);
  for (std::size_t j = 0; j < 5; ++j) CHECK(p.at(3, j) == 0.0);
  auto f = [&] { return project(softmax_rows(x, mask), 11); };
  CHECK(check(f, {{"x", x}}) < 1e-6);
}

TEST_CASE("layer norm and batch norm gradients") {
  Rng rng(4);
  Tensor x = random_tensor(5, 6, rng);
  Tensor g = random_tensor(1, 6, rng);
  Tensor b = random_tensor(1, 6, rng);
  auto ln = [&] { return project(layer_norm(x, g, b), 1); };
  CHECK(check(ln, {{"x", x}, {"g", g}, {"b", b}}) < 1e-6);

  BatchNormBuffers buffers{Tensor::zeros(1, 6), Tensor::full(1, 6, 1.0)};
  auto bn_train = [&] { return project(batch_norm(x, g, b, buffers, true), 2); };
  CHECK(check(bn_train, {{"x", x}, {"g", g}, {"b", b}}) < 1e-6);
  auto bn_eval = [&] { return project(batch_norm(x, g, b, buffers, false), 2); };
  CHECK(check(bn_eval, {{"x", x}, {"g", g}, {"b", b}}) < 1e-6);
}

TEST_CASE("batch norm inference is a fixed affine map of its input") {
  Rng rng(5);
  Tensor x = random_tensor(4, 3, rng, false);
  Tensor g = random_tensor(1, 3, rng, false);
  Tensor b = random_tensor(1, 3, rng, false);
  BatchNormBuffers buffers{Tensor::from(1, 3, {0.5, -1.0, 2.0}), Tensor::from(1, 3, {1.5, 0.25, 4.0})};
  Tensor y1 = batch_norm(x, g, b, buffers, false);
  Tensor y2 = batch_norm(x, g, b, buffers, false);
  for (std::size_t i = 0; i < y1.size(); ++i) {
    CHECK(y1.values()[i] == y2.values()[i]);
    const std::size_t j = i % 3;
    const double expect = g.values()[j] * (x.values()[i] - buffers.running_mean.values()[j]) /
                              std::sqrt(buffers.running_var.values()[j] + 1e-5) + b.values()[j];
    CHECK(y1.values()[i] == doctest::Approx(expect).epsilon(1e-12));
  }
  // running stats untouched in eval mode
  CHECK(buffers.running_mean.values()[0] == 0.5);
}

TEST_CASE("batch norm training updates running statistics") {
  Tensor x = Tensor::from(4, 1, {1.0, 2.0, 3.0, 4.0});
  Tensor g = Tensor::full(1, 1, 1.0);
  Tensor b = Tensor::zeros(1, 1);
  BatchNormBuffers buffers{Tensor::zeros(1, 1), Tensor::full(1, 1, 1.0)};
  batch_norm(x, g, b, buffers, true, 0.1);
  CHECK(buffers.running_mean.item() == doctest::Approx(0.25));
  // unbiased variance of {1,2,3,4} is 5/3
  CHECK(buffers.running_var.item() == doctest::Approx(0.9 + 0.1 * 5.0 / 3.0));
}

TEST_CASE("row plumbing gradients") {
  Rng rng(6);
  Tensor x = random_tensor(6, 3, rng);
  Tensor y = random_tensor(2, 3, rng);
  std::vector<std::size_t> idx{5, 0, 0, 3};
  auto f = [&] {
    Tensor g = gather_rows(x, idx);
    Tensor r = reshape(g, 3, 4);
    std::vector<Tensor> parts{slice_rows(x, 1, 2), y};
    Tensor c = concat_rows(parts);
    return add(project(r, 1), project(c, 2));
  };
  CHECK(check(f, {{"x", x}, {"y", y}}) < 1e-6);
}

TEST_CASE("segment pooling gradients and values") {
  Rng rng(7);
  Tensor x = random_tensor(7, 3, rng);
  Lengths lengths{2, 4, 1};
  Tensor m = segment_mean(x, lengths);
  CHECK(m.at(0, 1) == doctest::Approx((x.at(0, 1) + x.at(1, 1)) / 2.0));
  CHECK(m.at(2, 2) == x.at(6, 2));
  Tensor mx = segment_max(x, lengths);
  CHECK(mx.at(1, 0) == std::max({x.at(2, 0), x.at(3, 0), x.at(4, 0), x.at(5, 0)}));
  auto f = [&] { return add(project(segment_mean(x, lengths), 3), project(segment_max(x, lengths), 4)); };
  CHECK(check(f, {{"x", x}}) < 1e-6);
}

TEST_CASE("l2 normalization gradient and unit norm") {
  Rng rng(8);
  Tensor x = random_tensor(4, 5, rng);
  Tensor y = l2_normalize_rows(x);
  for (std::size_t r = 0; r < 4; ++r) {
    double s = 0.0;
    for (std::size_t j = 0; j < 5; ++j) s += y.at(r, j) * y.at(r, j);
    CHECK(std::abs(s - 1.0) < 1e-12);
  }
  auto f = [&] { return project(l2_normalize_rows(x), 9); };
  CHECK(check(f, {{"x", x}}) < 1e-6);
}

TEST_CASE("conv1d output length is n - k + 1") {
  Rng rng(9);
  for (std::size_t n = 5; n <= 20; ++n) {
    Tensor x = random_tensor(n, 3, rng, false);
    Tensor w = random_tensor(15, 4, rng, false);
    Tensor b = random_tensor(1, 4, rng, false);
    CHECK(conv1d(x, {n}, w, b, 5).rows() == n - 4);
  }
  CHECK(conv1d_lengths({12}, 5) == Lengths{8});
  CHECK_THROWS_AS(conv1d_lengths({3}, 5), ShapeError);
}

TEST_CASE("conv1d matches a direct sliding-window sum and has correct gradients") {
  Rng rng(10);
  Tensor x = random_tensor(9, 2, rng);
  Tensor w = random_tensor(6, 3, rng);
  Tensor b = random_tensor(1, 3, rng);
  Lengths lengths{4, 5};
  Tensor y = conv1d(x, lengths, w, b, 3);
  REQUIRE(y.rows() == 2 + 3);
  // second group, second output step starts at input row 4 + 1
  for (std::size_t o = 0; o < 3; ++o) {
    double expect = b.values()[o];
    for (std::size_t tap = 0; tap < 3; ++tap)
      for (std::size_t c = 0; c < 2; ++c) expect += x.at(5 + tap, c) * w.at(tap * 2 + c, o);
    CHECK(y.at(3, o) == doctest::Approx(expect).epsilon(1e-12));
  }
  auto f = [&] { return project(conv1d(x, lengths, w, b, 3), 12); };
  CHECK(check(f, {{"x", x}, {"w", w}, {"b", b}}) < 1e-6);
}

TEST_CASE("attention with a single unmasked key returns that value row") {
  Rng rng(11);
  Tensor q = random_tensor(2, 4, rng, false);
  Tensor k = random_tensor(3, 4, rng, false);
  Tensor v = random_tensor(3, 4, rng, false);
  AttentionMask mask;
  mask.key_padding = {true, false, true};
  Tensor out = attention(q, k, v, {2}, {3}, 2, mask);
  for (std::size_t r = 0; r < 2; ++r)
    for (std::size_t j = 0; j < 4; ++j) CHECK(out.at(r, j) == doctest::Approx(v.at(1, j)).epsilon(1e-14));
}

TEST_CASE("attention groups are independent and gradients match finite differences") {
  Rng rng(12);
  Tensor q = random_tensor(5, 4, rng);
  Tensor k = random_tensor(6, 4, rng);
  Tensor v = random_tensor(6, 4, rng);
  Lengths ql{2, 3}, kl{4, 2};
  AttentionMask mask;
  mask.key_padding = {false, false, true, false, false, false};
  auto f = [&] { return project(attention(q, k, v, ql, kl, 2, mask), 13); };
  CHECK(check(f, {{"q", q}, {"k", k}, {"v", v}}) < 1e-6);

  // causal self-attention: the first query only sees the first key
  Tensor x = random_tensor(3, 4, rng, false);
  AttentionMask causal;
  causal.causal = true;
  Tensor y = attention(x, x, x, {3}, {3}, 1, causal);
  for (std::size_t j = 0; j < 4; ++j) CHECK(y.at(0, j) == doctest::Approx(x.at(0, j)));
  auto g = [&] { return project(attention(q, q, q, {2, 3}, {2, 3}, 2, causal), 14); };
  CHECK(check(g, {{"q", q}}) < 1e-6);

  // group 0 output is unchanged when group 1 keys change
  Tensor out1 = attention(q, k, v, ql, kl, 2, mask);
  Tensor k2 = k.clone();
  k2.at(5, 0) += 3.0;
  Tensor out2 = attention(q, k2, v, ql, kl, 2, mask);
  for (std::size_t j = 0; j < 4; ++j) {
    CHECK(out1.at(0, j) == out2.at(0, j));
    CHECK(out1.at(1, j) == out2.at(1, j));
  }
}

TEST_CASE("attention score element accounting") {
  CHECK(attention_score_elements({4, 2}, {4, 2}, 3) == 3 * (16 + 4));
  CHECK(attention_score_elements({}, {}, 8) == 0);
}

TEST_CASE("dropout with p = 0 is the identity and inverted scaling otherwise") {
  Rng rng(13);
  Tensor x = random_tensor(4, 4, rng, false);
  Tensor y = dropout(x, 0.0, true, rng);
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(y.values()[i] == x.values()[i]);
  Tensor ones = Tensor::full(200, 50, 1.0);
  Tensor d = dropout(ones, 0.5, true, rng);
  double s = 0.0;
  for (double v : d.values()) {
    CHECK((v == 0.0 || v == 2.0));
    s += v;
  }
  CHECK(s / static_cast<double>(d.size()) == doctest::Approx(1.0).epsilon(0.05));
  Tensor e = dropout(ones, 0.5, false, rng);
  CHECK(e.values()[0] == 1.0);
}

TEST_CASE("shape mismatch names the op and shapes") {
  Tensor a = Tensor::zeros(2, 3);
  Tensor b = Tensor::zeros(2, 3);
  try {
    matmul(a, b);
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("matmul") != std::string::npos);
    CHECK(msg.find("[2x3]") != std::string::npos);
  }
  CHECK_THROWS_AS(add(a, Tensor::zeros(3, 2)), ShapeError);
  CHECK_THROWS_AS(segment_mean(a, {1}), ShapeError);
}

TEST_CASE("grad_check on theta squared") {
  Tensor theta = Tensor::scalar(3.0, true);
  auto f = [&] { return mul(theta, theta); };
  auto r = grad_check(f, {{"theta", theta}}, {.eps = 1e-4});
  CHECK(theta.grad()[0] == doctest::Approx(6.0));
  CHECK(r.max_rel_error < 1e-8);
  CHECK(r.coords_checked == 1);
}

TEST_CASE("grad_check rejects non-finite losses") {
  Tensor theta = Tensor::scalar(1000.0, true);
  auto f = [&] { return exp(theta); };
  CHECK_THROWS_AS(grad_check(f, {{"theta", theta}}), NumericError);
}

TEST_CASE("transformer layers pass finite-difference checks") {
  Rng rng(14);
  ParameterSet params;
  TransformerConfig cfg{.layers = 2, .dim = 8, .heads = 2, .ffn_dim = 12, .dropout = 0.0};
  TransformerEncoder enc(params, "enc", Component::context_transformer, cfg, rng);
  TransformerDecoder dec(params, "dec", Component::translation_decoder, cfg, rng);
  Tensor src = random_tensor(5, 8, rng, false);
  Tensor tgt = random_tensor(4, 8, rng, false);
  Lengths sl{3, 2}, tl{1, 3};
  auto f = [&] {
    Tensor mem = enc.forward(add_positions(src, sl), sl, {});
    return project(dec.forward(add_positions(tgt, tl), tl, mem, sl, {}), 15);
  };
  auto r = grad_check(f, params, {.eps = 1e-6, .max_coords_per_tensor = 6, .seed = 3});
  INFO(r.worst);
  CHECK(r.max_rel_error < 1e-6);
}

TEST_CASE("parameter set keeps names unique and components queryable") {
  Rng rng(15);
  ParameterSet params;
  Linear l(params, "lin", Component::mapper, 3, 2, rng);
  CHECK(params.items().size() == 2);
  CHECK(params.has_component(Component::mapper));
  CHECK_FALSE(params.has_component(Component::temperature));
  CHECK_THROWS_AS(Linear(params, "lin", Component::mapper, 3, 2, rng), DataError);
  CHECK(component_from_name(component_name(Component::translation_encoder)) == Component::translation_encoder);
}

TEST_CASE("sgd: zero gradients only apply weight decay") {
  ParameterSet params;
  Tensor w = params.add("w", Component::mapper, Tensor::from(1, 2, {1.0, -2.0}));
  w.mutable_grad();
  Sgd opt(params, {.lr = 0.1, .momentum = 0.9, .weight_decay = 0.01, .grad_clip = 5.0, .epochs = 10});
  opt.step();
  CHECK(w.values()[0] == doctest::Approx(1.0 - 0.1 * 0.01 * 1.0));
  CHECK(w.values()[1] == doctest::Approx(-2.0 + 0.1 * 0.01 * 2.0));
  ParameterSet p2;
  Tensor w2 = p2.add("w", Component::mapper, Tensor::from(1, 2, {1.0, -2.0}));
  w2.mutable_grad();
  Sgd opt2(p2, {.lr = 0.1, .momentum = 0.9, .weight_decay = 0.0, .grad_clip = 1.0, .epochs = 10});
  opt2.step();
  CHECK(w2.values()[0] == 1.0);
  CHECK(w2.values()[1] == -2.0);
}

TEST_CASE("sgd: clipping scales a norm-10 gradient by 0.1") {
  ParameterSet params;
  Tensor w = params.add("w", Component::mapper, Tensor::from(1, 2, {0.0, 0.0}));
  auto g = w.mutable_grad();
  g[0] = 6.0;
  g[1] = 8.0;
  CHECK(clip_grad_norm(params, 1.0) == doctest::Approx(10.0));
  CHECK(w.grad()[0] == doctest::Approx(0.6));
  CHECK(w.grad()[1] == doctest::Approx(0.8));

  g[0] = 6.0;
  g[1] = 8.0;
  Sgd opt(params, {.lr = 1.0, .momentum = 0.0, .weight_decay = 0.0, .grad_clip = 1.0, .epochs = 1});
  opt.step();
  CHECK(w.values()[0] == doctest::Approx(-0.6));
  CHECK(w.values()[1] == doctest::Approx(-0.8));
}

TEST_CASE("sgd momentum accumulates") {
  ParameterSet params;
  Tensor w = params.add("w", Component::mapper, Tensor::scalar(0.0));
  Sgd opt(params, {.lr = 0.5, .momentum = 0.9, .weight_decay = 0.0, .grad_clip = 100.0, .epochs = 1});
  w.mutable_grad()[0] = 1.0;
  opt.step();
  CHECK(w.item() == doctest::Approx(-0.5));
  opt.step();
  CHECK(w.item() == doctest::Approx(-0.5 - 0.5 * 1.9));
}

TEST_CASE("cosine schedule endpoints") {
  CHECK(cosine_lr(0.03, 0, 80) == doctest::Approx(0.03));
  CHECK(cosine_lr(0.03, 40, 80) == doctest::Approx(0.015));
  CHECK(cosine_lr(0.03, 80, 80) == 0.0);
  CHECK(cosine_lr(0.03, 79, 80) < 0.03 * 0.001);
}

TEST_CASE("checkpoint round trip is bitwise") {
  Rng rng(16);
  ParameterSet params;
  Linear l(params, "lin", Component::frame_adapter, 4, 3, rng);
  BatchNorm1d bn(params, "bn", Component::temporal_conv, 3);
  Checkpoint ckpt = capture(params);
  ckpt.meta = R"({"k":1})";
  ckpt.epoch = 7;
  ckpt.rng_state = "123 456";
  ckpt.optimizer["lin.weight"] = std::vector<Scalar>(12, 0.25);
  const std::string bytes = serialize(ckpt);
  Checkpoint back = deserialize(bytes);
  CHECK(serialize(back) == bytes);
  CHECK(back.epoch == 7);
  CHECK(back.meta == ckpt.meta);
  CHECK(back.find("bn.running_var")->trainable == false);

  ParameterSet other;
  Rng rng2(99);
  Linear l2(other, "lin", Component::frame_adapter, 4, 3, rng2);
  BatchNorm1d bn2(other, "bn", Component::temporal_conv, 3);
  restore_all(other, back);
  for (std::size_t i = 0; i < l.weight.size(); ++i) CHECK(l2.weight.values()[i] == l.weight.values()[i]);

  CHECK_THROWS_AS(deserialize(bytes.substr(0, bytes.size() - 3)), DataError);
  CHECK_THROWS_AS(deserialize("XXXX" + bytes.substr(4)), DataError);
  CHECK_THROWS_AS(restore(other, back, {Component::temperature}), DataError);

  auto path = std::filesystem::temp_directory_path() / "signtok_nn_test.ckpt";
  save_checkpoint(path, ckpt);
  CHECK(serialize(load_checkpoint(path)) == bytes);
  std::filesystem::remove(path);
}

TEST_CASE("memory tracker sees tensor allocations") {
  memory::reset_peak();
  const auto before = memory::stats();
  {
    Tensor big = Tensor::zeros(100, 100);
    CHECK(memory::stats().live_bytes >= before.live_bytes + 100 * 100 * sizeof(Scalar));
  }
  CHECK(memory::stats().live_bytes == before.live_bytes);
  CHECK(memory::stats().peak_bytes >= before.live_bytes + 100 * 100 * sizeof(Scalar));
}
