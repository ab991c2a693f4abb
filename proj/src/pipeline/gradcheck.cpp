#include <array>
#include <cmath>

#include "signtok/error.hpp"
#include "signtok/pipeline.hpp"

namespace signtok::pipeline {

namespace {

constexpr std::array<std::string_view, 5> kGradLossNames = {"ce", "hs", "total", "clip", "lm"};

constexpr std::size_t kDim = 6;
constexpr std::size_t kMaxTokens = 5;
constexpr std::size_t kLmVocab = 7;

nn::Lengths random_lengths(std::size_t batch, Rng& rng) {
  std::uniform_int_distribution<std::size_t> len(1, kMaxTokens);
  nn::Lengths out;
  for (std::size_t i = 0; i < batch; ++i) out.push_back(len(rng));
  return out;
}

nn::Tensor leaf(std::size_t rows, std::size_t cols, Rng& rng) {
  nn::Tensor t = nn::normal_init(rows, cols, 1.0, rng);
  t.set_requires_grad(true);
  return t;
}

}  // namespace

std::string_view grad_loss_name(GradLoss l) { return kGradLossNames[static_cast<std::size_t>(l)]; }

GradLoss grad_loss_from_name(std::string_view name) {
  for (std::size_t i = 0; i < kGradLossNames.size(); ++i)
    if (kGradLossNames[i] == name) return static_cast<GradLoss>(i);
  throw UsageError("unknown loss '" + std::string(name) + "' (expected ce, hs, total, clip or lm)");
}

nn::GradCheckResult check_loss_gradient(GradLoss loss, std::size_t batch, std::uint64_t seed) {
  if (batch < 1) throw UsageError("gradient check needs batch >= 1");
  Rng rng(seed);

  if (loss == GradLoss::lm) {
    const std::size_t steps = batch * kMaxTokens;
    nn::Tensor logits = leaf(steps, kLmVocab, rng);
    std::uniform_int_distribution<std::size_t> token(0, kLmVocab - 1);
    std::vector<std::size_t> targets(steps);
    for (auto& t : targets) t = token(rng);
    targets[0] = 4;  // at least one non-PAD step
    return nn::grad_check([&] { return losses::lm_loss(logits, targets, 0.2); }, {{"logits", logits}});
  }

  const nn::Lengths vis_len = random_lengths(batch, rng);
  const nn::Lengths txt_len = random_lengths(batch, rng);
  nn::Tensor visual = leaf(nn::total_length(vis_len), kDim, rng);
  nn::Tensor text = leaf(nn::total_length(txt_len), kDim, rng);
  nn::Tensor logit_scale = nn::Tensor::scalar(std::log(1.0 / losses::kInitialTemperature), true);
  std::vector<std::pair<std::string, nn::Tensor>> inputs = {
      {"visual", visual}, {"text", text}, {"logit_scale", logit_scale}};

  // Small context encoders stand in for the hidden-state path on both sides.
  nn::ParameterSet params;
  const nn::TransformerConfig tcfg{1, kDim, 2, 2 * kDim, 0.0};
  nn::TransformerEncoder vis_ctx(params, "visual_context", nn::Component::context_transformer, tcfg, rng);
  nn::TransformerEncoder txt_ctx(params, "language_encoder", nn::Component::language_encoder, tcfg, rng);
  if (loss == GradLoss::hs || loss == GradLoss::total) {
    for (const auto& p : params.items()) inputs.emplace_back(p.name, p.tensor);
  }

  const model::ForwardContext eval{false, nullptr};
  auto ce = [&] {
    auto sim = losses::token_similarity_aggregate(visual, vis_len, text, txt_len);
    return losses::clcl_loss(sim, losses::temperature_scale(logit_scale), 0.5);
  };
  auto hs = [&] {
    auto v = vis_ctx.forward(nn::add_positions(visual, vis_len), vis_len, eval);
    auto t = txt_ctx.forward(nn::add_positions(text, txt_len), txt_len, eval);
    auto sim = losses::token_similarity_aggregate(v, vis_len, t, txt_len);
    return losses::clcl_loss(sim, losses::temperature_scale(logit_scale), 0.5);
  };
  std::function<nn::Tensor()> fn;
  switch (loss) {
    case GradLoss::ce: fn = ce; break;
    case GradLoss::hs: fn = hs; break;
    case GradLoss::total: fn = [&] { return losses::dual_level_loss(ce(), hs(), 0.6); }; break;
    case GradLoss::clip:
      fn = [&] {
        return losses::clip_global_loss(visual, vis_len, text, txt_len, losses::temperature_scale(logit_scale));
      };
      break;
    case GradLoss::lm: break;
  }
  return nn::grad_check(fn, inputs);
}

}  // namespace signtok::pipeline
