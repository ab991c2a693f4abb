#include <sstream>

#include "signtok/error.hpp"
#include "signtok/pipeline.hpp"

namespace signtok::pipeline {

namespace {

// Applies one axis value to the pair of stage configs.
void apply_axis(const std::string& axis, const std::string& value, RunConfig& pre, RunConfig& fine) {
  if (axis == "beta") {
    double beta = 0;
    std::size_t used = 0;
    try {
      beta = std::stod(value, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != value.size()) throw UsageError("beta axis value '" + value + "' is not a number");
    pre.beta = beta;
  } else if (axis == "loss_mode") {
    const auto colon = value.find(':');
    pre.loss_mode = loss_mode_from_name(value.substr(0, colon));
    if (colon != std::string::npos) {
      const std::string flag = value.substr(colon + 1);
      if (flag == "dual") pre.dual_supervision = true;
      else if (flag == "single") pre.dual_supervision = false;
      else throw UsageError("loss_mode suffix must be ':dual' or ':single', got '" + flag + "'");
    }
  } else if (axis == "policy") {
    fine.policy = translate::policy_from_name(value);
  } else {
    throw UsageError("unknown ablation axis '" + axis + "' (expected beta, loss_mode or policy)");
  }
  pre.validate();
  fine.validate();
}

}  // namespace

std::vector<AblationRow> run_ablation_grid(const RunConfig& pretrain_cfg, const RunConfig& finetune_cfg,
                                           const std::string& axis, const std::vector<std::string>& values,
                                           const Dataset& train, const Dataset& dev, const Dataset& test) {
  if (values.empty()) throw UsageError("ablation axis needs at least one value");
  std::vector<AblationRow> rows;
  for (const auto& value : values) {
    RunConfig pre = pretrain_cfg, fine = finetune_cfg;
    apply_axis(axis, value, pre, fine);
    StageResult stage1;
    const bool needs_stage1 = fine.policy != translate::TransferPolicy::none;
    if (needs_stage1) stage1 = pretrain(pre, train);
    auto stage2 = finetune(fine, train, dev, needs_stage1 ? &stage1.last : nullptr);
    auto loaded = load_translation(stage2.best);
    auto report = evaluate_outputs(translate_dataset(loaded.model->translator, loaded.vocab.text, test,
                                                     fine.beam_width));
    report.reduction_ratio = test.reduction_ratio();
    const std::string hash = fnv1a_hex(pre.to_json().dump() + fine.to_json().dump());
    rows.push_back({hash, axis, value, report});
  }
  return rows;
}

std::string ablation_csv(const std::vector<AblationRow>& rows) {
  std::ostringstream out;
  out << "config_hash,axis,axis_value,bleu1,bleu2,bleu3,bleu4,rouge_l_f1\n";
  out.precision(6);
  out << std::fixed;
  for (const auto& r : rows) {
    out << r.config_hash << ',' << r.axis << ',' << r.value;
    for (double b : r.report.bleu) out << ',' << b;
    out << ',' << r.report.rouge_l_f1 << '\n';
  }
  return out.str();
}

}  // namespace signtok::pipeline
