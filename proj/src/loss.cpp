#include "padet/loss.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace padet {

double smooth_l1(std::span<const double> pred, std::span<const double> target) {
  if (pred.size() != target.size()) {
    throw std::invalid_argument("smooth_l1: length mismatch " +
                                std::to_string(pred.size()) + " vs " +
                                std::to_string(target.size()));
  }
  double total = 0.0;
  for (size_t i = 0; i < pred.size(); ++i) {
    const double d = pred[i] - target[i];
    const double a = std::abs(d);
    total += a < 1.0 ? 0.5 * d * d : a - 0.5;
  }
  return total;
}

double softmax_cross_entropy(std::span<const double> logits, int target) {
  if (target < 0 || static_cast<size_t>(target) >= logits.size()) {
    throw std::invalid_argument("softmax_cross_entropy: target out of range");
  }
  double mx = logits[0];
  for (double z : logits) mx = std::max(mx, z);
  double sum = 0.0;
  for (double z : logits) sum += std::exp(z - mx);
  return mx + std::log(sum) - logits[target];
}

ProcessLossValue process_loss(const std::vector<MatchResult>& matches,
                              const std::vector<std::vector<double>>& logits,
                              const std::vector<std::array<double, 4>>& deltas) {
  if (matches.size() != logits.size() || matches.size() != deltas.size()) {
    throw std::invalid_argument("process_loss: inputs not aligned with match list");
  }
  ProcessLossValue out;
  for (const auto& m : matches) {
    if (m.label == MatchResult::Label::positive) ++out.n_pos;
  }
  if (out.n_pos == 0) return out;

  double cls = 0.0, reg = 0.0;
  for (size_t i = 0; i < matches.size(); ++i) {
    const auto& m = matches[i];
    if (m.label == MatchResult::Label::discarded) continue;
    // Background occupies logit 0; object classes follow at class_id + 1.
    const int target = m.label == MatchResult::Label::positive ? m.class_id + 1 : 0;
    cls += softmax_cross_entropy(logits[i], target);
    if (m.label == MatchResult::Label::positive) {
      const std::array<double, 4> t{m.target.dx, m.target.dy, m.target.dw, m.target.dh};
      reg += smooth_l1(deltas[i], t);
    }
  }
  out.cls_loss = cls / out.n_pos;
  out.reg_loss = reg / out.n_pos;
  return out;
}

double lr_at(std::int64_t step, const LrSchedule& schedule) {
  const std::int64_t warmup_steps =
      static_cast<std::int64_t>(schedule.warmup_epochs) * schedule.steps_per_epoch;
  if (warmup_steps > 0 && step <= warmup_steps) {
    const double frac = static_cast<double>(step) / static_cast<double>(warmup_steps);
    return schedule.warmup_start + (schedule.base_lr - schedule.warmup_start) * frac;
  }
  const std::int64_t epoch = step / schedule.steps_per_epoch;
  double lr = schedule.base_lr;
  for (int milestone : schedule.milestone_epochs) {
    if (epoch >= milestone) lr *= schedule.decay;
  }
  return lr;
}

}  // namespace padet
