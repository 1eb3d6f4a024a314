#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "padet/anchors.hpp"

namespace padet {

// Per-step loss report. `total` is the plain sum of the four terms; a process
// with zero positives contributes exactly zero.
struct LossBreakdown {
  double propose_cls = 0.0, propose_reg = 0.0;
  double attend_cls = 0.0, attend_reg = 0.0;
  int n_pos_propose = 0, n_pos_attend = 0;

  double total() const { return propose_cls + propose_reg + attend_cls + attend_reg; }
};

// Elementwise 0.5*x^2 for |x|<1, |x|-0.5 otherwise, summed.
double smooth_l1(std::span<const double> pred, std::span<const double> target);

// Numerically stable -log softmax(logits)[target].
double softmax_cross_entropy(std::span<const double> logits, int target);

struct ProcessLossValue {
  double cls_loss = 0.0;
  double reg_loss = 0.0;
  int n_pos = 0;
};

// Reference-form loss of one process over a post-mining match list:
// cross-entropy over kept entries and Smooth-L1 over positives, both divided
// by the positive count; exactly zero when there are no positives.
// logits[i] holds the class scores of anchor i (background at index 0);
// deltas[i] its four regression outputs.
ProcessLossValue process_loss(const std::vector<MatchResult>& matches,
                              const std::vector<std::vector<double>>& logits,
                              const std::vector<std::array<double, 4>>& deltas);

struct LrSchedule {
  double base_lr = 4e-3;
  double warmup_start = 1e-6;
  int warmup_epochs = 5;
  std::vector<int> milestone_epochs{150, 200};
  double decay = 0.1;
  int steps_per_epoch = 1;
};

// Linear warmup from warmup_start to base_lr over the warmup epochs, then
// stepwise decay at each milestone epoch.
double lr_at(std::int64_t step, const LrSchedule& schedule);

}  // namespace padet
