#pragma once

#include <array>
#include <cstdint>
#include <utility>
#include <vector>

#include "padet/postprocess.hpp"

namespace padet {

// Detections and ground truths of one image, as consumed by the evaluator.
struct ImageEval {
  std::vector<Detection> dets;
  std::vector<GtBox> gts;
};

// All-points interpolated average precision for one class. Detections are
// matched greedily in descending score order to the best-IoU unmatched gt.
// With no gts for the class, returns 0 and raises *no_gt_flag.
double average_precision(const std::vector<ImageEval>& images, int class_id,
                         double iou_thresh, bool* no_gt_flag = nullptr);

struct EvalReport {
  std::vector<double> thresholds;
  std::vector<double> map_at;       // parallel to thresholds
  std::vector<double> ap_by_class;  // at the base threshold
  std::vector<bool> class_flagged;  // detections present but no gts
  // gt area buckets: small < 64^2 <= medium < 192^2 <= large
  std::array<double, 3> ap_by_size{};
  std::array<std::int64_t, 3> gts_by_size{};
  struct ClassCounts {
    std::int64_t tp = 0, fp = 0, fn = 0;
  };
  std::vector<ClassCounts> counts;  // at the base threshold

  double map_at_base() const { return map_at.empty() ? 0.0 : map_at.front(); }
};

// mAP over ascending IoU thresholds plus per-class and size-bucketed AP at
// the first threshold.
EvalReport map_sweep(const std::vector<ImageEval>& images, int num_object_classes,
                     const std::vector<double>& thresholds = {0.5, 0.6, 0.7, 0.8});

// One evaluation batch for the matched-box analyzer: the image's gts plus the
// default and adjusted boxes in identical flat order.
struct MatchStatsInput {
  std::vector<GtBox> gts;
  std::vector<Box> defaults;
  std::vector<Box> adjusted;
};

struct MatchStatsReport {
  std::vector<double> bucket_edges;  // sqrt(gt area) edges, open-ended last bucket
  std::vector<std::int64_t> gts_per_bucket;
  std::vector<std::int64_t> initial_counts;
  std::vector<std::int64_t> adjusted_counts;
  std::vector<double> initial_share;   // normalized, sums to 1 per series
  std::vector<double> adjusted_share;
  std::vector<std::pair<std::int64_t, std::int64_t>> per_batch;  // (initial, adjusted)
  std::int64_t total_initial = 0, total_adjusted = 0;
  // coefficient of variation over buckets that contain gts
  double initial_cov = 0.0, adjusted_cov = 0.0;
};

// Positive-match counts per gt-scale bucket using (a) the initial defaults
// and (b) the adjusted boxes, matched at the same threshold.
MatchStatsReport matched_box_stats(
    const std::vector<MatchStatsInput>& batches, double iou_thresh = 0.5,
    const std::vector<double>& scale_edges = {0.0, 32.0, 48.0, 64.0, 96.0, 128.0});

}  // namespace padet
