#include "padet/eval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace padet {

namespace {

struct RankedDet {
  double score;
  int image;
  int det;
};

std::vector<RankedDet> ranked_class_dets(const std::vector<ImageEval>& images,
                                         int class_id) {
  std::vector<RankedDet> ranked;
  for (size_t n = 0; n < images.size(); ++n) {
    const auto& dets = images[n].dets;
    for (size_t d = 0; d < dets.size(); ++d) {
      if (dets[d].class_id == class_id) {
        ranked.push_back({dets[d].score, static_cast<int>(n), static_cast<int>(d)});
      }
    }
  }
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const RankedDet& a, const RankedDet& b) { return a.score > b.score; });
  return ranked;
}

double ap_from_flags(const std::vector<char>& is_tp, std::int64_t n_gt) {
  if (n_gt == 0) return 0.0;
  // all-points interpolation: integrate recall steps against the running
  // max precision from the right
  const size_t n = is_tp.size();
  std::vector<double> prec(n);
  std::int64_t tp = 0;
  for (size_t i = 0; i < n; ++i) {
    if (is_tp[i]) ++tp;
    prec[i] = static_cast<double>(tp) / static_cast<double>(i + 1);
  }
  double ap = 0.0;
  double max_prec = 0.0;
  for (size_t i = n; i-- > 0;) {
    max_prec = std::max(max_prec, prec[i]);
    if (is_tp[i]) ap += max_prec / static_cast<double>(n_gt);
  }
  return ap;
}

int size_bucket(double area) {
  if (area < 64.0 * 64.0) return 0;
  if (area < 192.0 * 192.0) return 1;
  return 2;
}

}  // namespace

double average_precision(const std::vector<ImageEval>& images, int class_id,
                         double iou_thresh, bool* no_gt_flag) {
  std::int64_t n_gt = 0;
  for (const auto& img : images) {
    for (const auto& g : img.gts) {
      if (g.class_id == class_id) ++n_gt;
    }
  }
  auto ranked = ranked_class_dets(images, class_id);
  if (n_gt == 0) {
    if (no_gt_flag) *no_gt_flag = !ranked.empty();
    return 0.0;
  }
  if (no_gt_flag) *no_gt_flag = false;

  std::vector<std::vector<char>> gt_used(images.size());
  for (size_t n = 0; n < images.size(); ++n) {
    gt_used[n].assign(images[n].gts.size(), 0);
  }
  std::vector<char> is_tp(ranked.size(), 0);
  for (size_t r = 0; r < ranked.size(); ++r) {
    const auto& rd = ranked[r];
    const auto& img = images[rd.image];
    double best = 0.0;
    int best_gt = -1;
    for (size_t g = 0; g < img.gts.size(); ++g) {
      if (img.gts[g].class_id != class_id || gt_used[rd.image][g]) continue;
      const double ov = iou(img.dets[rd.det].box, img.gts[g].box);
      if (ov > best) {
        best = ov;
        best_gt = static_cast<int>(g);
      }
    }
    if (best_gt >= 0 && best >= iou_thresh) {
      is_tp[r] = 1;
      gt_used[rd.image][best_gt] = 1;
    }
  }
  return ap_from_flags(is_tp, n_gt);
}

namespace {

// COCO-style bucketed AP: gts outside the bucket are ignore regions, and
// detections that land on them (or whose own area falls outside the bucket
// without matching anything) do not count as false positives.
double bucket_average_precision(const std::vector<ImageEval>& images, int class_id,
                                double iou_thresh, int bucket, std::int64_t* n_gt_out) {
  std::int64_t n_gt = 0;
  for (const auto& img : images) {
    for (const auto& g : img.gts) {
      if (g.class_id == class_id && size_bucket(g.box.area()) == bucket) ++n_gt;
    }
  }
  if (n_gt_out) *n_gt_out = n_gt;
  if (n_gt == 0) return 0.0;

  auto ranked = ranked_class_dets(images, class_id);
  std::vector<std::vector<char>> gt_used(images.size());
  for (size_t n = 0; n < images.size(); ++n) {
    gt_used[n].assign(images[n].gts.size(), 0);
  }
  std::vector<char> flags;  // 1 TP, 0 FP; ignored dets are dropped
  flags.reserve(ranked.size());
  for (const auto& rd : ranked) {
    const auto& img = images[rd.image];
    const Box& dbox = img.dets[rd.det].box;
    double best = 0.0;
    int best_gt = -1;
    for (size_t g = 0; g < img.gts.size(); ++g) {
      if (img.gts[g].class_id != class_id || gt_used[rd.image][g]) continue;
      if (size_bucket(img.gts[g].box.area()) != bucket) continue;
      const double ov = iou(dbox, img.gts[g].box);
      if (ov > best) {
        best = ov;
        best_gt = static_cast<int>(g);
      }
    }
    if (best_gt >= 0 && best >= iou_thresh) {
      flags.push_back(1);
      gt_used[rd.image][best_gt] = 1;
      continue;
    }
    // overlap with an out-of-bucket gt of the class -> ignore
    double best_ignore = 0.0;
    for (const auto& g : img.gts) {
      if (g.class_id != class_id || size_bucket(g.box.area()) == bucket) continue;
      best_ignore = std::max(best_ignore, iou(dbox, g.box));
    }
    if (best_ignore >= iou_thresh) continue;
    if (size_bucket(dbox.area()) != bucket) continue;
    flags.push_back(0);
  }
  return ap_from_flags(flags, n_gt);
}

}  // namespace

EvalReport map_sweep(const std::vector<ImageEval>& images, int num_object_classes,
                     const std::vector<double>& thresholds) {
  if (thresholds.empty()) throw std::invalid_argument("map_sweep: no thresholds");
  for (size_t i = 1; i < thresholds.size(); ++i) {
    if (thresholds[i] <= thresholds[i - 1]) {
      throw std::invalid_argument("map_sweep: thresholds must ascend");
    }
  }
  EvalReport rep;
  rep.thresholds = thresholds;
  rep.ap_by_class.assign(num_object_classes, 0.0);
  rep.class_flagged.assign(num_object_classes, false);
  rep.counts.assign(num_object_classes, {});

  for (double t : thresholds) {
    double sum = 0.0;
    int counted = 0;
    for (int c = 0; c < num_object_classes; ++c) {
      bool flag = false;
      const double ap = average_precision(images, c, t, &flag);
      std::int64_t n_gt = 0;
      for (const auto& img : images) {
        for (const auto& g : img.gts) {
          if (g.class_id == c) ++n_gt;
        }
      }
      const bool has_dets = flag;  // flagged means dets without gts
      if (n_gt > 0 || has_dets) {
        sum += ap;
        ++counted;
      }
      if (t == thresholds.front()) {
        rep.ap_by_class[c] = ap;
        rep.class_flagged[c] = flag;
      }
    }
    rep.map_at.push_back(counted > 0 ? sum / counted : 0.0);
  }

  // size-bucketed AP at the base threshold
  const double base = thresholds.front();
  for (int bucket = 0; bucket < 3; ++bucket) {
    double sum = 0.0;
    int counted = 0;
    std::int64_t bucket_gts = 0;
    for (int c = 0; c < num_object_classes; ++c) {
      std::int64_t n_gt = 0;
      const double ap = bucket_average_precision(images, c, base, bucket, &n_gt);
      bucket_gts += n_gt;
      if (n_gt > 0) {
        sum += ap;
        ++counted;
      }
    }
    rep.ap_by_size[bucket] = counted > 0 ? sum / counted : 0.0;
    rep.gts_by_size[bucket] = bucket_gts;
  }

  // TP/FP/FN at the base threshold
  for (int c = 0; c < num_object_classes; ++c) {
    auto ranked = ranked_class_dets(images, c);
    std::vector<std::vector<char>> gt_used(images.size());
    std::int64_t n_gt = 0;
    for (size_t n = 0; n < images.size(); ++n) {
      gt_used[n].assign(images[n].gts.size(), 0);
      for (const auto& g : images[n].gts) {
        if (g.class_id == c) ++n_gt;
      }
    }
    std::int64_t tp = 0;
    for (const auto& rd : ranked) {
      const auto& img = images[rd.image];
      double best = 0.0;
      int best_gt = -1;
      for (size_t g = 0; g < img.gts.size(); ++g) {
        if (img.gts[g].class_id != c || gt_used[rd.image][g]) continue;
        const double ov = iou(img.dets[rd.det].box, img.gts[g].box);
        if (ov > best) {
          best = ov;
          best_gt = static_cast<int>(g);
        }
      }
      if (best_gt >= 0 && best >= base) {
        ++tp;
        gt_used[rd.image][best_gt] = 1;
      }
    }
    rep.counts[c].tp = tp;
    rep.counts[c].fp = static_cast<std::int64_t>(ranked.size()) - tp;
    rep.counts[c].fn = n_gt - tp;
  }
  return rep;
}

namespace {

int scale_bucket(double area, const std::vector<double>& edges) {
  const double scale = std::sqrt(std::max(area, 0.0));
  int b = 0;
  for (size_t i = 1; i < edges.size(); ++i) {
    if (scale >= edges[i]) b = static_cast<int>(i);
  }
  return b;
}

double cov_over_buckets(const std::vector<std::int64_t>& counts,
                        const std::vector<std::int64_t>& gts) {
  std::vector<double> vals;
  for (size_t i = 0; i < counts.size(); ++i) {
    if (gts[i] > 0) vals.push_back(static_cast<double>(counts[i]));
  }
  if (vals.empty()) return 0.0;
  const double mean = std::accumulate(vals.begin(), vals.end(), 0.0) / vals.size();
  if (mean <= 0.0) return 0.0;
  double var = 0.0;
  for (double v : vals) var += (v - mean) * (v - mean);
  var /= vals.size();
  return std::sqrt(var) / mean;
}

}  // namespace

MatchStatsReport matched_box_stats(const std::vector<MatchStatsInput>& batches,
                                   double iou_thresh,
                                   const std::vector<double>& scale_edges) {
  if (batches.empty()) {
    throw std::invalid_argument("matched_box_stats: empty sample");
  }
  const size_t nb = scale_edges.size();  // last bucket is open-ended
  MatchStatsReport rep;
  rep.bucket_edges = scale_edges;
  rep.gts_per_bucket.assign(nb, 0);
  rep.initial_counts.assign(nb, 0);
  rep.adjusted_counts.assign(nb, 0);

  for (const auto& batch : batches) {
    if (batch.defaults.size() != batch.adjusted.size()) {
      throw std::invalid_argument("matched_box_stats: box lists misaligned");
    }
    for (const auto& g : batch.gts) {
      ++rep.gts_per_bucket[scale_bucket(g.box.area(), scale_edges)];
    }
    std::int64_t batch_initial = 0, batch_adjusted = 0;
    const auto initial = match(batch.defaults, batch.gts, iou_thresh);
    for (const auto& m : initial) {
      if (m.label == MatchResult::Label::positive) {
        ++rep.initial_counts[scale_bucket(batch.gts[m.matched_gt].box.area(), scale_edges)];
        ++batch_initial;
      }
    }
    const auto adjusted = match(batch.adjusted, batch.gts, iou_thresh);
    for (const auto& m : adjusted) {
      if (m.label == MatchResult::Label::positive) {
        ++rep.adjusted_counts[scale_bucket(batch.gts[m.matched_gt].box.area(), scale_edges)];
        ++batch_adjusted;
      }
    }
    rep.per_batch.emplace_back(batch_initial, batch_adjusted);
  }

  rep.total_initial = std::accumulate(rep.initial_counts.begin(), rep.initial_counts.end(),
                                      static_cast<std::int64_t>(0));
  rep.total_adjusted = std::accumulate(rep.adjusted_counts.begin(),
                                       rep.adjusted_counts.end(),
                                       static_cast<std::int64_t>(0));
  rep.initial_share.assign(nb, 0.0);
  rep.adjusted_share.assign(nb, 0.0);
  for (size_t i = 0; i < nb; ++i) {
    if (rep.total_initial > 0) {
      rep.initial_share[i] =
          static_cast<double>(rep.initial_counts[i]) / rep.total_initial;
    }
    if (rep.total_adjusted > 0) {
      rep.adjusted_share[i] =
          static_cast<double>(rep.adjusted_counts[i]) / rep.total_adjusted;
    }
  }
  rep.initial_cov = cov_over_buckets(rep.initial_counts, rep.gts_per_bucket);
  rep.adjusted_cov = cov_over_buckets(rep.adjusted_counts, rep.gts_per_bucket);
  return rep;
}

}  // namespace padet
