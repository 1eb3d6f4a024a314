#include "padet/anchors.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>
#include <string>

namespace padet {

std::vector<DefaultBoxGrid> generate_default_boxes(const std::vector<int>& strides,
                                                   int image_h, int image_w,
                                                   const std::vector<double>& multipliers,
                                                   double anchor_scale) {
  if (strides.empty() || multipliers.empty()) {
    throw std::invalid_argument("generate_default_boxes: empty strides or multipliers");
  }
  std::vector<DefaultBoxGrid> grids;
  grids.reserve(strides.size());
  for (int s : strides) {
    if (s <= 0 || image_h % s != 0 || image_w % s != 0) {
      throw std::invalid_argument("generate_default_boxes: image " +
                                  std::to_string(image_h) + "x" + std::to_string(image_w) +
                                  " not divisible by stride " + std::to_string(s));
    }
    DefaultBoxGrid g;
    g.level_stride = s;
    g.grid_h = image_h / s;
    g.grid_w = image_w / s;
    g.scale_multipliers = multipliers;
    g.boxes.reserve(static_cast<size_t>(g.num_boxes()));
    for (int i = 0; i < g.grid_h; ++i) {
      for (int j = 0; j < g.grid_w; ++j) {
        const double cx = (j + 0.5) * s;
        const double cy = (i + 0.5) * s;
        for (double mult : multipliers) {
          const double side = anchor_scale * s * mult;
          g.boxes.push_back({cx, cy, side, side});
        }
      }
    }
    grids.push_back(std::move(g));
  }
  return grids;
}

std::vector<MatchResult> match(const std::vector<Box>& anchors,
                               const std::vector<GtBox>& gts, double threshold,
                               bool bipartite) {
  if (threshold <= 0.0 || threshold >= 1.0) {
    throw std::invalid_argument("match: threshold must lie in (0,1)");
  }
  std::vector<MatchResult> out(anchors.size());
  if (gts.empty()) return out;

  for (size_t i = 0; i < anchors.size(); ++i) {
    double best = 0.0;
    int best_gt = -1;
    for (size_t j = 0; j < gts.size(); ++j) {
      const double ov = iou(anchors[i], gts[j].box);
      if (ov > best) {
        best = ov;
        best_gt = static_cast<int>(j);
      }
    }
    if (best > threshold) {
      out[i].label = MatchResult::Label::positive;
      out[i].matched_gt = best_gt;
      out[i].class_id = gts[best_gt].class_id;
      out[i].target = encode(gts[best_gt].box, anchors[i]);
    }
  }

  if (bipartite) {
    for (size_t j = 0; j < gts.size(); ++j) {
      double best = 0.0;
      int best_anchor = -1;
      for (size_t i = 0; i < anchors.size(); ++i) {
        const double ov = iou(anchors[i], gts[j].box);
        if (ov > best) {
          best = ov;
          best_anchor = static_cast<int>(i);
        }
      }
      if (best_anchor >= 0 && best > 0.0) {
        auto& m = out[best_anchor];
        m.label = MatchResult::Label::positive;
        m.matched_gt = static_cast<int>(j);
        m.class_id = gts[j].class_id;
        m.target = encode(gts[j].box, anchors[best_anchor]);
      }
    }
  }
  return out;
}

std::vector<MatchResult> mine_hard_negatives(const std::vector<MatchResult>& matches,
                                             const std::vector<double>& per_anchor_cls_loss,
                                             double ratio) {
  if (ratio < 0.0) {
    throw std::invalid_argument("mine_hard_negatives: negative ratio");
  }
  if (matches.size() != per_anchor_cls_loss.size()) {
    throw std::invalid_argument("mine_hard_negatives: loss list size " +
                                std::to_string(per_anchor_cls_loss.size()) +
                                " does not match match list size " +
                                std::to_string(matches.size()));
  }
  size_t n_pos = 0;
  std::vector<int> negatives;
  for (size_t i = 0; i < matches.size(); ++i) {
    if (matches[i].label == MatchResult::Label::positive) {
      ++n_pos;
    } else if (matches[i].label == MatchResult::Label::negative) {
      negatives.push_back(static_cast<int>(i));
    }
  }
  const size_t keep =
      std::min(negatives.size(), static_cast<size_t>(ratio * static_cast<double>(n_pos)));

  std::vector<MatchResult> out = matches;
  if (keep < negatives.size()) {
    std::stable_sort(negatives.begin(), negatives.end(), [&](int a, int b) {
      return per_anchor_cls_loss[a] > per_anchor_cls_loss[b];
    });
    for (size_t r = keep; r < negatives.size(); ++r) {
      out[negatives[r]].label = MatchResult::Label::discarded;
    }
  }
  return out;
}

}  // namespace padet
