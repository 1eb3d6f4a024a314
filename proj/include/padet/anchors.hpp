#pragma once

#include <vector>

#include "padet/box.hpp"

namespace padet {

// Lattice of A default boxes per feature-map cell at one pyramid level.
// boxes are ordered cell-major then anchor-index: (i*grid_w + j)*A + a,
// centered at ((j+0.5)*stride, (i+0.5)*stride) with side
// anchor_scale*stride*multiplier and aspect ratio 1:1.
struct DefaultBoxGrid {
  int level_stride = 0;
  int grid_h = 0, grid_w = 0;
  std::vector<double> scale_multipliers;
  std::vector<Box> boxes;

  int anchors_per_cell() const { return static_cast<int>(scale_multipliers.size()); }
  int num_boxes() const { return grid_h * grid_w * anchors_per_cell(); }
};

std::vector<DefaultBoxGrid> generate_default_boxes(const std::vector<int>& strides,
                                                   int image_h, int image_w,
                                                   const std::vector<double>& multipliers,
                                                   double anchor_scale = 4.0);

struct GtBox {
  Box box;
  int class_id = 0;  // dataset class in [0, C-2]; background is not annotated
};

struct MatchResult {
  enum class Label { positive, negative, discarded };
  Label label = Label::negative;
  int class_id = -1;    // gt class for positives
  int matched_gt = -1;  // index into the gt list for positives
  BoxDelta target{};    // encode(gt, anchor) for positives
};

// Threshold assignment: an anchor is positive iff its best IoU over gts
// exceeds `threshold`, matched to the argmax gt (ties to the lower index).
// `bipartite` additionally forces each gt's single best anchor positive.
std::vector<MatchResult> match(const std::vector<Box>& anchors,
                               const std::vector<GtBox>& gts, double threshold = 0.5,
                               bool bipartite = false);

// Keeps all positives plus the floor(ratio * n_pos) highest-loss negatives
// (ties to the lower index); every other negative becomes discarded.
std::vector<MatchResult> mine_hard_negatives(const std::vector<MatchResult>& matches,
                                             const std::vector<double>& per_anchor_cls_loss,
                                             double ratio = 3.0);

}  // namespace padet
