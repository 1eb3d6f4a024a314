#pragma once

#include <vector>

#include "padet/anchors.hpp"
#include "padet/backbone.hpp"
#include "padet/layers.hpp"

namespace padet {

struct HeadConfig {
  int fpn_channels = 256;
  int num_classes = 21;      // C, background included
  int anchors_per_cell = 3;  // A
  int kernel = 3;            // k of the head convolutions
  bool propose_enabled = true;
  bool propose_clip = true;
  bool attend_adaptive = true;  // offseted convolution vs fixed sampling grid
  int attend_dilation = 1;      // dilation when the sampling grid is fixed
  bool offset_gradients = false;
};

// First stage: binary objectness (2A channels as (bg,fg) per anchor) and raw
// box deltas (4A channels as (dx,dy,dw,dh) per anchor).
struct ProposeOutput {
  TensorRef objectness;
  TensorRef deltas;
};

// Second stage: per-anchor class logits (C*A channels, background first) and
// box deltas relative to the adjusted boxes (4A channels).
struct AttendOutput {
  TensorRef class_logits;
  TensorRef deltas;
};

// The two-step prediction module. One parameter set is shared across all
// pyramid levels; the attending weights serve all anchors through channel
// blocks.
class Head {
 public:
  Head() = default;
  Head(const HeadConfig& cfg, std::vector<ParamRef>& registry);

  const HeadConfig& config() const { return cfg_; }

  ProposeOutput propose(Tape* tape, const PyramidFeature& feature, bool training);

  // Decodes the (optionally clipped) proposing deltas of image n against the
  // default boxes; output follows the grid ordering.
  std::vector<Box> adjust_boxes(const ProposeOutput& propose, const DefaultBoxGrid& grid,
                                int n) const;

  // Sampling displacements that spread the k x k filter grid over each
  // adjusted box, in feature-map cell units. Parameter-free.
  static OffsetField compute_offsets(const std::vector<Box>& adjusted,
                                     const DefaultBoxGrid& grid, int k = 3);

  // Batched offset field straight from the proposing deltas. With a tape and
  // offset gradients enabled, backward flows into the deltas.
  OffsetField offsets_from_proposals(Tape* tape, const ProposeOutput& propose,
                                     const DefaultBoxGrid& grid) const;

  AttendOutput attend(Tape* tape, const PyramidFeature& feature,
                      const OffsetField& offsets, bool training);

  void init(Rng& rng);

  ConvBlock obj_conv, preg_conv;  // proposing process (absent in plain mode)
  ConvBlock cls_conv, areg_conv;  // attending / plain prediction convs

 private:
  HeadConfig cfg_;
};

}  // namespace padet
