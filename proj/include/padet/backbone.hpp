#pragma once

#include <vector>

#include "padet/layers.hpp"

namespace padet {

struct BackboneConfig {
  std::vector<int> strides{8, 16, 32, 64};  // strictly increasing, each a multiple
  int stem_channels = 16;
  int fpn_channels = 256;
  bool use_batch_norm = true;
};

struct PyramidFeature {
  int level_stride = 0;
  TensorRef tensor;  // (N, C_fpn, H/stride, W/stride)
};

// Small strided conv stack producing one bottom-up map per configured stride.
class Backbone {
 public:
  Backbone() = default;
  Backbone(const BackboneConfig& cfg, std::vector<ParamRef>& registry);

  // Returns maps ordered fine -> coarse, one per configured stride.
  std::vector<TensorRef> forward(Tape* tape, const TensorRef& image, bool training);

  void init(Rng& rng);

  const std::vector<int>& out_channels() const { return out_channels_; }

  std::vector<ConvBlock> layers;

 private:
  BackboneConfig cfg_;
  std::vector<int> emit_after_;  // layer index after which each stride's map is taken
  std::vector<int> out_channels_;
};

// Top-down pathway: 1x1 laterals onto a shared channel width, nearest-neighbor
// 2x upsampling merged by addition, then a 3x3 smoothing conv per level.
class Fpn {
 public:
  Fpn() = default;
  Fpn(const BackboneConfig& cfg, const std::vector<int>& in_channels,
      std::vector<ParamRef>& registry);

  std::vector<PyramidFeature> forward(Tape* tape, const std::vector<TensorRef>& bottom_up,
                                      bool training);

  void init(Rng& rng);

  std::vector<ConvBlock> lateral;
  std::vector<ConvBlock> smooth;

 private:
  BackboneConfig cfg_;
};

}  // namespace padet
