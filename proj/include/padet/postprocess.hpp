#pragma once

#include <string>
#include <vector>

#include "padet/head.hpp"

namespace padet {

// Final scored detection; class_id indexes object classes (background excluded).
struct Detection {
  Box box;
  int class_id = 0;
  double score = 0.0;
};

struct DecodeOptions {
  double score_thresh = 0.01;
  int topk = 200;
  double img_w = 0.0;
  double img_h = 0.0;
};

// Decoding chain for one image: adjusted = decode(clip(propose), default),
// final box = decode(attend_delta, adjusted), softmax scores, score filter,
// top-k. With no proposing outputs (plain head) the adjusted boxes are the
// defaults themselves. Result is sorted by descending score.
std::vector<Detection> decode_detections(const std::vector<ProposeOutput>& propose,
                                         const std::vector<AttendOutput>& attend,
                                         const std::vector<DefaultBoxGrid>& grids,
                                         const Head& head, int n,
                                         const DecodeOptions& opts);

// Greedy descending-score suppression over one candidate set (callers group
// by class); ties break toward the lower index.
std::vector<Detection> nms(const std::vector<Detection>& dets, double iou_thresh = 0.45);

std::vector<Detection> nms_per_class(const std::vector<Detection>& dets,
                                     double iou_thresh = 0.45);

enum class SoftNmsMode { linear, gaussian };

SoftNmsMode soft_nms_mode_from_string(const std::string& name);

struct SoftNmsParams {
  SoftNmsMode mode = SoftNmsMode::linear;
  double iou_thresh = 0.3;  // linear mode decay threshold
  double sigma = 0.5;       // gaussian mode
  double score_floor = 0.01;
};

// Iterative score decay over one candidate set, re-thresholded at the floor.
std::vector<Detection> soft_nms(const std::vector<Detection>& dets,
                                const SoftNmsParams& params);

std::vector<Detection> soft_nms_per_class(const std::vector<Detection>& dets,
                                          const SoftNmsParams& params);

}  // namespace padet
