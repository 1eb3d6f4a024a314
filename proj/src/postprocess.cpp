#include "padet/postprocess.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace padet {

namespace {

void sort_by_score(std::vector<int>& order, const std::vector<Detection>& dets) {
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return dets[a].score > dets[b].score; });
}

}  // namespace

std::vector<Detection> decode_detections(const std::vector<ProposeOutput>& propose,
                                         const std::vector<AttendOutput>& attend,
                                         const std::vector<DefaultBoxGrid>& grids,
                                         const Head& head, int n,
                                         const DecodeOptions& opts) {
  if (attend.size() != grids.size()) {
    throw std::invalid_argument("decode_detections: level count mismatch");
  }
  if (!propose.empty() && propose.size() != grids.size()) {
    throw std::invalid_argument("decode_detections: propose/grid level count mismatch");
  }
  const int c = head.config().num_classes;
  const int a = head.config().anchors_per_cell;

  std::vector<Detection> candidates;
  std::vector<double> probs(static_cast<size_t>(c));
  for (size_t l = 0; l < grids.size(); ++l) {
    const DefaultBoxGrid& grid = grids[l];
    const std::vector<Box> adjusted =
        propose.empty() ? grid.boxes : head.adjust_boxes(propose[l], grid, n);
    const Tensor& logits = *attend[l].class_logits;
    const Tensor& deltas = *attend[l].deltas;
    for (int i = 0; i < grid.grid_h; ++i) {
      for (int j = 0; j < grid.grid_w; ++j) {
        for (int ai = 0; ai < a; ++ai) {
          double mx = -1e300;
          for (int cc = 0; cc < c; ++cc) {
            mx = std::max(mx, logits.at(n, ai * c + cc, i, j));
          }
          double sum = 0.0;
          for (int cc = 0; cc < c; ++cc) {
            probs[cc] = std::exp(logits.at(n, ai * c + cc, i, j) - mx);
            sum += probs[cc];
          }
          const size_t flat = (static_cast<size_t>(i) * grid.grid_w + j) * a + ai;
          bool decoded = false;
          Box final_box;
          for (int cc = 1; cc < c; ++cc) {
            const double score = probs[cc] / sum;
            if (score < opts.score_thresh) continue;
            if (!decoded) {
              const BoxDelta d{deltas.at(n, 4 * ai + 0, i, j),
                               deltas.at(n, 4 * ai + 1, i, j),
                               deltas.at(n, 4 * ai + 2, i, j),
                               deltas.at(n, 4 * ai + 3, i, j)};
              final_box = clamp_box(decode(d, adjusted[flat]), opts.img_w, opts.img_h);
              decoded = true;
            }
            candidates.push_back({final_box, cc - 1, score});
          }
        }
      }
    }
  }

  std::vector<int> order(candidates.size());
  sort_by_score(order, candidates);
  const size_t keep = std::min<size_t>(order.size(), static_cast<size_t>(opts.topk));
  std::vector<Detection> out;
  out.reserve(keep);
  for (size_t r = 0; r < keep; ++r) out.push_back(candidates[order[r]]);
  return out;
}

std::vector<Detection> nms(const std::vector<Detection>& dets, double iou_thresh) {
  std::vector<int> order(dets.size());
  sort_by_score(order, dets);
  std::vector<bool> suppressed(dets.size(), false);
  std::vector<Detection> out;
  for (size_t r = 0; r < order.size(); ++r) {
    const int i = order[r];
    if (suppressed[i]) continue;
    out.push_back(dets[i]);
    for (size_t q = r + 1; q < order.size(); ++q) {
      const int j = order[q];
      if (suppressed[j]) continue;
      if (iou(dets[i].box, dets[j].box) > iou_thresh) suppressed[j] = true;
    }
  }
  return out;
}

namespace {

template <typename Fn>
std::vector<Detection> apply_per_class(const std::vector<Detection>& dets, Fn&& fn) {
  int max_class = -1;
  for (const auto& d : dets) max_class = std::max(max_class, d.class_id);
  std::vector<Detection> out;
  for (int c = 0; c <= max_class; ++c) {
    std::vector<Detection> group;
    for (const auto& d : dets) {
      if (d.class_id == c) group.push_back(d);
    }
    if (group.empty()) continue;
    auto kept = fn(group);
    out.insert(out.end(), kept.begin(), kept.end());
  }
  std::stable_sort(out.begin(), out.end(),
                   [](const Detection& a, const Detection& b) { return a.score > b.score; });
  return out;
}

}  // namespace

std::vector<Detection> nms_per_class(const std::vector<Detection>& dets,
                                     double iou_thresh) {
  return apply_per_class(dets, [&](const std::vector<Detection>& g) {
    return nms(g, iou_thresh);
  });
}

SoftNmsMode soft_nms_mode_from_string(const std::string& name) {
  if (name == "linear") return SoftNmsMode::linear;
  if (name == "gaussian") return SoftNmsMode::gaussian;
  throw std::invalid_argument("soft_nms: unknown mode '" + name +
                              "' (expected linear or gaussian)");
}

std::vector<Detection> soft_nms(const std::vector<Detection>& dets,
                                const SoftNmsParams& params) {
  std::vector<Detection> pool = dets;
  std::vector<bool> done(pool.size(), false);
  std::vector<Detection> out;
  for (size_t round = 0; round < pool.size(); ++round) {
    int best = -1;
    for (size_t i = 0; i < pool.size(); ++i) {
      if (done[i]) continue;
      if (best < 0 || pool[i].score > pool[best].score) best = static_cast<int>(i);
    }
    if (best < 0) break;
    done[best] = true;
    out.push_back(pool[best]);
    for (size_t i = 0; i < pool.size(); ++i) {
      if (done[i]) continue;
      const double ov = iou(pool[best].box, pool[i].box);
      if (params.mode == SoftNmsMode::linear) {
        if (ov > params.iou_thresh) pool[i].score *= 1.0 - ov;
      } else {
        pool[i].score *= std::exp(-ov * ov / params.sigma);
      }
    }
  }
  std::vector<Detection> kept;
  for (const auto& d : out) {
    if (d.score >= params.score_floor) kept.push_back(d);
  }
  return kept;
}

std::vector<Detection> soft_nms_per_class(const std::vector<Detection>& dets,
                                          const SoftNmsParams& params) {
  return apply_per_class(dets, [&](const std::vector<Detection>& g) {
    return soft_nms(g, params);
  });
}

}  // namespace padet
