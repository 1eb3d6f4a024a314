#pragma once

#include <algorithm>
#include <cmath>

namespace padet {

// Center-size geometry in image pixels.
struct Box {
  double cx = 0.0, cy = 0.0, w = 0.0, h = 0.0;

  double x_min() const { return cx - 0.5 * w; }
  double x_max() const { return cx + 0.5 * w; }
  double y_min() const { return cy - 0.5 * h; }
  double y_max() const { return cy + 0.5 * h; }
  double area() const { return w * h; }
};

// Dimensionless center offsets plus log-scale size ratios.
struct BoxDelta {
  double dx = 0.0, dy = 0.0, dw = 0.0, dh = 0.0;
};

// Intersection over union, in [0, 1].
inline double iou(const Box& a, const Box& b) {
  const double ix = std::min(a.x_max(), b.x_max()) - std::max(a.x_min(), b.x_min());
  const double iy = std::min(a.y_max(), b.y_max()) - std::max(a.y_min(), b.y_min());
  if (ix <= 0.0 || iy <= 0.0) return 0.0;
  const double inter = ix * iy;
  return inter / (a.area() + b.area() - inter);
}

// Offsets of ground truth g relative to reference box b.
inline BoxDelta encode(const Box& g, const Box& b) {
  return {(g.cx - b.cx) / b.w, (g.cy - b.cy) / b.h, std::log(g.w / b.w),
          std::log(g.h / b.h)};
}

// Exact inverse of encode.
inline Box decode(const BoxDelta& d, const Box& b) {
  return {b.cx + d.dx * b.w, b.cy + d.dy * b.h, b.w * std::exp(d.dw),
          b.h * std::exp(d.dh)};
}

// Bounds the center components so the decoded center stays within half a
// cell stride of the reference box center; size components pass through.
inline BoxDelta clip_delta(const BoxDelta& d, const Box& b, double stride_x,
                           double stride_y) {
  return {std::tanh(d.dx) * stride_x / (2.0 * b.w),
          std::tanh(d.dy) * stride_y / (2.0 * b.h), d.dw, d.dh};
}

// Clamps a box to the image rectangle [0,w]x[0,h], preserving validity.
inline Box clamp_box(const Box& b, double img_w, double img_h) {
  const double x0 = std::clamp(b.x_min(), 0.0, img_w);
  const double x1 = std::clamp(b.x_max(), 0.0, img_w);
  const double y0 = std::clamp(b.y_min(), 0.0, img_h);
  const double y1 = std::clamp(b.y_max(), 0.0, img_h);
  return {0.5 * (x0 + x1), 0.5 * (y0 + y1), std::max(x1 - x0, 1e-9),
          std::max(y1 - y0, 1e-9)};
}

}  // namespace padet
