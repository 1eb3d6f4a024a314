#include "padet/tensor.hpp"

#include <cmath>
#include <stdexcept>

namespace padet {

std::string Shape4::str() const {
  return std::to_string(n) + "x" + std::to_string(c) + "x" + std::to_string(h) +
         "x" + std::to_string(w);
}

Tensor Tensor::full(Shape4 s, double value) {
  Tensor t(s);
  t.v.assign(t.v.size(), value);
  return t;
}

bool Tensor::all_finite() const {
  for (double x : v) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}

void Tensor::require_finite(const std::string& what) const {
  if (!all_finite()) {
    throw std::runtime_error("non-finite values in " + what + " (shape " + shape.str() + ")");
  }
}

TensorRef make_scalar(double value) {
  auto t = make_tensor({1, 1, 1, 1});
  t->v[0] = value;
  return t;
}

double bilinear_sample(const Tensor& t, int n, int c, double y, double x) {
  const int h = t.shape.h;
  const int w = t.shape.w;
  if (y <= -1.0 || y >= h || x <= -1.0 || x >= w) return 0.0;

  const int y0 = static_cast<int>(std::floor(y));
  const int x0 = static_cast<int>(std::floor(x));
  const int y1 = y0 + 1;
  const int x1 = x0 + 1;
  const double ly = y - y0;
  const double lx = x - x0;
  const double hy = 1.0 - ly;
  const double hx = 1.0 - lx;

  const double* base = &t.v[t.index(n, c, 0, 0)];
  double v00 = 0.0, v01 = 0.0, v10 = 0.0, v11 = 0.0;
  if (y0 >= 0 && x0 >= 0) v00 = base[y0 * w + x0];
  if (y0 >= 0 && x1 <= w - 1) v01 = base[y0 * w + x1];
  if (y1 <= h - 1 && x0 >= 0) v10 = base[y1 * w + x0];
  if (y1 <= h - 1 && x1 <= w - 1) v11 = base[y1 * w + x1];

  return hy * hx * v00 + hy * lx * v01 + ly * hx * v10 + ly * lx * v11;
}

OffsetField OffsetField::zeros(int n, int k, int anchors, int h, int w) {
  OffsetField f;
  f.points = k * k;
  f.anchors = anchors;
  f.t = make_tensor({n, 2 * f.points * anchors, h, w});
  return f;
}

void OffsetField::validate() const {
  if (!t) throw std::invalid_argument("OffsetField has no tensor");
  if (t->shape.c != 2 * points * anchors) {
    throw std::invalid_argument("OffsetField channel count " + std::to_string(t->shape.c) +
                                " != 2*K*A = " + std::to_string(2 * points * anchors));
  }
}

}  // namespace padet
