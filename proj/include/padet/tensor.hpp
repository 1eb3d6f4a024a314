#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

namespace padet {

using i64 = std::int64_t;

struct Shape4 {
  int n = 0, c = 0, h = 0, w = 0;

  i64 numel() const { return static_cast<i64>(n) * c * h * w; }
  bool operator==(const Shape4&) const = default;
  std::string str() const;
};

// Dense rank-4 tensor (batch, channel, height, width), row-major, doubles.
// The grad buffer stays empty until ensure_grad() allocates it.
class Tensor {
 public:
  Shape4 shape{};
  std::vector<double> v;
  std::vector<double> g;

  Tensor() = default;
  explicit Tensor(Shape4 s) : shape(s), v(static_cast<size_t>(s.numel()), 0.0) {}

  static Tensor zeros(Shape4 s) { return Tensor(s); }
  static Tensor full(Shape4 s, double value);

  i64 index(int n, int c, int y, int x) const {
    return ((static_cast<i64>(n) * shape.c + c) * shape.h + y) * shape.w + x;
  }
  double& at(int n, int c, int y, int x) { return v[index(n, c, y, x)]; }
  double at(int n, int c, int y, int x) const { return v[index(n, c, y, x)]; }

  bool has_grad() const { return !g.empty(); }
  void ensure_grad() {
    if (g.empty()) g.assign(v.size(), 0.0);
  }
  void zero_grad() {
    if (!g.empty()) g.assign(g.size(), 0.0);
  }
  void drop_grad() { g.clear(); }

  bool all_finite() const;
  // Throws std::runtime_error naming `what` if any value is non-finite.
  void require_finite(const std::string& what) const;
};

using TensorRef = std::shared_ptr<Tensor>;

inline TensorRef make_tensor(Shape4 s) { return std::make_shared<Tensor>(s); }
TensorRef make_scalar(double value);

// 4-neighbor bilinear interpolation at fractional (y, x) on map (n, c).
// Locations outside [0,H-1]x[0,W-1] contribute zero per neighbor.
double bilinear_sample(const Tensor& t, int n, int c, double y, double x);

// Per-anchor sampling displacements for the offseted convolution.
// Channel layout: anchor a, sampling point s -> (dy, dx) at channels
// (a*2K + 2s, a*2K + 2s + 1), all in feature-map cell units.
struct OffsetField {
  int points = 0;   // K = k*k sampling points per filter
  int anchors = 0;  // A anchors per cell
  TensorRef t;      // (N, 2*K*A, H, W)

  static OffsetField zeros(int n, int k, int anchors, int h, int w);

  int channel(int anchor, int point, int axis) const {
    return anchor * 2 * points + 2 * point + axis;
  }
  void validate() const;  // throws if channel count != 2*K*A
};

}  // namespace padet
