#include "padet/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace padet {

namespace {

int div_floor(int a, int b) {
  int q = a / b;
  int r = a % b;
  if (r != 0 && ((r < 0) != (b < 0))) --q;
  return q;
}

int div_ceil(int a, int b) { return -div_floor(-a, b); }

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (!(a.shape == b.shape)) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + a.shape.str() +
                                " vs " + b.shape.str());
  }
}

}  // namespace

void Tape::backward(const TensorRef& loss) {
  if (steps_.empty()) {
    throw std::runtime_error("backward requires a recorded forward pass (tape is empty)");
  }
  if (loss->shape.numel() != 1) {
    throw std::invalid_argument("backward expects a scalar loss, got shape " +
                                loss->shape.str());
  }
  loss->ensure_grad();
  loss->g[0] += 1.0;
  for (auto it = steps_.rbegin(); it != steps_.rend(); ++it) (*it)();
  steps_.clear();
}

void sgd_step(const std::vector<ParamRef>& params, double lr, double momentum,
              double weight_decay) {
  for (const auto& p : params) {
    if (!p->tensor->has_grad()) {
      throw std::runtime_error("sgd_step: parameter '" + p->name + "' has no gradient");
    }
  }
  for (const auto& p : params) {
    auto& value = p->tensor->v;
    auto& grad = p->tensor->g;
    auto& vel = p->momentum;
    for (size_t i = 0; i < value.size(); ++i) {
      vel[i] = momentum * vel[i] + grad[i] + weight_decay * value[i];
      value[i] -= lr * vel[i];
    }
    p->tensor->drop_grad();
  }
}

TensorRef conv2d(Tape* tape, const TensorRef& input, const TensorRef& weight,
                 const TensorRef& bias, int stride, int pad, int dilation) {
  const Shape4 xs = input->shape;
  const Shape4 ws = weight->shape;
  if (ws.h != ws.w || ws.h % 2 == 0) {
    throw std::invalid_argument("conv2d: kernel must be square with odd size, got " +
                                ws.str());
  }
  if (xs.c != ws.c) {
    throw std::invalid_argument("conv2d: input channels " + xs.str() +
                                " do not match weight " + ws.str());
  }
  if (bias && bias->shape.c != ws.n) {
    throw std::invalid_argument("conv2d: bias shape " + bias->shape.str() +
                                " does not match Cout of weight " + ws.str());
  }
  if (stride < 1 || dilation < 1 || pad < 0) {
    throw std::invalid_argument("conv2d: invalid stride/pad/dilation");
  }
  const int k = ws.h;
  const int ho = (xs.h + 2 * pad - dilation * (k - 1) - 1) / stride + 1;
  const int wo = (xs.w + 2 * pad - dilation * (k - 1) - 1) / stride + 1;
  if (ho < 1 || wo < 1) {
    throw std::invalid_argument("conv2d: kernel does not fit input " + xs.str());
  }

  auto out = make_tensor({xs.n, ws.n, ho, wo});
  const int cin = xs.c, cout = ws.n;

  for (int n = 0; n < xs.n; ++n) {
    for (int co = 0; co < cout; ++co) {
      double* out_map = &out->v[out->index(n, co, 0, 0)];
      if (bias) {
        const double b = bias->v[co];
        std::fill(out_map, out_map + static_cast<size_t>(ho) * wo, b);
      }
      for (int ci = 0; ci < cin; ++ci) {
        const double* in_map = &input->v[input->index(n, ci, 0, 0)];
        for (int ky = 0; ky < k; ++ky) {
          for (int kx = 0; kx < k; ++kx) {
            const double wv = weight->at(co, ci, ky, kx);
            if (wv == 0.0) continue;
            const int off_x = kx * dilation - pad;
            const int lo = std::max(0, div_ceil(-off_x, stride));
            const int hi = std::min(wo - 1, div_floor(xs.w - 1 - off_x, stride));
            for (int oy = 0; oy < ho; ++oy) {
              const int iy = oy * stride - pad + ky * dilation;
              if (iy < 0 || iy >= xs.h) continue;
              const double* in_row = in_map + static_cast<size_t>(iy) * xs.w;
              double* out_row = out_map + static_cast<size_t>(oy) * wo;
              for (int ox = lo; ox <= hi; ++ox) {
                out_row[ox] += wv * in_row[ox * stride + off_x];
              }
            }
          }
        }
      }
    }
  }

  if (tape) {
    tape->record([input, weight, bias, out, stride, pad, dilation, k]() {
      if (!out->has_grad()) return;
      const Shape4 xs = input->shape;
      const int cin = xs.c, cout = weight->shape.n;
      const int ho = out->shape.h, wo = out->shape.w;
      input->ensure_grad();
      weight->ensure_grad();
      if (bias) {
        bias->ensure_grad();
        for (int n = 0; n < xs.n; ++n) {
          for (int co = 0; co < cout; ++co) {
            const double* go = &out->g[out->index(n, co, 0, 0)];
            double acc = 0.0;
            for (i64 i = 0; i < static_cast<i64>(ho) * wo; ++i) acc += go[i];
            bias->g[co] += acc;
          }
        }
      }
      for (int n = 0; n < xs.n; ++n) {
        for (int co = 0; co < cout; ++co) {
          const double* go_map = &out->g[out->index(n, co, 0, 0)];
          for (int ci = 0; ci < cin; ++ci) {
            const double* in_map = &input->v[input->index(n, ci, 0, 0)];
            double* gin_map = &input->g[input->index(n, ci, 0, 0)];
            for (int ky = 0; ky < k; ++ky) {
              for (int kx = 0; kx < k; ++kx) {
                const double wv = weight->at(co, ci, ky, kx);
                double wacc = 0.0;
                const int off_x = kx * dilation - pad;
                const int lo = std::max(0, div_ceil(-off_x, stride));
                const int hi = std::min(wo - 1, div_floor(xs.w - 1 - off_x, stride));
                for (int oy = 0; oy < ho; ++oy) {
                  const int iy = oy * stride - pad + ky * dilation;
                  if (iy < 0 || iy >= xs.h) continue;
                  const double* in_row = in_map + static_cast<size_t>(iy) * xs.w;
                  double* gin_row = gin_map + static_cast<size_t>(iy) * xs.w;
                  const double* go_row = go_map + static_cast<size_t>(oy) * wo;
                  for (int ox = lo; ox <= hi; ++ox) {
                    const double gy = go_row[ox];
                    wacc += gy * in_row[ox * stride + off_x];
                    gin_row[ox * stride + off_x] += wv * gy;
                  }
                }
                weight->g[weight->index(co, ci, ky, kx)] += wacc;
              }
            }
          }
        }
      }
    });
  }
  return out;
}

namespace {

// Gathers the bilinear sample matrix for one image and one anchor:
// col[(cin*K + s) * HW + pos], sampling at the offseted filter locations.
void gather_columns(const Tensor& input, const OffsetField& offsets, int n,
                    int anchor, int k, std::vector<double>& col) {
  const int cin = input.shape.c;
  const int h = input.shape.h, w = input.shape.w;
  const int pad = k / 2;
  const int kk = k * k;
  const i64 hw = static_cast<i64>(h) * w;
  col.assign(static_cast<size_t>(cin) * kk * hw, 0.0);

  for (int s = 0; s < kk; ++s) {
    const int ky = s / k, kx = s % k;
    const double* off_y = &offsets.t->v[offsets.t->index(n, offsets.channel(anchor, s, 0), 0, 0)];
    const double* off_x = &offsets.t->v[offsets.t->index(n, offsets.channel(anchor, s, 1), 0, 0)];
    for (int oy = 0; oy < h; ++oy) {
      for (int ox = 0; ox < w; ++ox) {
        const i64 pos = static_cast<i64>(oy) * w + ox;
        const double sy = oy - pad + ky + off_y[pos];
        const double sx = ox - pad + kx + off_x[pos];
        if (sy <= -1.0 || sy >= h || sx <= -1.0 || sx >= w) continue;
        const int y0 = static_cast<int>(std::floor(sy));
        const int x0 = static_cast<int>(std::floor(sx));
        const double ly = sy - y0, lx = sx - x0;
        const double hy = 1.0 - ly, hx = 1.0 - lx;
        const bool i00 = y0 >= 0 && x0 >= 0;
        const bool i01 = y0 >= 0 && x0 + 1 <= w - 1;
        const bool i10 = y0 + 1 <= h - 1 && x0 >= 0;
        const bool i11 = y0 + 1 <= h - 1 && x0 + 1 <= w - 1;
        for (int ci = 0; ci < cin; ++ci) {
          const double* base = &input.v[input.index(n, ci, 0, 0)];
          double acc = 0.0;
          if (i00) acc += hy * hx * base[y0 * w + x0];
          if (i01) acc += hy * lx * base[y0 * w + x0 + 1];
          if (i10) acc += ly * hx * base[(y0 + 1) * w + x0];
          if (i11) acc += ly * lx * base[(y0 + 1) * w + x0 + 1];
          col[(static_cast<size_t>(ci) * kk + s) * hw + pos] = acc;
        }
      }
    }
  }
}

}  // namespace

TensorRef offset_conv2d(Tape* tape, const TensorRef& input, const TensorRef& weight,
                        const TensorRef& bias, const OffsetField& offsets,
                        int anchor_index, bool offset_grads) {
  const Shape4 xs = input->shape;
  const Shape4 ws = weight->shape;
  if (ws.h != ws.w || ws.h % 2 == 0) {
    throw std::invalid_argument("offset_conv2d: kernel must be square with odd size, got " +
                                ws.str());
  }
  if (xs.c != ws.c) {
    throw std::invalid_argument("offset_conv2d: input channels " + xs.str() +
                                " do not match weight " + ws.str());
  }
  offsets.validate();
  const int k = ws.h;
  if (offsets.points != k * k) {
    throw std::invalid_argument("offset_conv2d: offsets carry " +
                                std::to_string(offsets.points) + " points but kernel has " +
                                std::to_string(k * k));
  }
  if (anchor_index < 0 || anchor_index >= offsets.anchors) {
    throw std::invalid_argument("offset_conv2d: anchor index " +
                                std::to_string(anchor_index) + " out of range A=" +
                                std::to_string(offsets.anchors));
  }
  if (offsets.t->shape.n != xs.n || offsets.t->shape.h != xs.h ||
      offsets.t->shape.w != xs.w) {
    throw std::invalid_argument("offset_conv2d: offsets shape " + offsets.t->shape.str() +
                                " inconsistent with input " + xs.str());
  }

  const int cin = xs.c, cout = ws.n, kk = k * k;
  const i64 hw = static_cast<i64>(xs.h) * xs.w;
  auto out = make_tensor({xs.n, cout, xs.h, xs.w});

  std::vector<double> col;
  for (int n = 0; n < xs.n; ++n) {
    gather_columns(*input, offsets, n, anchor_index, k, col);
    for (int co = 0; co < cout; ++co) {
      double* out_map = &out->v[out->index(n, co, 0, 0)];
      if (bias) {
        const double b = bias->v[co];
        std::fill(out_map, out_map + hw, b);
      }
      const double* wrow = &weight->v[static_cast<size_t>(co) * cin * kk];
      for (int r = 0; r < cin * kk; ++r) {
        const double wv = wrow[r];
        if (wv == 0.0) continue;
        const double* col_row = &col[static_cast<size_t>(r) * hw];
        for (i64 p = 0; p < hw; ++p) out_map[p] += wv * col_row[p];
      }
    }
  }

  if (tape) {
    OffsetField off_copy = offsets;
    tape->record([input, weight, bias, out, off_copy, anchor_index, k, offset_grads]() {
      if (!out->has_grad()) return;
      const Shape4 xs = input->shape;
      const int cin = xs.c, cout = weight->shape.n, kk = k * k;
      const int h = xs.h, w = xs.w, pad = k / 2;
      const i64 hw = static_cast<i64>(h) * w;
      input->ensure_grad();
      weight->ensure_grad();
      if (bias) bias->ensure_grad();
      if (offset_grads) off_copy.t->ensure_grad();

      std::vector<double> col, dcol;
      for (int n = 0; n < xs.n; ++n) {
        gather_columns(*input, off_copy, n, anchor_index, k, col);
        dcol.assign(col.size(), 0.0);
        for (int co = 0; co < cout; ++co) {
          const double* go = &out->g[out->index(n, co, 0, 0)];
          if (bias) {
            double acc = 0.0;
            for (i64 p = 0; p < hw; ++p) acc += go[p];
            bias->g[co] += acc;
          }
          const double* wrow = &weight->v[static_cast<size_t>(co) * cin * kk];
          double* gwrow = &weight->g[static_cast<size_t>(co) * cin * kk];
          for (int r = 0; r < cin * kk; ++r) {
            const double* col_row = &col[static_cast<size_t>(r) * hw];
            double* dcol_row = &dcol[static_cast<size_t>(r) * hw];
            const double wv = wrow[r];
            double wacc = 0.0;
            for (i64 p = 0; p < hw; ++p) {
              wacc += go[p] * col_row[p];
              dcol_row[p] += wv * go[p];
            }
            gwrow[r] += wacc;
          }
        }

        // Scatter column grads through the bilinear weights.
        for (int s = 0; s < kk; ++s) {
          const int ky = s / k, kx = s % k;
          const int ch_y = off_copy.channel(anchor_index, s, 0);
          const int ch_x = off_copy.channel(anchor_index, s, 1);
          const double* off_y = &off_copy.t->v[off_copy.t->index(n, ch_y, 0, 0)];
          const double* off_x = &off_copy.t->v[off_copy.t->index(n, ch_x, 0, 0)];
          double* goff_y = offset_grads ? &off_copy.t->g[off_copy.t->index(n, ch_y, 0, 0)] : nullptr;
          double* goff_x = offset_grads ? &off_copy.t->g[off_copy.t->index(n, ch_x, 0, 0)] : nullptr;
          for (int oy = 0; oy < h; ++oy) {
            for (int ox = 0; ox < w; ++ox) {
              const i64 pos = static_cast<i64>(oy) * w + ox;
              const double sy = oy - pad + ky + off_y[pos];
              const double sx = ox - pad + kx + off_x[pos];
              if (sy <= -1.0 || sy >= h || sx <= -1.0 || sx >= w) continue;
              const int y0 = static_cast<int>(std::floor(sy));
              const int x0 = static_cast<int>(std::floor(sx));
              const double ly = sy - y0, lx = sx - x0;
              const double hy = 1.0 - ly, hx = 1.0 - lx;
              const bool i00 = y0 >= 0 && x0 >= 0;
              const bool i01 = y0 >= 0 && x0 + 1 <= w - 1;
              const bool i10 = y0 + 1 <= h - 1 && x0 >= 0;
              const bool i11 = y0 + 1 <= h - 1 && x0 + 1 <= w - 1;
              double acc_dy = 0.0, acc_dx = 0.0;
              for (int ci = 0; ci < cin; ++ci) {
                const double g = dcol[(static_cast<size_t>(ci) * kk + s) * hw + pos];
                if (g == 0.0) continue;
                double* gbase = &input->g[input->index(n, ci, 0, 0)];
                if (i00) gbase[y0 * w + x0] += g * hy * hx;
                if (i01) gbase[y0 * w + x0 + 1] += g * hy * lx;
                if (i10) gbase[(y0 + 1) * w + x0] += g * ly * hx;
                if (i11) gbase[(y0 + 1) * w + x0 + 1] += g * ly * lx;
                if (offset_grads) {
                  const double* base = &input->v[input->index(n, ci, 0, 0)];
                  const double v00 = i00 ? base[y0 * w + x0] : 0.0;
                  const double v01 = i01 ? base[y0 * w + x0 + 1] : 0.0;
                  const double v10 = i10 ? base[(y0 + 1) * w + x0] : 0.0;
                  const double v11 = i11 ? base[(y0 + 1) * w + x0 + 1] : 0.0;
                  acc_dy += g * (hx * (v10 - v00) + lx * (v11 - v01));
                  acc_dx += g * (hy * (v01 - v00) + ly * (v11 - v10));
                }
              }
              if (offset_grads) {
                goff_y[pos] += acc_dy;
                goff_x[pos] += acc_dx;
              }
            }
          }
        }
      }
    });
  }
  return out;
}

TensorRef relu(Tape* tape, const TensorRef& x) {
  auto out = make_tensor(x->shape);
  for (size_t i = 0; i < x->v.size(); ++i) out->v[i] = x->v[i] > 0.0 ? x->v[i] : 0.0;
  if (tape) {
    tape->record([x, out]() {
      if (!out->has_grad()) return;
      x->ensure_grad();
      for (size_t i = 0; i < x->v.size(); ++i) {
        if (x->v[i] > 0.0) x->g[i] += out->g[i];
      }
    });
  }
  return out;
}

TensorRef add(Tape* tape, const TensorRef& a, const TensorRef& b) {
  check_same_shape(*a, *b, "add");
  auto out = make_tensor(a->shape);
  for (size_t i = 0; i < a->v.size(); ++i) out->v[i] = a->v[i] + b->v[i];
  if (tape) {
    tape->record([a, b, out]() {
      if (!out->has_grad()) return;
      a->ensure_grad();
      b->ensure_grad();
      for (size_t i = 0; i < out->g.size(); ++i) {
        a->g[i] += out->g[i];
        b->g[i] += out->g[i];
      }
    });
  }
  return out;
}

TensorRef scale(Tape* tape, const TensorRef& x, double k) {
  auto out = make_tensor(x->shape);
  for (size_t i = 0; i < x->v.size(); ++i) out->v[i] = k * x->v[i];
  if (tape) {
    tape->record([x, out, k]() {
      if (!out->has_grad()) return;
      x->ensure_grad();
      for (size_t i = 0; i < out->g.size(); ++i) x->g[i] += k * out->g[i];
    });
  }
  return out;
}

TensorRef upsample_nearest_2x(Tape* tape, const TensorRef& x) {
  const Shape4 s = x->shape;
  auto out = make_tensor({s.n, s.c, s.h * 2, s.w * 2});
  for (int n = 0; n < s.n; ++n) {
    for (int c = 0; c < s.c; ++c) {
      for (int y = 0; y < s.h; ++y) {
        const double* in_row = &x->v[x->index(n, c, y, 0)];
        double* r0 = &out->v[out->index(n, c, 2 * y, 0)];
        double* r1 = &out->v[out->index(n, c, 2 * y + 1, 0)];
        for (int xx = 0; xx < s.w; ++xx) {
          r0[2 * xx] = r0[2 * xx + 1] = r1[2 * xx] = r1[2 * xx + 1] = in_row[xx];
        }
      }
    }
  }
  if (tape) {
    tape->record([x, out]() {
      if (!out->has_grad()) return;
      x->ensure_grad();
      const Shape4 s = x->shape;
      for (int n = 0; n < s.n; ++n) {
        for (int c = 0; c < s.c; ++c) {
          for (int y = 0; y < s.h; ++y) {
            double* gin = &x->g[x->index(n, c, y, 0)];
            const double* g0 = &out->g[out->index(n, c, 2 * y, 0)];
            const double* g1 = &out->g[out->index(n, c, 2 * y + 1, 0)];
            for (int xx = 0; xx < s.w; ++xx) {
              gin[xx] += g0[2 * xx] + g0[2 * xx + 1] + g1[2 * xx] + g1[2 * xx + 1];
            }
          }
        }
      }
    });
  }
  return out;
}

TensorRef reduce_sum(Tape* tape, const TensorRef& x) {
  auto out = make_scalar(0.0);
  double acc = 0.0;
  for (double v : x->v) acc += v;
  out->v[0] = acc;
  if (tape) {
    tape->record([x, out]() {
      if (!out->has_grad()) return;
      x->ensure_grad();
      const double g = out->g[0];
      for (size_t i = 0; i < x->g.size(); ++i) x->g[i] += g;
    });
  }
  return out;
}

TensorRef slice_out_channels(Tape* tape, const TensorRef& w, int begin, int count) {
  const Shape4 s = w->shape;
  if (begin < 0 || count < 1 || begin + count > s.n) {
    throw std::invalid_argument("slice_out_channels: range [" + std::to_string(begin) +
                                ", " + std::to_string(begin + count) + ") out of " +
                                s.str());
  }
  auto out = make_tensor({count, s.c, s.h, s.w});
  const i64 row = static_cast<i64>(s.c) * s.h * s.w;
  std::copy(w->v.begin() + begin * row, w->v.begin() + (begin + count) * row,
            out->v.begin());
  if (tape) {
    tape->record([w, out, begin, row]() {
      if (!out->has_grad()) return;
      w->ensure_grad();
      const i64 n = static_cast<i64>(out->g.size());
      for (i64 i = 0; i < n; ++i) w->g[begin * row + i] += out->g[i];
    });
  }
  return out;
}

TensorRef slice_bias(Tape* tape, const TensorRef& b, int begin, int count) {
  const Shape4 s = b->shape;
  if (s.n != 1 || s.h != 1 || s.w != 1 || begin < 0 || count < 1 || begin + count > s.c) {
    throw std::invalid_argument("slice_bias: range [" + std::to_string(begin) + ", " +
                                std::to_string(begin + count) + ") invalid for " +
                                s.str());
  }
  auto out = make_tensor({1, count, 1, 1});
  std::copy(b->v.begin() + begin, b->v.begin() + begin + count, out->v.begin());
  if (tape) {
    tape->record([b, out, begin, count]() {
      if (!out->has_grad()) return;
      b->ensure_grad();
      for (int i = 0; i < count; ++i) b->g[begin + i] += out->g[i];
    });
  }
  return out;
}

TensorRef concat_channels(Tape* tape, const std::vector<TensorRef>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_channels: no inputs");
  const Shape4 first = parts[0]->shape;
  int total_c = 0;
  for (const auto& p : parts) {
    if (p->shape.n != first.n || p->shape.h != first.h || p->shape.w != first.w) {
      throw std::invalid_argument("concat_channels: spatial/batch mismatch " +
                                  p->shape.str() + " vs " + first.str());
    }
    total_c += p->shape.c;
  }
  auto out = make_tensor({first.n, total_c, first.h, first.w});
  const i64 hw = static_cast<i64>(first.h) * first.w;
  for (int n = 0; n < first.n; ++n) {
    i64 ch_base = 0;
    for (const auto& p : parts) {
      const i64 block = static_cast<i64>(p->shape.c) * hw;
      std::copy(p->v.begin() + n * block, p->v.begin() + (n + 1) * block,
                out->v.begin() + out->index(n, static_cast<int>(ch_base), 0, 0));
      ch_base += p->shape.c;
    }
  }
  if (tape) {
    tape->record([parts, out, hw]() {
      if (!out->has_grad()) return;
      const int nn = out->shape.n;
      for (const auto& p : parts) p->ensure_grad();
      for (int n = 0; n < nn; ++n) {
        i64 ch_base = 0;
        for (const auto& p : parts) {
          const i64 block = static_cast<i64>(p->shape.c) * hw;
          const double* src = &out->g[out->index(n, static_cast<int>(ch_base), 0, 0)];
          double* dst = &p->g[n * block];
          for (i64 i = 0; i < block; ++i) dst[i] += src[i];
          ch_base += p->shape.c;
        }
      }
    });
  }
  return out;
}

TensorRef batch_norm(Tape* tape, const TensorRef& x, const TensorRef& gamma,
                     const TensorRef& beta, std::vector<double>& running_mean,
                     std::vector<double>& running_var, bool training, double momentum,
                     double eps) {
  const Shape4 s = x->shape;
  const int c = s.c;
  if (gamma->shape.c != c || beta->shape.c != c ||
      static_cast<int>(running_mean.size()) != c ||
      static_cast<int>(running_var.size()) != c) {
    throw std::invalid_argument("batch_norm: parameter sizes do not match channels of " +
                                s.str());
  }
  const i64 m = static_cast<i64>(s.n) * s.h * s.w;
  auto out = make_tensor(s);
  auto mean = std::make_shared<std::vector<double>>(c, 0.0);
  auto invstd = std::make_shared<std::vector<double>>(c, 0.0);

  for (int ci = 0; ci < c; ++ci) {
    double mu, var;
    if (training) {
      double sum = 0.0;
      for (int n = 0; n < s.n; ++n) {
        const double* map = &x->v[x->index(n, ci, 0, 0)];
        for (i64 i = 0; i < static_cast<i64>(s.h) * s.w; ++i) sum += map[i];
      }
      mu = sum / m;
      double sq = 0.0;
      for (int n = 0; n < s.n; ++n) {
        const double* map = &x->v[x->index(n, ci, 0, 0)];
        for (i64 i = 0; i < static_cast<i64>(s.h) * s.w; ++i) {
          const double d = map[i] - mu;
          sq += d * d;
        }
      }
      var = sq / m;
      running_mean[ci] = (1.0 - momentum) * running_mean[ci] + momentum * mu;
      const double unbiased = m > 1 ? var * m / (m - 1) : var;
      running_var[ci] = (1.0 - momentum) * running_var[ci] + momentum * unbiased;
    } else {
      mu = running_mean[ci];
      var = running_var[ci];
    }
    (*mean)[ci] = mu;
    (*invstd)[ci] = 1.0 / std::sqrt(var + eps);
    const double gsc = gamma->v[ci] * (*invstd)[ci];
    const double b = beta->v[ci];
    for (int n = 0; n < s.n; ++n) {
      const double* in_map = &x->v[x->index(n, ci, 0, 0)];
      double* out_map = &out->v[out->index(n, ci, 0, 0)];
      for (i64 i = 0; i < static_cast<i64>(s.h) * s.w; ++i) {
        out_map[i] = gsc * (in_map[i] - mu) + b;
      }
    }
  }

  if (tape) {
    tape->record([x, gamma, beta, out, mean, invstd, training, m]() {
      if (!out->has_grad()) return;
      const Shape4 s = x->shape;
      x->ensure_grad();
      gamma->ensure_grad();
      beta->ensure_grad();
      for (int ci = 0; ci < s.c; ++ci) {
        const double mu = (*mean)[ci];
        const double is = (*invstd)[ci];
        double sum_dy = 0.0, sum_dy_xhat = 0.0;
        for (int n = 0; n < s.n; ++n) {
          const double* go = &out->g[out->index(n, ci, 0, 0)];
          const double* in_map = &x->v[x->index(n, ci, 0, 0)];
          for (i64 i = 0; i < static_cast<i64>(s.h) * s.w; ++i) {
            sum_dy += go[i];
            sum_dy_xhat += go[i] * (in_map[i] - mu) * is;
          }
        }
        gamma->g[ci] += sum_dy_xhat;
        beta->g[ci] += sum_dy;
        const double gsc = gamma->v[ci] * is;
        for (int n = 0; n < s.n; ++n) {
          const double* go = &out->g[out->index(n, ci, 0, 0)];
          const double* in_map = &x->v[x->index(n, ci, 0, 0)];
          double* gin = &x->g[x->index(n, ci, 0, 0)];
          for (i64 i = 0; i < static_cast<i64>(s.h) * s.w; ++i) {
            if (training) {
              const double xhat = (in_map[i] - mu) * is;
              gin[i] += gsc * (go[i] - sum_dy / m - xhat * sum_dy_xhat / m);
            } else {
              gin[i] += gsc * go[i];
            }
          }
        }
      }
    });
  }
  return out;
}

TensorRef softmax_ce_sum(Tape* tape, const TensorRef& logits,
                         const std::vector<ClsEntry>& entries) {
  auto out = make_scalar(0.0);
  double total = 0.0;
  for (const auto& e : entries) {
    if (e.ch + e.num_classes > logits->shape.c) {
      throw std::invalid_argument("softmax_ce_sum: channel window exceeds " +
                                  logits->shape.str());
    }
    double mx = -1e300;
    for (int j = 0; j < e.num_classes; ++j) {
      mx = std::max(mx, logits->at(e.n, e.ch + j, e.y, e.x));
    }
    double sum = 0.0;
    for (int j = 0; j < e.num_classes; ++j) {
      sum += std::exp(logits->at(e.n, e.ch + j, e.y, e.x) - mx);
    }
    const double lse = mx + std::log(sum);
    total += lse - logits->at(e.n, e.ch + e.target, e.y, e.x);
  }
  out->v[0] = total;
  if (tape) {
    tape->record([logits, out, entries]() {
      if (!out->has_grad()) return;
      logits->ensure_grad();
      const double g = out->g[0];
      for (const auto& e : entries) {
        double mx = -1e300;
        for (int j = 0; j < e.num_classes; ++j) {
          mx = std::max(mx, logits->at(e.n, e.ch + j, e.y, e.x));
        }
        double sum = 0.0;
        for (int j = 0; j < e.num_classes; ++j) {
          sum += std::exp(logits->at(e.n, e.ch + j, e.y, e.x) - mx);
        }
        for (int j = 0; j < e.num_classes; ++j) {
          const double p = std::exp(logits->at(e.n, e.ch + j, e.y, e.x) - mx) / sum;
          const double ind = j == e.target ? 1.0 : 0.0;
          logits->g[logits->index(e.n, e.ch + j, e.y, e.x)] += g * (p - ind);
        }
      }
    });
  }
  return out;
}

namespace {

double smooth_l1_scalar(double d) {
  const double a = std::abs(d);
  return a < 1.0 ? 0.5 * d * d : a - 0.5;
}

double smooth_l1_dscalar(double d) {
  if (d > 1.0) return 1.0;
  if (d < -1.0) return -1.0;
  return d;
}

}  // namespace

TensorRef smooth_l1_sum(Tape* tape, const TensorRef& deltas,
                        const std::vector<RegEntry>& entries) {
  auto out = make_scalar(0.0);
  double total = 0.0;
  for (const auto& e : entries) {
    if (e.ch + 4 > deltas->shape.c) {
      throw std::invalid_argument("smooth_l1_sum: channel window exceeds " +
                                  deltas->shape.str());
    }
    for (int j = 0; j < 4; ++j) {
      double u = deltas->at(e.n, e.ch + j, e.y, e.x);
      if (e.clip && j == 0) u = std::tanh(u) * e.sx;
      if (e.clip && j == 1) u = std::tanh(u) * e.sy;
      total += smooth_l1_scalar(u - e.target[j]);
    }
  }
  out->v[0] = total;
  if (tape) {
    tape->record([deltas, out, entries]() {
      if (!out->has_grad()) return;
      deltas->ensure_grad();
      const double g = out->g[0];
      for (const auto& e : entries) {
        for (int j = 0; j < 4; ++j) {
          const double raw = deltas->at(e.n, e.ch + j, e.y, e.x);
          double u = raw;
          double du = 1.0;
          if (e.clip && j < 2) {
            const double t = std::tanh(raw);
            const double s = j == 0 ? e.sx : e.sy;
            u = t * s;
            du = (1.0 - t * t) * s;
          }
          deltas->g[deltas->index(e.n, e.ch + j, e.y, e.x)] +=
              g * smooth_l1_dscalar(u - e.target[j]) * du;
        }
      }
    });
  }
  return out;
}

}  // namespace padet
