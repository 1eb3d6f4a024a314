#include "padet/head.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace padet {

Head::Head(const HeadConfig& cfg, std::vector<ParamRef>& registry) : cfg_(cfg) {
  const int k = cfg.kernel;
  if (k % 2 == 0) throw std::invalid_argument("head: kernel size must be odd");
  const int a = cfg.anchors_per_cell;
  const int c = cfg.num_classes;
  const int pad = k / 2;
  const int dil_pad = cfg.attend_dilation * (k - 1) / 2;

  if (cfg.propose_enabled) {
    obj_conv = ConvBlock("head.propose.obj", cfg.fpn_channels, 2 * a, k, 1, pad, 1,
                         false, false, registry);
    preg_conv = ConvBlock("head.propose.reg", cfg.fpn_channels, 4 * a, k, 1, pad, 1,
                          false, false, registry);
  }
  cls_conv = ConvBlock("head.attend.cls", cfg.fpn_channels, c * a, k, 1,
                       cfg.attend_adaptive ? pad : dil_pad, 1, false, false, registry);
  areg_conv = ConvBlock("head.attend.reg", cfg.fpn_channels, 4 * a, k, 1,
                        cfg.attend_adaptive ? pad : dil_pad, 1, false, false, registry);
}

void Head::init(Rng& rng) {
  if (cfg_.propose_enabled) {
    obj_conv.init_gaussian(rng, 0.01);
    preg_conv.init_gaussian(rng, 0.01);
  }
  cls_conv.init_gaussian(rng, 0.01);
  areg_conv.init_gaussian(rng, 0.01);
}

ProposeOutput Head::propose(Tape* tape, const PyramidFeature& feature, bool training) {
  if (!cfg_.propose_enabled) {
    throw std::logic_error("head: proposing process is disabled in this configuration");
  }
  if (feature.tensor->shape.c != cfg_.fpn_channels) {
    throw std::invalid_argument("head: feature channels " + feature.tensor->shape.str() +
                                " do not match configured width " +
                                std::to_string(cfg_.fpn_channels));
  }
  ProposeOutput out;
  out.objectness = obj_conv.forward(tape, feature.tensor, training);
  out.deltas = preg_conv.forward(tape, feature.tensor, training);
  return out;
}

std::vector<Box> Head::adjust_boxes(const ProposeOutput& propose,
                                    const DefaultBoxGrid& grid, int n) const {
  const Tensor& d = *propose.deltas;
  const int a = grid.anchors_per_cell();
  if (d.shape.h != grid.grid_h || d.shape.w != grid.grid_w || d.shape.c != 4 * a) {
    throw std::invalid_argument("adjust_boxes: deltas " + d.shape.str() +
                                " do not match grid " + std::to_string(grid.grid_h) +
                                "x" + std::to_string(grid.grid_w) + " with A=" +
                                std::to_string(a));
  }
  const double stride = grid.level_stride;
  std::vector<Box> out(grid.boxes.size());
  for (int i = 0; i < grid.grid_h; ++i) {
    for (int j = 0; j < grid.grid_w; ++j) {
      for (int ai = 0; ai < a; ++ai) {
        const size_t flat = (static_cast<size_t>(i) * grid.grid_w + j) * a + ai;
        const Box& def = grid.boxes[flat];
        BoxDelta raw{d.at(n, 4 * ai + 0, i, j), d.at(n, 4 * ai + 1, i, j),
                     d.at(n, 4 * ai + 2, i, j), d.at(n, 4 * ai + 3, i, j)};
        const BoxDelta used =
            cfg_.propose_clip ? clip_delta(raw, def, stride, stride) : raw;
        out[flat] = decode(used, def);
      }
    }
  }
  return out;
}

OffsetField Head::compute_offsets(const std::vector<Box>& adjusted,
                                  const DefaultBoxGrid& grid, int k) {
  if (k % 2 == 0) throw std::invalid_argument("compute_offsets: k must be odd");
  const int a = grid.anchors_per_cell();
  if (adjusted.size() != grid.boxes.size()) {
    throw std::invalid_argument("compute_offsets: adjusted box count " +
                                std::to_string(adjusted.size()) + " != grid boxes " +
                                std::to_string(grid.boxes.size()));
  }
  const double stride = grid.level_stride;
  const int r = k / 2;
  OffsetField f = OffsetField::zeros(1, k, a, grid.grid_h, grid.grid_w);
  Tensor& t = *f.t;
  for (int i = 0; i < grid.grid_h; ++i) {
    for (int j = 0; j < grid.grid_w; ++j) {
      for (int ai = 0; ai < a; ++ai) {
        const size_t flat = (static_cast<size_t>(i) * grid.grid_w + j) * a + ai;
        const Box& def = grid.boxes[flat];
        const Box& adj = adjusted[flat];
        const double h_cells = adj.h / stride;
        const double w_cells = adj.w / stride;
        const double dy_cells = (adj.cy - def.cy) / stride;
        const double dx_cells = (adj.cx - def.cx) / stride;
        for (int s = 0; s < k * k; ++s) {
          const int ry = s / k - r;
          const int rx = s % k - r;
          t.at(0, f.channel(ai, s, 0), i, j) = ry * (h_cells / k) + dy_cells - ry;
          t.at(0, f.channel(ai, s, 1), i, j) = rx * (w_cells / k) + dx_cells - rx;
        }
      }
    }
  }
  return f;
}

OffsetField Head::offsets_from_proposals(Tape* tape, const ProposeOutput& propose,
                                         const DefaultBoxGrid& grid) const {
  const TensorRef deltas = propose.deltas;
  const Shape4 ds = deltas->shape;
  const int a = grid.anchors_per_cell();
  const int k = cfg_.kernel;
  const int r = k / 2;
  const double stride = grid.level_stride;
  const bool clip = cfg_.propose_clip;
  if (ds.h != grid.grid_h || ds.w != grid.grid_w || ds.c != 4 * a) {
    throw std::invalid_argument("offsets_from_proposals: deltas " + ds.str() +
                                " do not match grid with A=" + std::to_string(a));
  }

  OffsetField f = OffsetField::zeros(ds.n, k, a, grid.grid_h, grid.grid_w);
  for (int n = 0; n < ds.n; ++n) {
    for (int i = 0; i < grid.grid_h; ++i) {
      for (int j = 0; j < grid.grid_w; ++j) {
        for (int ai = 0; ai < a; ++ai) {
          const size_t flat = (static_cast<size_t>(i) * grid.grid_w + j) * a + ai;
          const Box& def = grid.boxes[flat];
          BoxDelta raw{deltas->at(n, 4 * ai + 0, i, j), deltas->at(n, 4 * ai + 1, i, j),
                       deltas->at(n, 4 * ai + 2, i, j), deltas->at(n, 4 * ai + 3, i, j)};
          const BoxDelta used = clip ? clip_delta(raw, def, stride, stride) : raw;
          const Box adj = decode(used, def);
          const double h_cells = adj.h / stride;
          const double w_cells = adj.w / stride;
          const double dy_cells = (adj.cy - def.cy) / stride;
          const double dx_cells = (adj.cx - def.cx) / stride;
          for (int s = 0; s < k * k; ++s) {
            const int ry = s / k - r;
            const int rx = s % k - r;
            f.t->at(n, f.channel(ai, s, 0), i, j) = ry * (h_cells / k) + dy_cells - ry;
            f.t->at(n, f.channel(ai, s, 1), i, j) = rx * (w_cells / k) + dx_cells - rx;
          }
        }
      }
    }
  }

  if (tape && cfg_.offset_gradients) {
    OffsetField field = f;
    tape->record([deltas, field, grid, k, r, stride, clip]() {
      if (!field.t->has_grad()) return;
      deltas->ensure_grad();
      const int a = grid.anchors_per_cell();
      for (int n = 0; n < deltas->shape.n; ++n) {
        for (int i = 0; i < grid.grid_h; ++i) {
          for (int j = 0; j < grid.grid_w; ++j) {
            for (int ai = 0; ai < a; ++ai) {
              const size_t flat = (static_cast<size_t>(i) * grid.grid_w + j) * a + ai;
              const Box& def = grid.boxes[flat];
              const double dx_raw = deltas->at(n, 4 * ai + 0, i, j);
              const double dy_raw = deltas->at(n, 4 * ai + 1, i, j);
              const double dw_raw = deltas->at(n, 4 * ai + 2, i, j);
              const double dh_raw = deltas->at(n, 4 * ai + 3, i, j);
              // center displacement in cells as a function of the raw delta
              double ddx, ddy;
              if (clip) {
                const double tx = std::tanh(dx_raw);
                const double ty = std::tanh(dy_raw);
                ddx = (1.0 - tx * tx) * 0.5;
                ddy = (1.0 - ty * ty) * 0.5;
              } else {
                ddx = def.w / stride;
                ddy = def.h / stride;
              }
              const double w_cells = def.w / stride * std::exp(dw_raw);
              const double h_cells = def.h / stride * std::exp(dh_raw);
              double sum_gy = 0.0, sum_gx = 0.0, sum_gy_ry = 0.0, sum_gx_rx = 0.0;
              for (int s = 0; s < k * k; ++s) {
                const int ry = s / k - r;
                const int rx = s % k - r;
                const double gy = field.t->g[field.t->index(n, field.channel(ai, s, 0), i, j)];
                const double gx = field.t->g[field.t->index(n, field.channel(ai, s, 1), i, j)];
                sum_gy += gy;
                sum_gx += gx;
                sum_gy_ry += gy * ry;
                sum_gx_rx += gx * rx;
              }
              deltas->g[deltas->index(n, 4 * ai + 0, i, j)] += sum_gx * ddx;
              deltas->g[deltas->index(n, 4 * ai + 1, i, j)] += sum_gy * ddy;
              deltas->g[deltas->index(n, 4 * ai + 2, i, j)] += sum_gx_rx * w_cells / k;
              deltas->g[deltas->index(n, 4 * ai + 3, i, j)] += sum_gy_ry * h_cells / k;
            }
          }
        }
      }
    });
  }
  return f;
}

AttendOutput Head::attend(Tape* tape, const PyramidFeature& feature,
                          const OffsetField& offsets, bool training) {
  if (feature.tensor->shape.c != cfg_.fpn_channels) {
    throw std::invalid_argument("head: feature channels " + feature.tensor->shape.str() +
                                " do not match configured width " +
                                std::to_string(cfg_.fpn_channels));
  }
  const int a = cfg_.anchors_per_cell;
  const int c = cfg_.num_classes;
  AttendOutput out;
  if (!cfg_.attend_adaptive) {
    out.class_logits = cls_conv.forward(tape, feature.tensor, training);
    out.deltas = areg_conv.forward(tape, feature.tensor, training);
    return out;
  }

  offsets.validate();
  if (offsets.anchors != a) {
    throw std::invalid_argument("head: offset field carries A=" +
                                std::to_string(offsets.anchors) + ", expected " +
                                std::to_string(a));
  }
  std::vector<TensorRef> cls_parts, reg_parts;
  cls_parts.reserve(a);
  reg_parts.reserve(a);
  const bool want_offset_grads = cfg_.offset_gradients;
  for (int ai = 0; ai < a; ++ai) {
    TensorRef wc = slice_out_channels(tape, cls_conv.w->tensor, ai * c, c);
    TensorRef bc = slice_bias(tape, cls_conv.b->tensor, ai * c, c);
    cls_parts.push_back(
        offset_conv2d(tape, feature.tensor, wc, bc, offsets, ai, want_offset_grads));
    TensorRef wr = slice_out_channels(tape, areg_conv.w->tensor, ai * 4, 4);
    TensorRef br = slice_bias(tape, areg_conv.b->tensor, ai * 4, 4);
    reg_parts.push_back(
        offset_conv2d(tape, feature.tensor, wr, br, offsets, ai, want_offset_grads));
  }
  out.class_logits = concat_channels(tape, cls_parts);
  out.deltas = concat_channels(tape, reg_parts);
  return out;
}

}  // namespace padet
