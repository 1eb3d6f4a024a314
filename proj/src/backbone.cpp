#include "padet/backbone.hpp"

#include <stdexcept>
#include <string>

namespace padet {

namespace {

void validate_strides(const std::vector<int>& strides) {
  if (strides.empty()) throw std::invalid_argument("backbone: no strides configured");
  for (size_t i = 0; i < strides.size(); ++i) {
    if (strides[i] < 2) throw std::invalid_argument("backbone: stride must be >= 2");
    if (i > 0 && (strides[i] <= strides[i - 1] || strides[i] % strides[i - 1] != 0)) {
      throw std::invalid_argument(
          "backbone: strides must be strictly increasing multiples");
    }
  }
}

}  // namespace

Backbone::Backbone(const BackboneConfig& cfg, std::vector<ParamRef>& registry)
    : cfg_(cfg) {
  validate_strides(cfg.strides);
  const int max_stride = cfg.strides.back();
  const bool bn = cfg.use_batch_norm;

  int cur_stride = 1;
  int cur_channels = 3;
  int idx = 0;
  auto widen = [&](int stride) {
    // stem at /2, doubled at /4, capped at 4x from /8 onwards
    if (stride <= 2) return cfg_.stem_channels;
    if (stride <= 4) return cfg_.stem_channels * 2;
    return cfg_.stem_channels * 4;
  };

  while (cur_stride < max_stride) {
    const int next_stride = cur_stride * 2;
    const int cout = widen(next_stride);
    layers.emplace_back("backbone.down" + std::to_string(idx), cur_channels, cout, 3,
                        /*stride=*/2, /*pad=*/1, /*dilation=*/1, bn, /*relu=*/true,
                        registry);
    ++idx;
    cur_channels = cout;
    cur_stride = next_stride;
    if (cur_stride == cfg.strides.front()) {
      // one refinement conv at the finest emitted level
      layers.emplace_back("backbone.refine", cur_channels, cur_channels, 3, 1, 1, 1, bn,
                          true, registry);
    }
    bool emitted = false;
    for (int s : cfg.strides) {
      if (s == cur_stride) emitted = true;
    }
    if (emitted) {
      emit_after_.push_back(static_cast<int>(layers.size()) - 1);
      out_channels_.push_back(cur_channels);
    }
  }
}

std::vector<TensorRef> Backbone::forward(Tape* tape, const TensorRef& image,
                                         bool training) {
  const Shape4 s = image->shape;
  const int max_stride = cfg_.strides.back();
  if (s.c != 3) {
    throw std::invalid_argument("backbone: expected 3-channel image, got " + s.str());
  }
  if (s.h % max_stride != 0 || s.w % max_stride != 0) {
    throw std::invalid_argument("backbone: image " + s.str() +
                                " not divisible by max stride " +
                                std::to_string(max_stride));
  }
  std::vector<TensorRef> maps;
  TensorRef x = image;
  size_t emit_idx = 0;
  for (size_t i = 0; i < layers.size(); ++i) {
    x = layers[i].forward(tape, x, training);
    if (emit_idx < emit_after_.size() && emit_after_[emit_idx] == static_cast<int>(i)) {
      maps.push_back(x);
      ++emit_idx;
    }
  }
  return maps;
}

void Backbone::init(Rng& rng) {
  for (auto& layer : layers) layer.init_he(rng);
}

Fpn::Fpn(const BackboneConfig& cfg, const std::vector<int>& in_channels,
         std::vector<ParamRef>& registry)
    : cfg_(cfg) {
  for (size_t i = 0; i < in_channels.size(); ++i) {
    lateral.emplace_back("fpn.lateral" + std::to_string(i), in_channels[i],
                         cfg.fpn_channels, 1, 1, 0, 1, /*bn=*/false, /*relu=*/false,
                         registry);
    smooth.emplace_back("fpn.smooth" + std::to_string(i), cfg.fpn_channels,
                        cfg.fpn_channels, 3, 1, 1, 1, /*bn=*/false, /*relu=*/false,
                        registry);
  }
}

std::vector<PyramidFeature> Fpn::forward(Tape* tape,
                                         const std::vector<TensorRef>& bottom_up,
                                         bool training) {
  if (bottom_up.size() != lateral.size()) {
    throw std::invalid_argument("fpn: expected " + std::to_string(lateral.size()) +
                                " bottom-up maps, got " + std::to_string(bottom_up.size()));
  }
  const int n = static_cast<int>(bottom_up.size());
  std::vector<TensorRef> merged(n);
  for (int i = n - 1; i >= 0; --i) {
    TensorRef lat = lateral[i].forward(tape, bottom_up[i], training);
    if (i == n - 1) {
      merged[i] = lat;
    } else {
      TensorRef up = merged[i + 1];
      int ratio = cfg_.strides[i + 1] / cfg_.strides[i];
      for (; ratio > 1; ratio /= 2) up = upsample_nearest_2x(tape, up);
      merged[i] = add(tape, lat, up);
    }
  }
  std::vector<PyramidFeature> out(n);
  for (int i = 0; i < n; ++i) {
    out[i].level_stride = cfg_.strides[i];
    out[i].tensor = smooth[i].forward(tape, merged[i], training);
  }
  return out;
}

void Fpn::init(Rng& rng) {
  for (auto& l : lateral) l.init_he(rng);
  for (auto& s : smooth) s.init_he(rng);
}

}  // namespace padet
