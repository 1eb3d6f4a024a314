#include "padet/model.hpp"

#include <stdexcept>

namespace padet {

namespace {

BackboneConfig backbone_config(const Config& cfg) {
  BackboneConfig b;
  b.strides = cfg.strides;
  b.stem_channels = cfg.stem_channels;
  b.fpn_channels = cfg.fpn_channels;
  b.use_batch_norm = cfg.use_batch_norm;
  return b;
}

HeadConfig head_config(const Config& cfg) {
  HeadConfig h;
  h.fpn_channels = cfg.fpn_channels;
  h.num_classes = cfg.num_classes;
  h.anchors_per_cell = static_cast<int>(cfg.anchor_multipliers.size());
  h.propose_enabled = cfg.head_mode == "pa";
  h.propose_clip = cfg.propose_clip;
  h.attend_adaptive = cfg.attend_sampling == "adaptive";
  h.attend_dilation = cfg.attend_dilation;
  h.offset_gradients = cfg.offset_gradients;
  return h;
}

}  // namespace

Model::Model(const Config& config) : cfg(config) {
  validate_config(cfg);
  const BackboneConfig bc = backbone_config(cfg);
  backbone = Backbone(bc, registry_);
  fpn = Fpn(bc, backbone.out_channels(), registry_);
  head = Head(head_config(cfg), registry_);
  grids_ = generate_default_boxes(cfg.strides, cfg.image_size, cfg.image_size,
                                  cfg.anchor_multipliers, cfg.anchor_scale);
}

void Model::init(std::uint64_t seed) {
  Rng rng(mix_seed(0x1217ull, seed));
  backbone.init(rng);
  fpn.init(rng);
  head.init(rng);
}

ModelForward Model::forward(Tape* tape, const TensorRef& images, bool training) {
  ModelForward out;
  auto bottom_up = backbone.forward(tape, images, training);
  out.features = fpn.forward(tape, bottom_up, training);
  const int batch = images->shape.n;
  const bool pa = head.config().propose_enabled;
  out.adjusted.resize(grids_.size());
  for (size_t l = 0; l < grids_.size(); ++l) {
    if (pa) {
      ProposeOutput prop = head.propose(tape, out.features[l], training);
      OffsetField offsets = head.offsets_from_proposals(tape, prop, grids_[l]);
      out.attend.push_back(head.attend(tape, out.features[l], offsets, training));
      out.adjusted[l].resize(batch);
      for (int n = 0; n < batch; ++n) {
        out.adjusted[l][n] = head.adjust_boxes(prop, grids_[l], n);
      }
      out.propose.push_back(std::move(prop));
    } else {
      OffsetField unused;
      out.attend.push_back(head.attend(tape, out.features[l], unused, training));
      out.adjusted[l].assign(batch, grids_[l].boxes);
    }
  }
  return out;
}

void Model::resize_input(int image_h, int image_w) {
  if (image_h != image_w) {
    throw std::invalid_argument("model: only square inputs are supported");
  }
  grids_ = generate_default_boxes(cfg.strides, image_h, image_w, cfg.anchor_multipliers,
                                  cfg.anchor_scale);
  cfg.image_size = image_h;
}

ParamRef Model::param(const std::string& name) const {
  for (const auto& p : registry_) {
    if (p->name == name) return p;
  }
  throw std::out_of_range("model: no parameter named '" + name + "'");
}

std::map<std::string, i64> Model::count_parameters() const {
  std::map<std::string, i64> counts;
  for (const auto& p : registry_) {
    if (counts.count(p->name)) {
      throw std::logic_error("model: duplicate parameter name " + p->name);
    }
    counts[p->name] = p->tensor->shape.numel();
  }
  return counts;
}

i64 Model::total_parameters() const {
  i64 total = 0;
  for (const auto& p : registry_) total += p->tensor->shape.numel();
  return total;
}

std::vector<std::pair<std::string, std::vector<double>*>> Model::named_buffers() {
  std::vector<std::pair<std::string, std::vector<double>*>> out;
  auto collect = [&](ConvBlock& block, const std::string& name) {
    if (block.has_bn) {
      out.emplace_back(name + ".bn.running_mean", &block.bn_mean);
      out.emplace_back(name + ".bn.running_var", &block.bn_var);
    }
  };
  for (size_t i = 0; i < backbone.layers.size(); ++i) {
    // parameter names already carry the layer name; reuse the weight's prefix
    std::string prefix = backbone.layers[i].w->name;
    prefix = prefix.substr(0, prefix.rfind(".weight"));
    collect(backbone.layers[i], prefix);
  }
  return out;
}

std::vector<Box> Model::flat_defaults() const {
  std::vector<Box> out;
  for (const auto& g : grids_) out.insert(out.end(), g.boxes.begin(), g.boxes.end());
  return out;
}

std::vector<Detection> detect_image(const ModelForward& fwd, const Model& model, int n) {
  DecodeOptions opts;
  opts.score_thresh = model.cfg.score_thresh;
  opts.topk = model.cfg.topk;
  opts.img_w = model.cfg.image_size;
  opts.img_h = model.cfg.image_size;
  auto dets = decode_detections(fwd.propose, fwd.attend, model.grids(), model.head, n, opts);
  if (model.cfg.nms_mode == "soft") {
    SoftNmsParams p;
    p.mode = soft_nms_mode_from_string(model.cfg.soft_nms_mode);
    p.iou_thresh = model.cfg.soft_nms_thresh;
    p.sigma = model.cfg.soft_nms_sigma;
    p.score_floor = model.cfg.score_thresh;
    return soft_nms_per_class(dets, p);
  }
  return nms_per_class(dets, model.cfg.nms_thresh);
}

std::vector<ImageEval> evaluate_scenes(Model& model, const std::vector<Scene>& scenes) {
  std::vector<ImageEval> out;
  out.reserve(scenes.size());
  for (const auto& scene : scenes) {
    auto fwd = model.forward(nullptr, scene.image, false);
    ImageEval ie;
    ie.dets = detect_image(fwd, model, 0);
    ie.gts = scene.annotations;
    out.push_back(std::move(ie));
  }
  return out;
}

std::vector<MatchStatsInput> match_stats_inputs(Model& model,
                                                const std::vector<Scene>& scenes) {
  std::vector<MatchStatsInput> out;
  out.reserve(scenes.size());
  const std::vector<Box> defaults = model.flat_defaults();
  for (const auto& scene : scenes) {
    auto fwd = model.forward(nullptr, scene.image, false);
    MatchStatsInput in;
    in.gts = scene.annotations;
    in.defaults = defaults;
    for (size_t l = 0; l < model.grids().size(); ++l) {
      const auto& adj = fwd.adjusted[l][0];
      in.adjusted.insert(in.adjusted.end(), adj.begin(), adj.end());
    }
    out.push_back(std::move(in));
  }
  return out;
}

}  // namespace padet
