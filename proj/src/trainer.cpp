#include "padet/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>

namespace padet {

namespace {

// Locates (level, cell, anchor) of a level-major flat anchor index.
struct AnchorSite {
  int level, y, x, anchor;
};

struct AnchorIndexer {
  std::vector<int> level_base;
  const std::vector<DefaultBoxGrid>* grids;
  int total = 0;

  explicit AnchorIndexer(const std::vector<DefaultBoxGrid>& g) : grids(&g) {
    for (const auto& grid : g) {
      level_base.push_back(total);
      total += grid.num_boxes();
    }
  }

  AnchorSite locate(int flat) const {
    int level = static_cast<int>(level_base.size()) - 1;
    while (level > 0 && flat < level_base[level]) --level;
    const auto& grid = (*grids)[level];
    const int local = flat - level_base[level];
    const int a = grid.anchors_per_cell();
    const int cell = local / a;
    return {level, cell / grid.grid_w, cell % grid.grid_w, local % a};
  }
};

AugmentParams augment_params(const Config& cfg) {
  AugmentParams p;
  p.flip_prob = cfg.aug_flip_prob;
  p.zoom_prob = cfg.aug_zoom_prob;
  p.max_zoom_out = cfg.aug_max_zoom_out;
  p.max_zoom_in = cfg.aug_max_zoom_in;
  p.brightness = cfg.aug_brightness;
  p.contrast = cfg.aug_contrast;
  p.color_gain = cfg.aug_color_gain;
  return p;
}

}  // namespace

Trainer::Trainer(const Config& cfg) : cfg_(cfg) {
  validate_config(cfg_);
  model_ = std::make_unique<Model>(cfg_);
  model_->init(cfg_.seed);
  state_.data_rng = Rng(mix_seed(0xda7aull, cfg_.seed));
  schedule_.base_lr = cfg_.base_lr;
  schedule_.warmup_start = cfg_.warmup_start_lr;
  schedule_.warmup_epochs = cfg_.warmup_epochs;
  schedule_.milestone_epochs = cfg_.milestone_epochs;
  schedule_.steps_per_epoch = cfg_.steps_per_epoch;
}

SceneSpec Trainer::scene_spec() const {
  SceneSpec spec;
  spec.canvas = cfg_.image_size;
  spec.min_objects = cfg_.min_objects;
  spec.max_objects = cfg_.max_objects;
  spec.min_size = cfg_.object_min_size;
  spec.max_size = cfg_.object_max_size;
  spec.min_aspect = cfg_.object_min_aspect;
  spec.max_aspect = cfg_.object_max_aspect;
  spec.num_shape_classes = cfg_.object_classes();
  spec.noise = cfg_.scene_noise;
  return spec;
}

Scene Trainer::train_scene(int index) const {
  if (cached_pool_) return (*cached_pool_)[index];
  return generate_scene(cfg_.train_seed_base + index, scene_spec());
}

std::vector<Scene> Trainer::make_eval_scenes() const {
  std::vector<Scene> scenes;
  scenes.reserve(cfg_.eval_scenes);
  for (int i = 0; i < cfg_.eval_scenes; ++i) {
    scenes.push_back(generate_scene(cfg_.eval_seed_base + i, scene_spec()));
  }
  return scenes;
}

TensorRef Trainer::build_batch(std::vector<std::vector<GtBox>>& gts) {
  const int b = cfg_.batch_size;
  const int size = cfg_.image_size;
  auto images = make_tensor({b, 3, size, size});
  gts.assign(b, {});
  const AugmentParams aug = augment_params(cfg_);
  for (int n = 0; n < b; ++n) {
    const int idx = state_.data_rng.uniform_int(0, cfg_.train_scenes - 1);
    Scene scene = train_scene(idx);
    if (cfg_.augment_enabled) {
      Rng aug_rng(mix_seed(cfg_.seed ^ 0xa06e57ull, static_cast<std::uint64_t>(state_.step),
                           static_cast<std::uint64_t>(n)));
      scene = augment(scene, aug_rng, aug);
    }
    std::copy(scene.image->v.begin(), scene.image->v.end(),
              images->v.begin() + images->index(n, 0, 0, 0));
    gts[n] = scene.annotations;
  }
  return images;
}

LossBreakdown Trainer::train_step() {
  const int b = cfg_.batch_size;
  const int num_classes = cfg_.num_classes;
  const bool pa = cfg_.head_mode == "pa";
  const auto& grids = model_->grids();
  const AnchorIndexer indexer(grids);

  std::vector<std::vector<GtBox>> gts;
  TensorRef images = build_batch(gts);

  Tape tape;
  ModelForward fwd = model_->forward(&tape, images, true);

  const std::vector<Box> defaults = model_->flat_defaults();

  // Per-(image, anchor) match lists and classification losses for mining,
  // concatenated image-major so the 1:3 budget applies to the whole batch.
  std::vector<std::vector<MatchResult>> prop_match(b), att_match(b);
  std::vector<double> prop_loss, att_loss;
  std::vector<MatchResult> prop_all, att_all;
  prop_loss.reserve(static_cast<size_t>(b) * indexer.total);
  att_loss.reserve(static_cast<size_t>(b) * indexer.total);

  for (int n = 0; n < b; ++n) {
    std::vector<Box> adjusted;
    adjusted.reserve(indexer.total);
    for (size_t l = 0; l < grids.size(); ++l) {
      adjusted.insert(adjusted.end(), fwd.adjusted[l][n].begin(), fwd.adjusted[l][n].end());
    }
    if (pa) {
      prop_match[n] = match(defaults, gts[n], cfg_.match_threshold, cfg_.bipartite_matching);
    }
    att_match[n] = match(adjusted, gts[n], cfg_.match_threshold, cfg_.bipartite_matching);

    for (int flat = 0; flat < indexer.total; ++flat) {
      const AnchorSite site = indexer.locate(flat);
      if (pa) {
        const Tensor& obj = *fwd.propose[site.level].objectness;
        const double z0 = obj.at(n, 2 * site.anchor, site.y, site.x);
        const double z1 = obj.at(n, 2 * site.anchor + 1, site.y, site.x);
        const int target =
            prop_match[n][flat].label == MatchResult::Label::positive ? 1 : 0;
        const double logits[2] = {z0, z1};
        prop_loss.push_back(softmax_cross_entropy(std::span<const double>(logits, 2), target));
      }
      const Tensor& cls = *fwd.attend[site.level].class_logits;
      std::vector<double> logits(num_classes);
      for (int c = 0; c < num_classes; ++c) {
        logits[c] = cls.at(n, site.anchor * num_classes + c, site.y, site.x);
      }
      const int target = att_match[n][flat].label == MatchResult::Label::positive
                             ? att_match[n][flat].class_id + 1
                             : 0;
      att_loss.push_back(softmax_cross_entropy(logits, target));
    }
    if (pa) prop_all.insert(prop_all.end(), prop_match[n].begin(), prop_match[n].end());
    att_all.insert(att_all.end(), att_match[n].begin(), att_match[n].end());
  }

  LossBreakdown breakdown;
  TensorRef total;

  auto build_process =
      [&](const std::vector<MatchResult>& mined, bool proposing, int& n_pos_out,
          double& cls_out, double& reg_out) -> TensorRef {
    int n_pos = 0;
    for (const auto& m : mined) {
      if (m.label == MatchResult::Label::positive) ++n_pos;
    }
    n_pos_out = n_pos;
    if (n_pos == 0) return nullptr;

    const size_t levels = grids.size();
    std::vector<std::vector<ClsEntry>> cls_entries(levels);
    std::vector<std::vector<RegEntry>> reg_entries(levels);
    for (size_t gi = 0; gi < mined.size(); ++gi) {
      const auto& m = mined[gi];
      if (m.label == MatchResult::Label::discarded) continue;
      const int n = static_cast<int>(gi) / indexer.total;
      const int flat = static_cast<int>(gi) % indexer.total;
      const AnchorSite site = indexer.locate(flat);
      const bool positive = m.label == MatchResult::Label::positive;
      ClsEntry ce;
      ce.n = n;
      ce.y = site.y;
      ce.x = site.x;
      if (proposing) {
        ce.ch = 2 * site.anchor;
        ce.num_classes = 2;
        ce.target = positive ? 1 : 0;
      } else {
        ce.ch = site.anchor * num_classes;
        ce.num_classes = num_classes;
        ce.target = positive ? m.class_id + 1 : 0;
      }
      cls_entries[site.level].push_back(ce);
      if (positive) {
        RegEntry re;
        re.n = n;
        re.ch = 4 * site.anchor;
        re.y = site.y;
        re.x = site.x;
        re.target = {m.target.dx, m.target.dy, m.target.dw, m.target.dh};
        if (proposing && cfg_.propose_clip) {
          const Box& def = defaults[flat];
          const double stride = grids[site.level].level_stride;
          re.clip = true;
          re.sx = stride / (2.0 * def.w);
          re.sy = stride / (2.0 * def.h);
        }
        reg_entries[site.level].push_back(re);
      }
    }

    TensorRef cls_acc, reg_acc;
    for (size_t l = 0; l < levels; ++l) {
      const TensorRef cls_map =
          proposing ? fwd.propose[l].objectness : fwd.attend[l].class_logits;
      const TensorRef reg_map = proposing ? fwd.propose[l].deltas : fwd.attend[l].deltas;
      if (!cls_entries[l].empty()) {
        TensorRef t = softmax_ce_sum(&tape, cls_map, cls_entries[l]);
        cls_acc = cls_acc ? add(&tape, cls_acc, t) : t;
      }
      if (!reg_entries[l].empty()) {
        TensorRef t = smooth_l1_sum(&tape, reg_map, reg_entries[l]);
        reg_acc = reg_acc ? add(&tape, reg_acc, t) : t;
      }
    }
    cls_out = cls_acc ? cls_acc->v[0] / n_pos : 0.0;
    reg_out = reg_acc ? reg_acc->v[0] / n_pos : 0.0;
    TensorRef proc = cls_acc;
    if (reg_acc) proc = proc ? add(&tape, proc, reg_acc) : reg_acc;
    return scale(&tape, proc, 1.0 / n_pos);
  };

  if (pa) {
    const auto mined = mine_hard_negatives(prop_all, prop_loss, cfg_.neg_ratio);
    TensorRef proc = build_process(mined, true, breakdown.n_pos_propose,
                                   breakdown.propose_cls, breakdown.propose_reg);
    if (proc) total = proc;
  }
  {
    const auto mined = mine_hard_negatives(att_all, att_loss, cfg_.neg_ratio);
    TensorRef proc = build_process(mined, false, breakdown.n_pos_attend,
                                   breakdown.attend_cls, breakdown.attend_reg);
    if (proc) total = total ? add(&tape, total, proc) : proc;
  }

  if (!std::isfinite(breakdown.total())) {
    throw std::runtime_error("train_step: non-finite loss at step " +
                             std::to_string(state_.step) + " (total " +
                             std::to_string(breakdown.total()) + ")");
  }

  const double lr = lr_at(state_.step, schedule_);
  if (total) {
    tape.backward(total);
    // a level no kept entry landed on this step contributes a zero gradient
    for (const auto& p : model_->params()) p->tensor->ensure_grad();
    sgd_step(model_->params(), lr, cfg_.momentum, cfg_.weight_decay);
  } else {
    tape.abandon();
  }
  ++state_.step;
  return breakdown;
}

void Trainer::run(const TrainOptions& opts) {
  namespace fs = std::filesystem;
  std::ofstream metrics;
  if (!opts.out_dir.empty()) {
    fs::create_directories(opts.out_dir);
    metrics.open(opts.out_dir + "/metrics.txt", std::ios::app);
  }

  if (!opts.dataset_cache.empty()) {
    if (fs::exists(opts.dataset_cache)) {
      auto scenes = load_dataset(opts.dataset_cache);
      if (static_cast<int>(scenes.size()) != cfg_.train_scenes) {
        throw std::runtime_error("dataset cache holds " + std::to_string(scenes.size()) +
                                 " scenes but config expects " +
                                 std::to_string(cfg_.train_scenes));
      }
      cached_pool_ = std::move(scenes);
    } else {
      std::vector<Scene> scenes;
      scenes.reserve(cfg_.train_scenes);
      for (int i = 0; i < cfg_.train_scenes; ++i) scenes.push_back(train_scene(i));
      save_dataset(opts.dataset_cache, scenes);
      cached_pool_ = std::move(scenes);
    }
  }

  while (state_.epoch < cfg_.epochs) {
    for (int s = 0; s < cfg_.steps_per_epoch; ++s) {
      const LossBreakdown br = train_step();
      losses_.push_back(br);
      if (metrics) {
        char line[256];
        std::snprintf(line, sizeof(line),
                      "step %lld lr %.8g total %.8g pcls %.8g preg %.8g acls %.8g "
                      "areg %.8g npos_p %d npos_a %d\n",
                      static_cast<long long>(state_.step - 1),
                      lr_at(state_.step - 1, schedule_), br.total(), br.propose_cls,
                      br.propose_reg, br.attend_cls, br.attend_reg, br.n_pos_propose,
                      br.n_pos_attend);
        metrics << line;
      }
      if (opts.verbose && (state_.step % 20 == 0)) {
        std::printf("step %lld total %.4f (npos %d/%d)\n",
                    static_cast<long long>(state_.step), br.total(),
                    br.n_pos_propose, br.n_pos_attend);
        std::fflush(stdout);
      }
    }
    const int finished = state_.epoch;
    ++state_.epoch;
    if (!opts.out_dir.empty()) {
      save_checkpoint(opts.out_dir + "/last.bin", *model_, state_);
    }
    if (opts.eval_every > 0 && finished % opts.eval_every == opts.eval_every - 1) {
      const EvalReport rep = evaluate();
      if (metrics) {
        metrics << "epoch " << finished << " map50 " << rep.map_at_base() << "\n";
      }
      if (opts.verbose) {
        std::printf("epoch %d map50 %.4f\n", finished, rep.map_at_base());
        std::fflush(stdout);
      }
    }
    if (opts.match_stats_every > 0 &&
        finished % opts.match_stats_every == opts.match_stats_every - 1) {
      const MatchStatsReport rep = match_stats();
      if (metrics) {
        metrics << "epoch " << finished << " matched_initial " << rep.total_initial
                << " matched_adjusted " << rep.total_adjusted << "\n";
      }
    }
    if (metrics) metrics.flush();
  }
}

EvalReport Trainer::evaluate() { return evaluate(make_eval_scenes()); }

EvalReport Trainer::evaluate(const std::vector<Scene>& scenes) {
  const auto images = evaluate_scenes(*model_, scenes);
  return map_sweep(images, cfg_.object_classes());
}

MatchStatsReport Trainer::match_stats(int max_scenes) {
  std::vector<Scene> scenes;
  const int n = std::min(max_scenes, cfg_.eval_scenes);
  for (int i = 0; i < n; ++i) {
    scenes.push_back(generate_scene(cfg_.eval_seed_base + i, scene_spec()));
  }
  const auto inputs = match_stats_inputs(*model_, scenes);
  return matched_box_stats(inputs, cfg_.match_threshold);
}

}  // namespace padet
