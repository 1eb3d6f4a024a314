// Command-line surface: train / infer / eval / analyze-matching /
// count-params / selftest.

#include <cstdio>
#include <filesystem>
#include <string>

#include "CLI11.hpp"
#include "padet/checkpoint.hpp"
#include "padet/image_io.hpp"
#include "padet/reports.hpp"
#include "padet/trainer.hpp"
#include "ref/oracles.hpp"

namespace {

using namespace padet;

Config resolve_config(const std::string& preset, const std::string& config_file) {
  Config cfg = preset_by_name(preset);
  if (!config_file.empty()) cfg = load_config_file(config_file, cfg);
  validate_config(cfg);
  return cfg;
}

SceneSpec spec_from_config(const Config& cfg) {
  SceneSpec spec;
  spec.canvas = cfg.image_size;
  spec.min_objects = cfg.min_objects;
  spec.max_objects = cfg.max_objects;
  spec.min_size = cfg.object_min_size;
  spec.max_size = cfg.object_max_size;
  spec.min_aspect = cfg.object_min_aspect;
  spec.max_aspect = cfg.object_max_aspect;
  spec.num_shape_classes = cfg.object_classes();
  spec.noise = cfg.scene_noise;
  return spec;
}

int cmd_train(const std::string& preset, const std::string& config_file,
              const std::string& out_dir, const std::string& dataset_cache,
              std::uint64_t seed_override, bool has_seed, int epochs_override,
              double neg_ratio, int warmup_epochs, bool verbose, int eval_every,
              int match_stats_every) {
  Config cfg = resolve_config(preset, config_file);
  if (has_seed) cfg.seed = seed_override;
  if (epochs_override > 0) cfg.epochs = epochs_override;
  cfg.neg_ratio = neg_ratio;
  cfg.warmup_epochs = warmup_epochs;
  validate_config(cfg);

  Trainer trainer(cfg);
  TrainOptions opts;
  opts.out_dir = out_dir;
  opts.dataset_cache = dataset_cache;
  opts.verbose = verbose;
  opts.eval_every = eval_every;
  opts.match_stats_every = match_stats_every;
  trainer.run(opts);
  if (!out_dir.empty()) {
    std::printf("checkpoint written to %s/last.bin\n", out_dir.c_str());
  }
  const EvalReport rep = trainer.evaluate();
  std::printf("held-out map@0.50 %.4f\n", rep.map_at_base());
  return 0;
}

int cmd_infer(const std::string& ckpt_path, const std::string& image_path,
              const std::string& out_path, const std::string& draw_path,
              double score_thresh, int topk, double nms_thresh, bool soft,
              const std::string& soft_mode) {
  auto loaded = load_checkpoint(ckpt_path);
  Model& model = *loaded.model;
  model.cfg.score_thresh = score_thresh;
  model.cfg.topk = topk;
  model.cfg.nms_thresh = nms_thresh;
  model.cfg.nms_mode = soft ? "soft" : "hard";
  model.cfg.soft_nms_mode = soft_mode;

  auto image = read_bmp(image_path);
  if (image->shape.h != model.cfg.image_size || image->shape.w != model.cfg.image_size) {
    model.resize_input(image->shape.h, image->shape.w);
  }
  auto fwd = model.forward(nullptr, image, false);
  const auto dets = detect_image(fwd, model, 0);
  write_detections_file(out_path, dets);
  std::printf("%zu detections -> %s\n", dets.size(), out_path.c_str());

  if (!draw_path.empty()) {
    const std::array<std::array<double, 3>, 3> palette{
        {{1.0, 0.2, 0.2}, {0.2, 1.0, 0.2}, {0.3, 0.5, 1.0}}};
    Tensor annotated = *image;
    for (const auto& d : dets) {
      if (d.score < 0.5) continue;
      draw_box_outline(annotated, 0, d.box, palette[d.class_id % 3]);
    }
    write_bmp(draw_path, annotated);
    std::printf("annotated image -> %s\n", draw_path.c_str());
  }
  return 0;
}

int cmd_eval(const std::string& ckpt_path, const std::string& out_prefix, int scenes,
             std::uint64_t seed_base, bool has_seed_base) {
  auto loaded = load_checkpoint(ckpt_path);
  Config cfg = loaded.cfg;
  if (scenes > 0) cfg.eval_scenes = scenes;
  if (has_seed_base) cfg.eval_seed_base = seed_base;
  const std::uint64_t t0 = cfg.train_seed_base, t1 = t0 + cfg.train_scenes;
  const std::uint64_t e0 = cfg.eval_seed_base, e1 = e0 + cfg.eval_scenes;
  if (t0 < e1 && e0 < t1) {
    std::fprintf(stderr,
                 "warning: eval seed range [%llu, %llu) overlaps the training range "
                 "[%llu, %llu); scores will be optimistic\n",
                 static_cast<unsigned long long>(e0), static_cast<unsigned long long>(e1),
                 static_cast<unsigned long long>(t0), static_cast<unsigned long long>(t1));
  }

  const SceneSpec spec = spec_from_config(cfg);
  std::vector<Scene> eval_scenes;
  for (int i = 0; i < cfg.eval_scenes; ++i) {
    eval_scenes.push_back(generate_scene(cfg.eval_seed_base + i, spec));
  }
  const auto images = evaluate_scenes(*loaded.model, eval_scenes);
  const EvalReport rep = map_sweep(images, cfg.object_classes());
  write_eval_report_text(out_prefix + ".txt", rep);
  write_eval_report_json(out_prefix + ".json", rep);
  for (size_t i = 0; i < rep.thresholds.size(); ++i) {
    std::printf("map@%.2f %.4f\n", rep.thresholds[i], rep.map_at[i]);
  }
  std::printf("report -> %s.txt / %s.json\n", out_prefix.c_str(), out_prefix.c_str());
  return 0;
}

int cmd_analyze(const std::string& ckpt_path, const std::string& out_prefix, int scenes) {
  auto loaded = load_checkpoint(ckpt_path);
  const Config& cfg = loaded.cfg;
  const SceneSpec spec = spec_from_config(cfg);
  std::vector<Scene> sample;
  const int n = scenes > 0 ? scenes : cfg.eval_scenes;
  for (int i = 0; i < n; ++i) {
    sample.push_back(generate_scene(cfg.eval_seed_base + i, spec));
  }
  const auto inputs = match_stats_inputs(*loaded.model, sample);
  const MatchStatsReport rep = matched_box_stats(inputs, cfg.match_threshold);
  write_match_stats_text(out_prefix + ".buckets.txt", out_prefix + ".batches.txt", rep);
  std::printf("matched boxes: initial %lld adjusted %lld (cov %.4f -> %.4f)\n",
              static_cast<long long>(rep.total_initial),
              static_cast<long long>(rep.total_adjusted), rep.initial_cov,
              rep.adjusted_cov);
  std::printf("series -> %s.buckets.txt / %s.batches.txt\n", out_prefix.c_str(),
              out_prefix.c_str());
  return 0;
}

int cmd_count_params(const std::string& preset, const std::string& config_file,
                     bool by_name) {
  const Config cfg = resolve_config(preset, config_file);
  Model model(cfg);
  const auto counts = model.count_parameters();
  i64 backbone = 0, fpn = 0, propose = 0, attend = 0;
  for (const auto& [name, count] : counts) {
    if (by_name) std::printf("%-36s %8lld\n", name.c_str(), static_cast<long long>(count));
    if (name.rfind("backbone.", 0) == 0) backbone += count;
    if (name.rfind("fpn.", 0) == 0) fpn += count;
    if (name.rfind("head.propose.", 0) == 0) propose += count;
    if (name.rfind("head.attend.", 0) == 0) attend += count;
  }
  std::printf("backbone      %10lld\n", static_cast<long long>(backbone));
  std::printf("fpn           %10lld\n", static_cast<long long>(fpn));
  std::printf("head.propose  %10lld\n", static_cast<long long>(propose));
  std::printf("head.attend   %10lld\n", static_cast<long long>(attend));
  std::printf("total         %10lld (%.2fM)\n",
              static_cast<long long>(model.total_parameters()),
              model.total_parameters() / 1e6);
  return 0;
}

#define SELFCHECK(name, cond)                              \
  do {                                                     \
    const bool ok_ = (cond);                               \
    std::printf("%s %s\n", ok_ ? "ok  " : "FAIL", (name)); \
    if (!ok_) failures++;                                  \
  } while (0)

int cmd_selftest() {
  int failures = 0;
  Rng rng(20240901);

  {  // offseted convolution against both reductions
    bool zero_ok = true, ref_ok = true;
    for (int t = 0; t < 20; ++t) {
      const int k = t % 2 ? 1 : 3;
      const int cin = rng.uniform_int(1, 3), cout = rng.uniform_int(1, 3);
      const int hw = rng.uniform_int(3, 7);
      auto x = make_tensor({1, cin, hw, hw});
      for (double& v : x->v) v = rng.uniform(-1, 1);
      auto w = make_tensor({cout, cin, k, k});
      for (double& v : w->v) v = rng.uniform(-1, 1);
      OffsetField zero = OffsetField::zeros(1, k, 1, hw, hw);
      auto a = offset_conv2d(nullptr, x, w, nullptr, zero, 0);
      auto b = conv2d(nullptr, x, w, nullptr, 1, k / 2, 1);
      for (size_t i = 0; i < a->v.size(); ++i) {
        if (std::abs(a->v[i] - b->v[i]) > 1e-12) zero_ok = false;
      }
      OffsetField off = OffsetField::zeros(1, k, 1, hw, hw);
      for (double& v : off.t->v) v = rng.uniform(-2, 2);
      auto c = offset_conv2d(nullptr, x, w, nullptr, off, 0);
      Tensor want = ref::naive_offset_conv2d(*x, *w, {}, off, 0);
      for (size_t i = 0; i < c->v.size(); ++i) {
        if (std::abs(c->v[i] - want.v[i]) > 1e-10) ref_ok = false;
      }
    }
    SELFCHECK("offseted conv reduces to conv2d at zero offsets", zero_ok);
    SELFCHECK("offseted conv matches the gather-dot reference", ref_ok);
  }

  {  // gradient check on a small conv net
    auto x = make_tensor({1, 2, 5, 5});
    auto w = make_tensor({4, 2, 3, 3});
    auto b = make_tensor({1, 4, 1, 1});
    for (double& v : x->v) v = rng.uniform(-1, 1);
    for (double& v : w->v) v = rng.uniform(-0.5, 0.5);
    for (double& v : b->v) v = rng.uniform(-0.2, 0.2);
    std::vector<ClsEntry> cls{{0, 0, 2, 2, 4, 1}};
    std::vector<RegEntry> regs{{0, 0, 1, 1, {0.2, -0.1, 0.4, 0.8}, true, 0.6, 0.3}};
    auto run = [&](Tape* tape) {
      auto y = conv2d(tape, x, w, b, 1, 1, 1);
      auto act = relu(tape, y);
      auto loss = add(tape, softmax_ce_sum(tape, act, cls), smooth_l1_sum(tape, y, regs));
      if (tape) tape->backward(loss);
      return loss->v[0];
    };
    Tape tape;
    run(&tape);
    auto f = [&]() { return run(nullptr); };
    double worst = 0.0;
    for (const TensorRef& p : {x, w, b}) {
      std::vector<double> analytic = p->g;
      std::vector<double> fd = ref::fd_gradient(f, p->v);
      worst = std::max(worst, ref::max_rel_err(analytic, fd));
    }
    SELFCHECK("analytic gradients match finite differences", worst < 1e-4);
  }

  {  // box algebra
    bool round_ok = true, clip_ok = true;
    for (int i = 0; i < 10000; ++i) {
      const Box b{rng.uniform(0, 100), rng.uniform(0, 100), rng.uniform(1, 60),
                  rng.uniform(1, 60)};
      const Box g{rng.uniform(0, 100), rng.uniform(0, 100), rng.uniform(1, 60),
                  rng.uniform(1, 60)};
      const Box back = decode(encode(g, b), b);
      if (std::abs(back.cx - g.cx) > 1e-9 * std::max(1.0, std::abs(g.cx)) ||
          std::abs(back.w - g.w) > 1e-9 * g.w) {
        round_ok = false;
      }
      const double cx = rng.uniform(1, 32);
      const BoxDelta clipped =
          clip_delta({rng.uniform(-12, 12), rng.uniform(-12, 12), 0, 0}, b, cx, cx);
      const Box adj = decode(clipped, b);
      if (std::abs(adj.cx - b.cx) >= cx / 2) clip_ok = false;
    }
    SELFCHECK("encode/decode roundtrip under 1e-9", round_ok);
    SELFCHECK("clipped centers stay within half a stride", clip_ok);
  }

  {  // matching and mining against oracles
    bool match_ok = true, mine_ok = true;
    for (int t = 0; t < 50; ++t) {
      std::vector<Box> anchors;
      for (int i = 0; i < 150; ++i) {
        anchors.push_back({rng.uniform(0, 100), rng.uniform(0, 100), rng.uniform(4, 50),
                           rng.uniform(4, 50)});
      }
      std::vector<GtBox> gts;
      for (int j = 0; j < 4; ++j) {
        gts.push_back({{rng.uniform(0, 100), rng.uniform(0, 100), rng.uniform(4, 50),
                        rng.uniform(4, 50)},
                       rng.uniform_int(0, 2)});
      }
      const auto got = match(anchors, gts);
      const auto want = ref::match_bruteforce(anchors, gts, 0.5);
      for (size_t i = 0; i < anchors.size(); ++i) {
        const bool pos = got[i].label == MatchResult::Label::positive;
        if (pos != (want[i] >= 0) || (pos && got[i].matched_gt != want[i])) {
          match_ok = false;
        }
      }
      std::vector<double> losses(anchors.size());
      for (double& v : losses) v = rng.uniform(0, 3);
      const auto mined = mine_hard_negatives(got, losses, 3.0);
      const auto kept_ref = ref::mine_bruteforce(got, losses, 3.0);
      std::vector<int> kept;
      for (size_t i = 0; i < mined.size(); ++i) {
        if (got[i].label == MatchResult::Label::negative &&
            mined[i].label == MatchResult::Label::negative) {
          kept.push_back(static_cast<int>(i));
        }
      }
      if (kept != kept_ref) mine_ok = false;
    }
    SELFCHECK("matching agrees with the brute-force oracle", match_ok);
    SELFCHECK("hard-negative mining agrees with the sorting oracle", mine_ok);
  }

  {  // suppression against references
    bool nms_ok = true, soft_ok = true;
    for (int t = 0; t < 200; ++t) {
      std::vector<Detection> dets;
      const int n = rng.uniform_int(1, 40);
      for (int i = 0; i < n; ++i) {
        dets.push_back({{rng.uniform(5, 60), rng.uniform(5, 60), rng.uniform(4, 25),
                         rng.uniform(4, 25)},
                        0, rng.uniform(0.011, 1.0)});
      }
      const auto a = nms(dets, 0.45);
      const auto b = ref::nms_reference(dets, 0.45);
      if (a.size() != b.size()) nms_ok = false;
      SoftNmsParams p;
      const auto c = soft_nms(dets, p);
      const auto d = ref::soft_nms_reference(dets, p);
      if (c.size() != d.size()) soft_ok = false;
      for (size_t i = 0; i < c.size() && i < d.size(); ++i) {
        if (std::abs(c[i].score - d[i].score) > 1e-12) soft_ok = false;
      }
    }
    SELFCHECK("nms agrees with the quadratic reference", nms_ok);
    SELFCHECK("soft-nms agrees with the recurrence reference", soft_ok);
  }

  {  // average precision against the independent evaluator
    bool ap_ok = true;
    for (int t = 0; t < 50; ++t) {
      std::vector<ImageEval> images(4);
      for (auto& img : images) {
        const int n_gt = rng.uniform_int(0, 3);
        for (int g = 0; g < n_gt; ++g) {
          img.gts.push_back({{rng.uniform(10, 90), rng.uniform(10, 90),
                              rng.uniform(6, 40), rng.uniform(6, 40)},
                             rng.uniform_int(0, 1)});
        }
        const int n_det = rng.uniform_int(0, 6);
        for (int d = 0; d < n_det; ++d) {
          Box box{rng.uniform(10, 90), rng.uniform(10, 90), rng.uniform(6, 40),
                  rng.uniform(6, 40)};
          if (!img.gts.empty() && rng.bernoulli(0.5)) {
            const auto& src =
                img.gts[rng.uniform_int(0, static_cast<int>(img.gts.size()) - 1)];
            box = {src.box.cx + rng.uniform(-5, 5), src.box.cy + rng.uniform(-5, 5),
                   src.box.w * rng.uniform(0.8, 1.3), src.box.h * rng.uniform(0.8, 1.3)};
          }
          img.dets.push_back({box, rng.uniform_int(0, 1), rng.uniform(0.1, 1.0)});
        }
      }
      for (int c = 0; c < 2; ++c) {
        const double got = average_precision(images, c, 0.5);
        const double want = ref::ap_reference(images, c, 0.5);
        if (std::abs(got - want) > 1e-10) ap_ok = false;
      }
    }
    SELFCHECK("average precision agrees with the independent evaluator", ap_ok);
  }

  {  // loss and schedule contracts
    std::vector<MatchResult> none(5);
    std::vector<std::vector<double>> logits(5, {0.0, 0.1, -0.2, 0.4});
    std::vector<std::array<double, 4>> deltas(5, {0, 0, 0, 0});
    const auto zero = process_loss(none, logits, deltas);
    SELFCHECK("zero positives give exactly zero process loss",
              zero.cls_loss == 0.0 && zero.reg_loss == 0.0);
    LrSchedule s;
    s.steps_per_epoch = 10;
    SELFCHECK("warmup endpoints are exact",
              lr_at(0, s) == 1e-6 && lr_at(50, s) == s.base_lr);
  }

  std::printf(failures == 0 ? "selftest passed\n" : "selftest FAILED (%d)\n", failures);
  return failures == 0 ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"propose-and-attend single-shot detector"};
  app.require_subcommand(1);

  std::string preset = "desk", config_file, out_dir = "run", dataset_cache;
  std::uint64_t seed = 0;
  int epochs = 0, eval_every = 0, match_stats_every = 0, warmup_epochs = 5;
  double neg_ratio = 3.0;
  bool verbose = false;

  auto* train = app.add_subcommand("train", "train on the synthetic shapes dataset");
  train->add_option("--preset", preset, "desk or paper");
  train->add_option("--config", config_file, "key = value overrides");
  train->add_option("--out", out_dir, "output directory for checkpoints and metrics");
  train->add_option("--dataset-cache", dataset_cache, "binary scene cache path");
  auto* seed_opt = train->add_option("--seed", seed, "training seed");
  train->add_option("--epochs", epochs, "override epoch count");
  train->add_option("--neg-ratio", neg_ratio, "hard-negative ratio");
  train->add_option("--warmup-epochs", warmup_epochs, "linear warmup epochs");
  train->add_option("--eval-every", eval_every, "epochs between held-out evals");
  train->add_option("--match-stats-every", match_stats_every,
                    "epochs between matched-box stats");
  train->add_flag("--verbose", verbose);

  std::string ckpt, image_path, out_path = "detections.txt", draw_path;
  double score_thresh = 0.01, nms_thresh = 0.45;
  int topk = 200;
  bool soft = false;
  std::string soft_mode = "linear";
  auto* infer = app.add_subcommand("infer", "run detection on a BMP image");
  infer->add_option("checkpoint", ckpt)->required();
  infer->add_option("image", image_path)->required();
  infer->add_option("--out", out_path, "detections file");
  infer->add_option("--draw", draw_path, "write an annotated BMP");
  infer->add_option("--score-thresh", score_thresh);
  infer->add_option("--topk", topk);
  infer->add_option("--nms-thresh", nms_thresh);
  infer->add_flag("--soft-nms", soft);
  infer->add_option("--soft-nms-mode", soft_mode, "linear or gaussian");

  std::string eval_prefix = "eval_report";
  int eval_scenes = 0;
  std::uint64_t eval_seed_base = 0;
  auto* eval_cmd = app.add_subcommand("eval", "evaluate on a held-out split");
  eval_cmd->add_option("checkpoint", ckpt)->required();
  eval_cmd->add_option("--out-prefix", eval_prefix);
  eval_cmd->add_option("--scenes", eval_scenes, "held-out scene count");
  auto* seed_base_opt = eval_cmd->add_option("--seed-base", eval_seed_base);

  std::string analyze_prefix = "match_stats";
  int analyze_scenes = 0;
  auto* analyze = app.add_subcommand("analyze-matching",
                                     "matched default boxes, initial vs adjusted");
  analyze->add_option("checkpoint", ckpt)->required();
  analyze->add_option("--out-prefix", analyze_prefix);
  analyze->add_option("--scenes", analyze_scenes);

  bool by_name = false;
  auto* count = app.add_subcommand("count-params", "parameter accounting");
  count->add_option("--preset", preset, "desk or paper");
  count->add_option("--config", config_file);
  count->add_flag("--by-name", by_name, "list every parameter");

  app.add_subcommand("selftest", "run the oracle suites");

  CLI11_PARSE(app, argc, argv);

  try {
    if (app.got_subcommand("train")) {
      return cmd_train(preset, config_file, out_dir, dataset_cache, seed,
                       seed_opt->count() > 0, epochs, neg_ratio, warmup_epochs, verbose,
                       eval_every, match_stats_every);
    }
    if (app.got_subcommand("infer")) {
      return cmd_infer(ckpt, image_path, out_path, draw_path, score_thresh, topk,
                       nms_thresh, soft, soft_mode);
    }
    if (app.got_subcommand("eval")) {
      return cmd_eval(ckpt, eval_prefix, eval_scenes, eval_seed_base,
                      seed_base_opt->count() > 0);
    }
    if (app.got_subcommand("analyze-matching")) {
      return cmd_analyze(ckpt, analyze_prefix, analyze_scenes);
    }
    if (app.got_subcommand("count-params")) {
      return cmd_count_params(preset, config_file, by_name);
    }
    if (app.got_subcommand("selftest")) {
      return cmd_selftest();
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
