#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace padet {

// Flat run configuration. Serialized as sorted `key = value` lines; the
// digest of that canonical text ties checkpoints to the producing config.
struct Config {
  // model geometry
  int image_size = 128;
  std::vector<int> strides{8, 16, 32};
  double anchor_scale = 4.0;
  std::vector<double> anchor_multipliers{1.0, 1.2599210498948732, 1.5874010519681994};
  int num_classes = 4;  // object classes + background
  int fpn_channels = 32;
  int stem_channels = 16;
  bool use_batch_norm = true;

  // prediction module
  std::string head_mode = "pa";  // pa | plain
  bool propose_clip = true;
  std::string attend_sampling = "adaptive";  // adaptive | fixed
  int attend_dilation = 1;
  bool offset_gradients = false;

  // matching and mining
  double match_threshold = 0.5;
  bool bipartite_matching = false;
  double neg_ratio = 3.0;

  // synthetic data
  int train_scenes = 320;
  int eval_scenes = 96;
  std::uint64_t train_seed_base = 1000;
  std::uint64_t eval_seed_base = 900000;
  double object_min_size = 22.0;
  double object_max_size = 100.0;
  double object_min_aspect = 0.6;
  double object_max_aspect = 1.7;
  int min_objects = 1;
  int max_objects = 3;
  double scene_noise = 0.02;

  // augmentation
  bool augment_enabled = true;
  double aug_flip_prob = 0.5;
  double aug_zoom_prob = 0.5;
  double aug_max_zoom_out = 2.0;
  double aug_max_zoom_in = 1.6;
  double aug_brightness = 0.1;
  double aug_contrast = 0.2;
  double aug_color_gain = 0.1;

  // optimization
  int batch_size = 8;
  int epochs = 20;
  int steps_per_epoch = 40;
  double base_lr = 4e-3;
  double warmup_start_lr = 1e-6;
  int warmup_epochs = 5;
  std::vector<int> milestone_epochs{150, 200};
  double momentum = 0.9;
  double weight_decay = 5e-4;
  std::uint64_t seed = 7;

  // inference
  double score_thresh = 0.01;
  int topk = 200;
  double nms_thresh = 0.45;
  std::string nms_mode = "hard";  // hard | soft
  std::string soft_nms_mode = "linear";
  double soft_nms_sigma = 0.5;
  double soft_nms_thresh = 0.3;

  int object_classes() const { return num_classes - 1; }
};

// Desk-sized training preset (the default-constructed Config).
Config desk_preset();
// Paper-sized geometry (512 input, strides {8,16,32,64}, 256 channels, C=21);
// used for parameter accounting, not for desk training.
Config paper_preset();
Config preset_by_name(const std::string& name);

// Applies `key = value` lines over a base config. '#' starts a comment.
Config parse_config_text(const std::string& text, Config base = Config());
Config load_config_file(const std::string& path, Config base = Config());

std::string canonical_config_text(const Config& cfg);
void save_config_file(const std::string& path, const Config& cfg);
std::uint64_t config_digest(const Config& cfg);

// Schema checks: positive sizes, known modes, divisibility, and disjoint
// train/eval seed ranges. Throws on violation.
void validate_config(const Config& cfg);

}  // namespace padet
