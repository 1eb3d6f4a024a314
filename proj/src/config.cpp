#include "padet/config.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <stdexcept>

namespace padet {

namespace {

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

struct Field {
  std::function<std::string(const Config&)> get;
  std::function<void(Config&, const std::string&)> set;
};

std::string trim(const std::string& s) {
  size_t b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  size_t e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

template <typename T>
std::vector<T> parse_list(const std::string& s, T (*conv)(const std::string&)) {
  std::vector<T> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(conv(item));
  }
  return out;
}

int to_int(const std::string& s) { return std::stoi(s); }
double to_double(const std::string& s) { return std::stod(s); }

bool to_bool(const std::string& s) {
  if (s == "true" || s == "1") return true;
  if (s == "false" || s == "0") return false;
  throw std::invalid_argument("config: bad boolean '" + s + "'");
}

const std::map<std::string, Field>& fields() {
  static const std::map<std::string, Field> table = [] {
    std::map<std::string, Field> f;
    auto add_int = [&](const std::string& k, int Config::*m) {
      f[k] = {[m](const Config& c) { return std::to_string(c.*m); },
              [m](Config& c, const std::string& v) { c.*m = to_int(v); }};
    };
    auto add_u64 = [&](const std::string& k, std::uint64_t Config::*m) {
      f[k] = {[m](const Config& c) { return std::to_string(c.*m); },
              [m](Config& c, const std::string& v) { c.*m = std::stoull(v); }};
    };
    auto add_double = [&](const std::string& k, double Config::*m) {
      f[k] = {[m](const Config& c) { return fmt_double(c.*m); },
              [m](Config& c, const std::string& v) { c.*m = to_double(v); }};
    };
    auto add_bool = [&](const std::string& k, bool Config::*m) {
      f[k] = {[m](const Config& c) { return c.*m ? std::string("true") : "false"; },
              [m](Config& c, const std::string& v) { c.*m = to_bool(v); }};
    };
    auto add_string = [&](const std::string& k, std::string Config::*m) {
      f[k] = {[m](const Config& c) { return c.*m; },
              [m](Config& c, const std::string& v) { c.*m = v; }};
    };
    auto add_int_list = [&](const std::string& k, std::vector<int> Config::*m) {
      f[k] = {[m](const Config& c) {
                std::string s;
                for (size_t i = 0; i < (c.*m).size(); ++i) {
                  if (i) s += ",";
                  s += std::to_string((c.*m)[i]);
                }
                return s;
              },
              [m](Config& c, const std::string& v) { c.*m = parse_list<int>(v, to_int); }};
    };
    auto add_double_list = [&](const std::string& k, std::vector<double> Config::*m) {
      f[k] = {[m](const Config& c) {
                std::string s;
                for (size_t i = 0; i < (c.*m).size(); ++i) {
                  if (i) s += ",";
                  s += fmt_double((c.*m)[i]);
                }
                return s;
              },
              [m](Config& c, const std::string& v) {
                c.*m = parse_list<double>(v, to_double);
              }};
    };

    add_int("image_size", &Config::image_size);
    add_int_list("strides", &Config::strides);
    add_double("anchor_scale", &Config::anchor_scale);
    add_double_list("anchor_multipliers", &Config::anchor_multipliers);
    add_int("num_classes", &Config::num_classes);
    add_int("fpn_channels", &Config::fpn_channels);
    add_int("stem_channels", &Config::stem_channels);
    add_bool("use_batch_norm", &Config::use_batch_norm);
    add_string("head_mode", &Config::head_mode);
    add_bool("propose_clip", &Config::propose_clip);
    add_string("attend_sampling", &Config::attend_sampling);
    add_int("attend_dilation", &Config::attend_dilation);
    add_bool("offset_gradients", &Config::offset_gradients);
    add_double("match_threshold", &Config::match_threshold);
    add_bool("bipartite_matching", &Config::bipartite_matching);
    add_double("neg_ratio", &Config::neg_ratio);
    add_int("train_scenes", &Config::train_scenes);
    add_int("eval_scenes", &Config::eval_scenes);
    add_u64("train_seed_base", &Config::train_seed_base);
    add_u64("eval_seed_base", &Config::eval_seed_base);
    add_double("object_min_size", &Config::object_min_size);
    add_double("object_max_size", &Config::object_max_size);
    add_double("object_min_aspect", &Config::object_min_aspect);
    add_double("object_max_aspect", &Config::object_max_aspect);
    add_int("min_objects", &Config::min_objects);
    add_int("max_objects", &Config::max_objects);
    add_double("scene_noise", &Config::scene_noise);
    add_bool("augment_enabled", &Config::augment_enabled);
    add_double("aug_flip_prob", &Config::aug_flip_prob);
    add_double("aug_zoom_prob", &Config::aug_zoom_prob);
    add_double("aug_max_zoom_out", &Config::aug_max_zoom_out);
    add_double("aug_max_zoom_in", &Config::aug_max_zoom_in);
    add_double("aug_brightness", &Config::aug_brightness);
    add_double("aug_contrast", &Config::aug_contrast);
    add_double("aug_color_gain", &Config::aug_color_gain);
    add_int("batch_size", &Config::batch_size);
    add_int("epochs", &Config::epochs);
    add_int("steps_per_epoch", &Config::steps_per_epoch);
    add_double("base_lr", &Config::base_lr);
    add_double("warmup_start_lr", &Config::warmup_start_lr);
    add_int("warmup_epochs", &Config::warmup_epochs);
    add_int_list("milestone_epochs", &Config::milestone_epochs);
    add_double("momentum", &Config::momentum);
    add_double("weight_decay", &Config::weight_decay);
    add_u64("seed", &Config::seed);
    add_double("score_thresh", &Config::score_thresh);
    add_int("topk", &Config::topk);
    add_double("nms_thresh", &Config::nms_thresh);
    add_string("nms_mode", &Config::nms_mode);
    add_string("soft_nms_mode", &Config::soft_nms_mode);
    add_double("soft_nms_sigma", &Config::soft_nms_sigma);
    add_double("soft_nms_thresh", &Config::soft_nms_thresh);
    return f;
  }();
  return table;
}

}  // namespace

Config desk_preset() { return Config(); }

Config paper_preset() {
  Config c;
  c.image_size = 512;
  c.strides = {8, 16, 32, 64};
  c.num_classes = 21;
  c.fpn_channels = 256;
  c.stem_channels = 64;
  c.batch_size = 32;
  c.epochs = 250;
  c.base_lr = 4e-3;
  c.warmup_epochs = 5;
  c.milestone_epochs = {150, 200};
  return c;
}

Config preset_by_name(const std::string& name) {
  if (name == "desk") return desk_preset();
  if (name == "paper") return paper_preset();
  throw std::invalid_argument("unknown preset '" + name + "' (expected desk or paper)");
}

Config parse_config_text(const std::string& text, Config base) {
  std::stringstream ss(text);
  std::string line;
  int line_no = 0;
  while (std::getline(ss, line)) {
    ++line_no;
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const size_t eq = line.find('=');
    if (eq == std::string::npos) {
      throw std::invalid_argument("config line " + std::to_string(line_no) +
                                  ": expected 'key = value', got '" + line + "'");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    auto it = fields().find(key);
    if (it == fields().end()) {
      throw std::invalid_argument("config line " + std::to_string(line_no) +
                                  ": unknown key '" + key + "'");
    }
    it->second.set(base, value);
  }
  return base;
}

Config load_config_file(const std::string& path, Config base) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open config file " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_config_text(ss.str(), std::move(base));
}

std::string canonical_config_text(const Config& cfg) {
  std::string out;
  for (const auto& [key, field] : fields()) {
    out += key + " = " + field.get(cfg) + "\n";
  }
  return out;
}

void save_config_file(const std::string& path, const Config& cfg) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot open " + path + " for writing");
  f << canonical_config_text(cfg);
}

std::uint64_t config_digest(const Config& cfg) {
  // FNV-1a over the canonical text
  const std::string text = canonical_config_text(cfg);
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

void validate_config(const Config& cfg) {
  if (cfg.image_size <= 0) throw std::invalid_argument("config: image_size must be positive");
  if (cfg.strides.empty()) throw std::invalid_argument("config: no strides");
  for (size_t i = 0; i < cfg.strides.size(); ++i) {
    if (cfg.image_size % cfg.strides[i] != 0) {
      throw std::invalid_argument("config: image_size " + std::to_string(cfg.image_size) +
                                  " not divisible by stride " +
                                  std::to_string(cfg.strides[i]));
    }
    if (i > 0 && (cfg.strides[i] <= cfg.strides[i - 1] ||
                  cfg.strides[i] % cfg.strides[i - 1] != 0)) {
      throw std::invalid_argument("config: strides must be increasing multiples");
    }
  }
  if (cfg.anchor_multipliers.empty()) {
    throw std::invalid_argument("config: no anchor multipliers");
  }
  if (cfg.num_classes < 2) throw std::invalid_argument("config: need >= 2 classes");
  if (cfg.head_mode != "pa" && cfg.head_mode != "plain") {
    throw std::invalid_argument("config: head_mode must be pa or plain");
  }
  if (cfg.attend_sampling != "adaptive" && cfg.attend_sampling != "fixed") {
    throw std::invalid_argument("config: attend_sampling must be adaptive or fixed");
  }
  if (cfg.head_mode == "plain" && cfg.attend_sampling == "adaptive") {
    throw std::invalid_argument(
        "config: the plain head has no proposing stage to derive offsets from; "
        "use attend_sampling = fixed");
  }
  if (cfg.nms_mode != "hard" && cfg.nms_mode != "soft") {
    throw std::invalid_argument("config: nms_mode must be hard or soft");
  }
  if (cfg.match_threshold <= 0.0 || cfg.match_threshold >= 1.0) {
    throw std::invalid_argument("config: match_threshold must lie in (0,1)");
  }
  if (cfg.neg_ratio < 0.0) throw std::invalid_argument("config: neg_ratio must be >= 0");
  if (cfg.batch_size < 1 || cfg.epochs < 0 || cfg.steps_per_epoch < 1) {
    throw std::invalid_argument("config: bad training sizes");
  }
  // train/eval seed ranges must not overlap
  const std::uint64_t t0 = cfg.train_seed_base, t1 = t0 + cfg.train_scenes;
  const std::uint64_t e0 = cfg.eval_seed_base, e1 = e0 + cfg.eval_scenes;
  if (t0 < e1 && e0 < t1) {
    throw std::invalid_argument("config: train and eval seed ranges overlap");
  }
}

}  // namespace padet
