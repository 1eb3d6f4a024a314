#include "padet/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace padet {

namespace {

struct ShapeInstance {
  int class_id;
  double cx, cy, w, h;
  double color[3];

  bool contains(double px, double py) const {
    const double dx = px - cx;
    const double dy = py - cy;
    switch (class_id) {
      case 0: {  // disc (ellipse for safety; w == h in practice)
        const double nx = dx / (0.5 * w);
        const double ny = dy / (0.5 * h);
        return nx * nx + ny * ny <= 1.0;
      }
      case 1:  // square
        return std::abs(dx) <= 0.5 * w && std::abs(dy) <= 0.5 * h;
      default: {  // isosceles triangle, apex up
        const double t = (py - (cy - 0.5 * h)) / h;  // 0 at apex, 1 at base
        if (t < 0.0 || t > 1.0) return false;
        return std::abs(dx) <= 0.5 * w * t;
      }
    }
  }
};

// Bilinear sample in pixel-index coordinates, clamped to the image border.
double sample_clamped(const Tensor& img, int c, double iy, double ix) {
  const int h = img.shape.h, w = img.shape.w;
  const double y = std::clamp(iy, 0.0, static_cast<double>(h - 1));
  const double x = std::clamp(ix, 0.0, static_cast<double>(w - 1));
  const int y0 = std::min(static_cast<int>(y), h - 2 >= 0 ? h - 2 : 0);
  const int x0 = std::min(static_cast<int>(x), w - 2 >= 0 ? w - 2 : 0);
  const double ly = y - y0, lx = x - x0;
  const double v00 = img.at(0, c, y0, x0);
  const double v01 = img.at(0, c, y0, std::min(x0 + 1, w - 1));
  const double v10 = img.at(0, c, std::min(y0 + 1, h - 1), x0);
  const double v11 = img.at(0, c, std::min(y0 + 1, h - 1), std::min(x0 + 1, w - 1));
  return (1 - ly) * ((1 - lx) * v00 + lx * v01) + ly * ((1 - lx) * v10 + lx * v11);
}

}  // namespace

Scene generate_scene(std::uint64_t seed, const SceneSpec& spec) {
  if (spec.max_size > spec.canvas - 4 || spec.min_size < 3 ||
      spec.min_size > spec.max_size || spec.min_objects < 1 ||
      spec.max_objects < spec.min_objects) {
    throw std::invalid_argument("generate_scene: impossible scene spec");
  }
  Rng rng(mix_seed(0x5ce9e5ull, seed));
  Scene scene;
  scene.seed = seed;
  const int hw = spec.canvas;
  scene.image = make_tensor({1, 3, hw, hw});
  Tensor& img = *scene.image;

  double bg[3];
  for (double& c : bg) c = rng.uniform(0.08, 0.42);
  for (int c = 0; c < 3; ++c) {
    double* map = &img.v[img.index(0, c, 0, 0)];
    std::fill(map, map + static_cast<size_t>(hw) * hw, bg[c]);
  }

  const int n_objects = rng.uniform_int(spec.min_objects, spec.max_objects);
  std::vector<ShapeInstance> placed;
  for (int k = 0; k < n_objects; ++k) {
    ShapeInstance inst{};
    bool ok = false;
    for (int attempt = 0; attempt < spec.max_place_attempts && !ok; ++attempt) {
      inst.class_id = rng.uniform_int(0, spec.num_shape_classes - 1);
      inst.w = rng.uniform(spec.min_size, spec.max_size);
      inst.h = inst.class_id == 0
                   ? inst.w
                   : std::clamp(inst.w * rng.uniform(spec.min_aspect, spec.max_aspect),
                                spec.min_size * spec.min_aspect,
                                static_cast<double>(spec.canvas - 4));
      inst.cx = rng.uniform(0.5 * inst.w + 1.0, hw - 0.5 * inst.w - 1.0);
      inst.cy = rng.uniform(0.5 * inst.h + 1.0, hw - 0.5 * inst.h - 1.0);
      ok = true;
      for (const auto& other : placed) {
        const Box a{inst.cx, inst.cy, inst.w, inst.h};
        const Box b{other.cx, other.cy, other.w, other.h};
        if (iou(a, b) > spec.max_overlap) {
          ok = false;
          break;
        }
      }
    }
    if (!ok) continue;
    for (int attempt = 0; attempt < 16; ++attempt) {
      double dist = 0.0;
      for (int c = 0; c < 3; ++c) {
        inst.color[c] = rng.uniform(0.35, 1.0);
        dist += std::abs(inst.color[c] - bg[c]);
      }
      if (dist >= 0.45) break;
    }
    placed.push_back(inst);
    scene.annotations.push_back({{inst.cx, inst.cy, inst.w, inst.h}, inst.class_id});
  }

  // rasterize with 2x2 supersampling for soft edges
  for (const auto& inst : placed) {
    const int x0 = std::max(0, static_cast<int>(std::floor(inst.cx - 0.5 * inst.w)) - 1);
    const int x1 = std::min(hw - 1, static_cast<int>(std::ceil(inst.cx + 0.5 * inst.w)) + 1);
    const int y0 = std::max(0, static_cast<int>(std::floor(inst.cy - 0.5 * inst.h)) - 1);
    const int y1 = std::min(hw - 1, static_cast<int>(std::ceil(inst.cy + 0.5 * inst.h)) + 1);
    for (int y = y0; y <= y1; ++y) {
      for (int x = x0; x <= x1; ++x) {
        int hits = 0;
        for (int sy = 0; sy < 2; ++sy) {
          for (int sx = 0; sx < 2; ++sx) {
            if (inst.contains(x + 0.25 + 0.5 * sx, y + 0.25 + 0.5 * sy)) ++hits;
          }
        }
        if (hits == 0) continue;
        const double cov = hits / 4.0;
        for (int c = 0; c < 3; ++c) {
          double& px = img.at(0, c, y, x);
          px = (1.0 - cov) * px + cov * inst.color[c];
        }
      }
    }
  }

  if (spec.noise > 0.0) {
    for (double& v : img.v) {
      v = std::clamp(v + rng.uniform(-spec.noise, spec.noise), 0.0, 1.0);
    }
  }
  return scene;
}

namespace {

Scene flip_horizontal(const Scene& scene) {
  const Shape4 s = scene.image->shape;
  Scene out;
  out.seed = scene.seed;
  out.image = make_tensor(s);
  for (int c = 0; c < 3; ++c) {
    for (int y = 0; y < s.h; ++y) {
      const double* src = &scene.image->v[scene.image->index(0, c, y, 0)];
      double* dst = &out.image->v[out.image->index(0, c, y, 0)];
      for (int x = 0; x < s.w; ++x) dst[x] = src[s.w - 1 - x];
    }
  }
  out.annotations = scene.annotations;
  for (auto& a : out.annotations) a.box.cx = s.w - a.box.cx;
  return out;
}

Scene zoom_out(const Scene& scene, Rng& rng, double min_factor, double max_factor) {
  const Shape4 s = scene.image->shape;
  const double z = rng.uniform(min_factor, max_factor);
  const double ox = rng.uniform(0.0, (z - 1.0) * s.w);
  const double oy = rng.uniform(0.0, (z - 1.0) * s.h);
  double mean[3] = {0, 0, 0};
  for (int c = 0; c < 3; ++c) {
    const double* map = &scene.image->v[scene.image->index(0, c, 0, 0)];
    double acc = 0.0;
    for (i64 i = 0; i < static_cast<i64>(s.h) * s.w; ++i) acc += map[i];
    mean[c] = acc / (static_cast<double>(s.h) * s.w);
  }
  Scene out;
  out.seed = scene.seed;
  out.image = make_tensor(s);
  for (int y = 0; y < s.h; ++y) {
    for (int x = 0; x < s.w; ++x) {
      const double px = (x + 0.5) * z - ox;  // continuous source coords
      const double py = (y + 0.5) * z - oy;
      for (int c = 0; c < 3; ++c) {
        double v;
        if (px < 0.0 || px > s.w || py < 0.0 || py > s.h) {
          v = mean[c];
        } else {
          v = sample_clamped(*scene.image, c, py - 0.5, px - 0.5);
        }
        out.image->at(0, c, y, x) = v;
      }
    }
  }
  for (const auto& a : scene.annotations) {
    Box b{(a.box.cx + ox) / z, (a.box.cy + oy) / z, a.box.w / z, a.box.h / z};
    if (b.w > 1.0 && b.h > 1.0) out.annotations.push_back({b, a.class_id});
  }
  return out;
}

Scene zoom_in(const Scene& scene, Rng& rng, double min_factor, double max_factor) {
  const Shape4 s = scene.image->shape;
  if (scene.annotations.empty()) return scene;
  const double z = rng.uniform(min_factor, max_factor);
  const double cw = s.w / z;
  const double ch = s.h / z;
  const auto& target =
      scene.annotations[rng.uniform_int(0, static_cast<int>(scene.annotations.size()) - 1)];
  const double eps = 2.0;
  const double lo_x = std::max(0.0, target.box.cx - cw + eps);
  const double hi_x = std::min(s.w - cw, target.box.cx - eps);
  const double lo_y = std::max(0.0, target.box.cy - ch + eps);
  const double hi_y = std::min(s.h - ch, target.box.cy - eps);
  const double ox = lo_x >= hi_x ? lo_x : rng.uniform(lo_x, hi_x);
  const double oy = lo_y >= hi_y ? lo_y : rng.uniform(lo_y, hi_y);

  Scene out;
  out.seed = scene.seed;
  out.image = make_tensor(s);
  for (int y = 0; y < s.h; ++y) {
    for (int x = 0; x < s.w; ++x) {
      const double px = ox + (x + 0.5) / z;
      const double py = oy + (y + 0.5) / z;
      for (int c = 0; c < 3; ++c) {
        out.image->at(0, c, y, x) = sample_clamped(*scene.image, c, py - 0.5, px - 0.5);
      }
    }
  }
  for (const auto& a : scene.annotations) {
    if (a.box.cx < ox || a.box.cx > ox + cw || a.box.cy < oy || a.box.cy > oy + ch) {
      continue;  // center left the crop
    }
    Box b{(a.box.cx - ox) * z, (a.box.cy - oy) * z, a.box.w * z, a.box.h * z};
    b = clamp_box(b, s.w, s.h);
    if (b.w > 1.0 && b.h > 1.0) out.annotations.push_back({b, a.class_id});
  }
  return out;
}

}  // namespace

Scene augment(const Scene& scene, Rng& rng, const AugmentParams& params) {
  Scene out;
  out.seed = scene.seed;
  out.image = std::make_shared<Tensor>(*scene.image);
  out.annotations = scene.annotations;

  // photometric distortion; an identity draw stays bit-exact
  const double brightness = rng.uniform(-params.brightness, params.brightness);
  const double contrast = 1.0 + rng.uniform(-params.contrast, params.contrast);
  double gain[3];
  for (double& g : gain) g = 1.0 + rng.uniform(-params.color_gain, params.color_gain);
  const bool identity =
      brightness == 0.0 && contrast == 1.0 && gain[0] == 1.0 && gain[1] == 1.0 && gain[2] == 1.0;
  for (int c = 0; c < 3 && !identity; ++c) {
    double* map = &out.image->v[out.image->index(0, c, 0, 0)];
    const i64 sz = static_cast<i64>(out.image->shape.h) * out.image->shape.w;
    for (i64 i = 0; i < sz; ++i) {
      map[i] = std::clamp(((map[i] - 0.5) * contrast + 0.5 + brightness) * gain[c], 0.0, 1.0);
    }
  }

  if (rng.bernoulli(params.flip_prob)) out = flip_horizontal(out);

  if (rng.bernoulli(params.zoom_prob)) {
    if (rng.bernoulli(0.5)) {
      out = zoom_in(out, rng, params.min_zoom_in, params.max_zoom_in);
    } else {
      out = zoom_out(out, rng, params.min_zoom_out, params.max_zoom_out);
    }
  }
  return out;
}

namespace {

template <typename T>
void write_raw(std::ofstream& f, const T& v) {
  f.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_raw(std::ifstream& f) {
  T v{};
  f.read(reinterpret_cast<char*>(&v), sizeof(T));
  return v;
}

constexpr char kDatasetMagic[8] = {'P', 'A', 'D', 'S', 'E', 'T', '0', '1'};

}  // namespace

void save_dataset(const std::string& path, const std::vector<Scene>& scenes) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("save_dataset: cannot open " + path);
  f.write(kDatasetMagic, 8);
  write_raw<std::uint32_t>(f, 1);  // version
  write_raw<std::uint32_t>(f, static_cast<std::uint32_t>(scenes.size()));
  for (const auto& s : scenes) {
    write_raw<std::uint64_t>(f, s.seed);
    write_raw<std::int32_t>(f, s.image->shape.c);
    write_raw<std::int32_t>(f, s.image->shape.h);
    write_raw<std::int32_t>(f, s.image->shape.w);
    f.write(reinterpret_cast<const char*>(s.image->v.data()),
            static_cast<std::streamsize>(s.image->v.size() * sizeof(double)));
    write_raw<std::uint32_t>(f, static_cast<std::uint32_t>(s.annotations.size()));
    for (const auto& a : s.annotations) {
      write_raw<std::int32_t>(f, a.class_id);
      write_raw<double>(f, a.box.cx);
      write_raw<double>(f, a.box.cy);
      write_raw<double>(f, a.box.w);
      write_raw<double>(f, a.box.h);
    }
  }
}

std::vector<Scene> load_dataset(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("load_dataset: cannot open " + path);
  char magic[8];
  f.read(magic, 8);
  if (!f || std::memcmp(magic, kDatasetMagic, 8) != 0) {
    throw std::runtime_error("load_dataset: bad magic in " + path);
  }
  const auto version = read_raw<std::uint32_t>(f);
  if (version != 1) {
    throw std::runtime_error("load_dataset: unsupported version " +
                             std::to_string(version));
  }
  const auto count = read_raw<std::uint32_t>(f);
  std::vector<Scene> scenes;
  scenes.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    Scene s;
    s.seed = read_raw<std::uint64_t>(f);
    const int c = read_raw<std::int32_t>(f);
    const int h = read_raw<std::int32_t>(f);
    const int w = read_raw<std::int32_t>(f);
    s.image = make_tensor({1, c, h, w});
    f.read(reinterpret_cast<char*>(s.image->v.data()),
           static_cast<std::streamsize>(s.image->v.size() * sizeof(double)));
    const auto n_ann = read_raw<std::uint32_t>(f);
    for (std::uint32_t a = 0; a < n_ann; ++a) {
      GtBox g;
      g.class_id = read_raw<std::int32_t>(f);
      g.box.cx = read_raw<double>(f);
      g.box.cy = read_raw<double>(f);
      g.box.w = read_raw<double>(f);
      g.box.h = read_raw<double>(f);
      s.annotations.push_back(g);
    }
    if (!f) throw std::runtime_error("load_dataset: truncated file " + path);
    scenes.push_back(std::move(s));
  }
  return scenes;
}

}  // namespace padet
