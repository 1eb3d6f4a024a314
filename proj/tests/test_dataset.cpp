#include <cstdio>
#include <filesystem>

#include "doctest.h"
#include "padet/dataset.hpp"
#include "padet/image_io.hpp"

using namespace padet;

namespace {

SceneSpec desk_spec() {
  SceneSpec spec;
  spec.canvas = 128;
  spec.min_objects = 1;
  spec.max_objects = 3;
  spec.min_size = 22.0;
  spec.max_size = 100.0;
  return spec;
}

}  // namespace

TEST_CASE("scene generation is deterministic in the seed") {
  const SceneSpec spec = desk_spec();
  const Scene a = generate_scene(42, spec);
  const Scene b = generate_scene(42, spec);
  REQUIRE(a.image->v.size() == b.image->v.size());
  for (size_t i = 0; i < a.image->v.size(); ++i) CHECK(a.image->v[i] == b.image->v[i]);
  REQUIRE(a.annotations.size() == b.annotations.size());
  for (size_t i = 0; i < a.annotations.size(); ++i) {
    CHECK(a.annotations[i].class_id == b.annotations[i].class_id);
    CHECK(a.annotations[i].box.cx == b.annotations[i].box.cx);
    CHECK(a.annotations[i].box.w == b.annotations[i].box.w);
  }
  const Scene c = generate_scene(43, spec);
  bool differs = false;
  for (size_t i = 0; i < a.image->v.size() && !differs; ++i) {
    differs = a.image->v[i] != c.image->v[i];
  }
  CHECK(differs);
}

TEST_CASE("a pinned single-disc spec produces exactly that annotation") {
  SceneSpec spec;
  spec.canvas = 64;
  spec.min_objects = 1;
  spec.max_objects = 1;
  spec.min_size = 32.0;
  spec.max_size = 32.0;
  spec.num_shape_classes = 1;  // discs only
  const Scene s = generate_scene(7, spec);
  REQUIRE(s.annotations.size() == 1);
  CHECK(s.annotations[0].box.w == 32.0);
  CHECK(s.annotations[0].box.h == 32.0);
  CHECK(s.annotations[0].class_id == 0);
  // the disc is actually rendered: its center differs from the corner background
  const auto& a = s.annotations[0];
  const int cx = static_cast<int>(a.box.cx);
  const int cy = static_cast<int>(a.box.cy);
  double diff = 0.0;
  for (int c = 0; c < 3; ++c) {
    diff += std::abs(s.image->at(0, c, cy, cx) - s.image->at(0, c, 0, 0));
  }
  CHECK(diff > 0.2);
}

TEST_CASE("annotations stay inside the canvas and above the minimum size") {
  const SceneSpec spec = desk_spec();
  for (int seed = 0; seed < 200; ++seed) {
    const Scene s = generate_scene(seed, spec);
    REQUIRE(!s.annotations.empty());
    for (const auto& a : s.annotations) {
      CHECK(a.box.x_min() >= 0.0);
      CHECK(a.box.x_max() <= spec.canvas);
      CHECK(a.box.y_min() >= 0.0);
      CHECK(a.box.y_max() <= spec.canvas);
      CHECK(a.box.w >= spec.min_size - 1e-9);
      CHECK(a.box.h >= spec.min_size * spec.min_aspect - 1e-9);
      CHECK(a.class_id >= 0);
      CHECK(a.class_id < spec.num_shape_classes);
    }
  }
}

TEST_CASE("impossible specs are rejected") {
  SceneSpec spec = desk_spec();
  spec.max_size = 200.0;  // larger than the canvas
  CHECK_THROWS_AS(generate_scene(1, spec), std::invalid_argument);
  SceneSpec bad = desk_spec();
  bad.min_objects = 0;
  CHECK_THROWS_AS(generate_scene(1, bad), std::invalid_argument);
}

TEST_CASE("generated sizes cover all three area buckets") {
  SceneSpec spec;
  spec.canvas = 256;
  spec.min_objects = 1;
  spec.max_objects = 2;
  spec.min_size = 20.0;
  spec.max_size = 250.0;
  int small = 0, medium = 0, large = 0;
  for (int seed = 0; seed < 1000; ++seed) {
    const Scene s = generate_scene(seed, spec);
    for (const auto& a : s.annotations) {
      const double area = a.box.area();
      if (area < 64.0 * 64.0) {
        ++small;
      } else if (area < 192.0 * 192.0) {
        ++medium;
      } else {
        ++large;
      }
    }
  }
  CHECK(small > 0);
  CHECK(medium > 0);
  CHECK(large > 0);
}

TEST_CASE("forced flips are an involution") {
  const Scene s = generate_scene(11, desk_spec());
  AugmentParams p;
  p.flip_prob = 1.0;
  p.zoom_prob = 0.0;
  p.brightness = 0.0;
  p.contrast = 0.0;
  p.color_gain = 0.0;
  Rng r1(1), r2(2);
  const Scene once = augment(s, r1, p);
  const Scene twice = augment(once, r2, p);
  for (size_t i = 0; i < s.image->v.size(); ++i) {
    CHECK(twice.image->v[i] == s.image->v[i]);
  }
  REQUIRE(twice.annotations.size() == s.annotations.size());
  for (size_t i = 0; i < s.annotations.size(); ++i) {
    CHECK(twice.annotations[i].box.cx ==
          doctest::Approx(s.annotations[i].box.cx).epsilon(1e-12));
    CHECK(twice.annotations[i].box.w == s.annotations[i].box.w);
  }
  // a single flip actually moves things
  bool moved = false;
  for (size_t i = 0; i < s.annotations.size(); ++i) {
    if (once.annotations[i].box.cx != s.annotations[i].box.cx) moved = true;
  }
  if (!s.annotations.empty() && std::abs(s.annotations[0].box.cx - 64.0) > 1.0) {
    CHECK(moved);
  }
}

TEST_CASE("a forced 2x zoom-out halves the box sizes") {
  const Scene s = generate_scene(13, desk_spec());
  AugmentParams p;
  p.flip_prob = 0.0;
  p.zoom_prob = 1.0;
  p.min_zoom_out = 2.0;
  p.max_zoom_out = 2.0;
  p.brightness = 0.0;
  p.contrast = 0.0;
  p.color_gain = 0.0;
  // find an rng whose first zoom branch picks zoom-out
  for (std::uint64_t seed = 0; seed < 64; ++seed) {
    Rng probe(seed);
    (void)probe.uniform();  // brightness
    (void)probe.uniform();  // contrast
    for (int i = 0; i < 3; ++i) (void)probe.uniform();  // gains
    (void)probe.uniform();  // flip draw (prob 0 -> ignored)
    const bool zoom = probe.uniform() < 1.0;
    const bool zoom_in = probe.uniform() < 0.5;
    if (!zoom || zoom_in) continue;
    Rng rng(seed);
    const Scene out = augment(s, rng, p);
    REQUIRE(out.annotations.size() == s.annotations.size());
    for (size_t i = 0; i < s.annotations.size(); ++i) {
      CHECK(out.annotations[i].box.w ==
            doctest::Approx(s.annotations[i].box.w / 2.0).epsilon(1e-12));
      CHECK(out.annotations[i].box.h ==
            doctest::Approx(s.annotations[i].box.h / 2.0).epsilon(1e-12));
    }
    return;
  }
  FAIL("no seed selected the zoom-out branch");
}

TEST_CASE("augmented boxes stay in bounds with positive extent") {
  const SceneSpec spec = desk_spec();
  AugmentParams p;  // full default jitter
  for (int seed = 0; seed < 1000; ++seed) {
    const Scene s = generate_scene(seed % 100, spec);
    Rng rng(1000 + seed);
    const Scene out = augment(s, rng, p);
    CHECK(out.image->shape == s.image->shape);
    for (const auto& a : out.annotations) {
      CHECK(a.box.x_min() >= -1e-9);
      CHECK(a.box.x_max() <= spec.canvas + 1e-9);
      CHECK(a.box.y_min() >= -1e-9);
      CHECK(a.box.y_max() <= spec.canvas + 1e-9);
      CHECK(a.box.w > 1.0);
      CHECK(a.box.h > 1.0);
    }
    for (double v : out.image->v) {
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
    }
  }
}

TEST_CASE("dataset cache round-trips scenes bit-exactly") {
  const SceneSpec spec = desk_spec();
  std::vector<Scene> scenes;
  for (int i = 0; i < 4; ++i) scenes.push_back(generate_scene(100 + i, spec));
  const std::string path = "test_dataset_cache.bin";
  save_dataset(path, scenes);
  const auto loaded = load_dataset(path);
  REQUIRE(loaded.size() == scenes.size());
  for (size_t i = 0; i < scenes.size(); ++i) {
    CHECK(loaded[i].seed == scenes[i].seed);
    REQUIRE(loaded[i].image->v.size() == scenes[i].image->v.size());
    for (size_t j = 0; j < scenes[i].image->v.size(); ++j) {
      CHECK(loaded[i].image->v[j] == scenes[i].image->v[j]);
    }
    REQUIRE(loaded[i].annotations.size() == scenes[i].annotations.size());
    for (size_t j = 0; j < scenes[i].annotations.size(); ++j) {
      CHECK(loaded[i].annotations[j].box.cx == scenes[i].annotations[j].box.cx);
    }
  }
  std::remove(path.c_str());
}

TEST_CASE("bmp io quantizes to bytes and round-trips") {
  const Scene s = generate_scene(3, desk_spec());
  const std::string path = "test_image.bmp";
  write_bmp(path, *s.image);
  const auto back = read_bmp(path);
  REQUIRE(back->shape == s.image->shape);
  for (size_t i = 0; i < s.image->v.size(); ++i) {
    CHECK(std::abs(back->v[i] - s.image->v[i]) <= 0.5 / 255.0 + 1e-9);
  }
  // a second write of the read-back image is byte-stable
  write_bmp(path, *back);
  const auto again = read_bmp(path);
  for (size_t i = 0; i < back->v.size(); ++i) CHECK(again->v[i] == back->v[i]);
  std::remove(path.c_str());
}
