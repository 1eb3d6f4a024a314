#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "padet/anchors.hpp"
#include "padet/rng.hpp"
#include "padet/tensor.hpp"

namespace padet {

// Synthetic shape classes: 0 disc, 1 rectangle, 2 triangle. Discs stay
// round; rectangles and triangles draw their height as width times an
// aspect from [min_aspect, max_aspect].
struct SceneSpec {
  int canvas = 128;
  int min_objects = 1, max_objects = 3;
  double min_size = 24.0, max_size = 100.0;
  double min_aspect = 0.6, max_aspect = 1.7;
  int num_shape_classes = 3;
  double noise = 0.02;
  double max_overlap = 0.3;
  int max_place_attempts = 40;
};

struct Scene {
  TensorRef image;  // (1, 3, H, W) in [0,1]
  std::vector<GtBox> annotations;
  std::uint64_t seed = 0;
};

// Deterministic given the seed; annotations exactly enclose the rendered
// shapes. Rejects specs whose objects cannot fit on the canvas.
Scene generate_scene(std::uint64_t seed, const SceneSpec& spec);

struct AugmentParams {
  double flip_prob = 0.5;
  double zoom_prob = 0.5;  // split evenly between zoom-in and zoom-out
  double min_zoom_out = 1.2;
  double max_zoom_out = 2.0;
  double min_zoom_in = 1.2;
  double max_zoom_in = 1.6;
  double brightness = 0.1;
  double contrast = 0.2;
  double color_gain = 0.1;
};

// Photometric jitter, random horizontal flip, and zoom-in/zoom-out, all
// deterministic given the rng state. Boxes stay inside the image; crops drop
// ground truths that degenerate below one pixel.
Scene augment(const Scene& scene, Rng& rng, const AugmentParams& params);

// Length-prefixed binary cache of generated scenes (little-endian, versioned).
void save_dataset(const std::string& path, const std::vector<Scene>& scenes);
std::vector<Scene>  load_dataset(const std::string& path);

}  // namespace padet
