#pragma once

#include <map>
#include <memory>
#include <string>
#include <vector>

#include "padet/config.hpp"
#include "padet/dataset.hpp"
#include "padet/eval.hpp"
#include "padet/head.hpp"

namespace padet {

struct ModelForward {
  std::vector<PyramidFeature> features;
  std::vector<ProposeOutput> propose;  // empty for the plain head
  std::vector<AttendOutput> attend;
  // adjusted[level][image][flat grid index]; defaults when no proposing stage
  std::vector<std::vector<std::vector<Box>>> adjusted;
};

// Backbone + FPN + prediction head over the configured default-box grids.
class Model {
 public:
  explicit Model(const Config& cfg);

  void init(std::uint64_t seed);

  ModelForward forward(Tape* tape, const TensorRef& images, bool training);

  const std::vector<DefaultBoxGrid>& grids() const { return grids_; }
  const std::vector<ParamRef>& params() const { return registry_; }
  ParamRef param(const std::string& name) const;

  // Fully convolutional application: rebuilds the default-box lattice for a
  // new input size (must divide by every stride).
  void resize_input(int image_h, int image_w);

  std::map<std::string, i64> count_parameters() const;
  i64 total_parameters() const;

  // Mutable views of the batch-norm running statistics, keyed for checkpoints.
  std::vector<std::pair<std::string, std::vector<double>*>> named_buffers();

  // All default boxes flattened level-major (grid order within each level).
  std::vector<Box> flat_defaults() const;

  Config cfg;
  Backbone backbone;
  Fpn fpn;
  Head head;

 private:
  std::vector<ParamRef> registry_;
  std::vector<DefaultBoxGrid> grids_;
};

// Inference for one already-batched image index: decode + (soft-)NMS per the
// config.
std::vector<Detection> detect_image(const ModelForward& fwd, const Model& model, int n);

// Runs eval-mode forward passes one scene at a time and pairs detections with
// ground truths.
std::vector<ImageEval> evaluate_scenes(Model& model, const std::vector<Scene>& scenes);

// Builds the per-image analyzer inputs (defaults vs adjusted boxes).
std::vector<MatchStatsInput> match_stats_inputs(Model& model,
                                                const std::vector<Scene>& scenes);

}  // namespace padet
