#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "padet/checkpoint.hpp"
#include "padet/loss.hpp"

namespace padet {

struct TrainOptions {
  std::string out_dir;        // checkpoints and metrics land here when set
  std::string dataset_cache;  // optional binary scene cache
  bool verbose = false;
  int eval_every = 0;         // epochs between held-out evaluations (0 = off)
  int match_stats_every = 0;  // epochs between matched-box stats logs (0 = off)
};

// Full training harness: deterministic batch assembly and augmentation, both
// matching stages, batch-level hard-negative mining, the two-process loss,
// SGD with warmup, and per-epoch checkpoints.
class Trainer {
 public:
  explicit Trainer(const Config& cfg);

  Model& model() { return *model_; }
  TrainState& state() { return state_; }
  const Config& config() const { return cfg_; }

  SceneSpec scene_spec() const;
  Scene train_scene(int index) const;  // deterministic by index
  std::vector<Scene> make_eval_scenes() const;

  LossBreakdown train_step();
  void run(const TrainOptions& opts = {});

  EvalReport evaluate();                       // held-out split
  EvalReport evaluate(const std::vector<Scene>& scenes);
  MatchStatsReport match_stats(int max_scenes = 32);

  const std::vector<LossBreakdown>& loss_log() const { return losses_; }

 private:
  TensorRef build_batch(std::vector<std::vector<GtBox>>& gts);

  Config cfg_;
  std::unique_ptr<Model> model_;
  TrainState state_;
  LrSchedule schedule_;
  std::vector<LossBreakdown> losses_;
  std::optional<std::vector<Scene>> cached_pool_;
};

}  // namespace padet
