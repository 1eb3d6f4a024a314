#pragma once

#include <memory>
#include <string>

#include "padet/model.hpp"

namespace padet {

struct TrainState {
  int epoch = 0;
  std::int64_t step = 0;
  Rng data_rng{0};
};

// Versioned binary snapshot: config text + digest, counters, rng state, every
// named parameter with its shape and momentum, and the batch-norm buffers.
// A reload followed by an immediate save is byte-identical.
void save_checkpoint(const std::string& path, const Model& model, const TrainState& state);

struct LoadedCheckpoint {
  Config cfg;
  std::unique_ptr<Model> model;
  TrainState state;
};

// Rebuilds the model from the stored config and restores all state. Corrupt
// files are rejected with version/digest diagnostics.
LoadedCheckpoint load_checkpoint(const std::string& path);

}  // namespace padet
