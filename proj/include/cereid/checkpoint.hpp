#pragma once

#include <cstdint>
#include <string>

#include "cereid/dacm.hpp"

namespace cereid {

inline constexpr int kCheckpointFormatVersion = 1;

struct TrainingMeta {
  std::size_t epochs_run = 0;
  double final_loss = 0.0;
  std::uint64_t seed = 0;
};

struct Checkpoint {
  DacmModel model;
  TrainingMeta meta;
};

/// JSON document: format tag and version, config, every parameter with its
/// Adam state, batch-norm running statistics and training metadata. Numbers
/// are written in shortest round-trip form, so save/load is bit-exact.
std::string checkpoint_to_string(const DacmModel& model, const TrainingMeta& meta);
Checkpoint checkpoint_from_string(const std::string& text);

void save_checkpoint(const DacmModel& model, const TrainingMeta& meta, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

/// Throws CheckpointError when the model was trained for a different camera count.
void require_camera_count(const DacmModel& model, std::size_t num_cameras);

}  // namespace cereid
