#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "cereid/dacm.hpp"
#include "cereid/scene.hpp"
#include "cereid/simulator.hpp"
#include "cereid/strategy.hpp"
#include "cereid/training.hpp"

namespace cereid {

struct SceneConfig {
  std::optional<GeneratorSpec> generator;
  std::string ingest_path;  // resolved against the config file's directory
  std::string ingest_format = "csv";
  double train_fraction = 0.5;
};

struct ModelConfig {
  /// 0 means "take from the scene".
  std::size_t num_cameras = 0;
  std::size_t embed_dim = 16;
  std::size_t num_blocks = 2;
  double lambda = 10000.0;
  double time_scale = 1.0;
  bool shared_classifier = true;
};

struct TrainConfig {
  std::size_t epochs = 90;
  double lr = 0.01;
  std::size_t batch_size = 128;
  std::size_t decay_every = 30;
  double decay_factor = 0.1;
  std::size_t pairs_per_epoch = 0;
  std::size_t heldout_pairs = 4096;
  /// Existing checkpoint to start from; empty trains from initialization.
  std::string checkpoint;
};

struct SimulateConfig {
  std::vector<StrategySpec> strategies;
  std::size_t max_queries = 0;
  std::int64_t jitter = 0;
  std::vector<std::size_t> k_list{1, 5, 10, 20};
  std::size_t record_arrivals = 10;
};

struct GradcheckConfig {
  std::size_t num_cameras = 4;
  std::size_t embed_dim = 8;
  std::size_t num_blocks = 2;
  std::size_t batch = 4;
  std::vector<std::uint64_t> seeds{1, 2, 3};
  double tolerance = 1e-3;
};

struct RunConfig {
  std::uint64_t seed = 0;
  SceneConfig scene;
  ModelConfig model;
  TrainConfig train;
  InferenceParams inference;
  FrequencyOptions frequency;
  SimulateConfig simulate;
  GradcheckConfig gradcheck;
  std::string output_dir = "out";
  /// Directory of the config file; relative paths resolve against it.
  std::string base_dir = ".";

  DacmConfig dacm_config(std::size_t scene_cameras) const;
  TrainSchedule schedule() const;
};

/// Parses and validates a config document. Unknown keys and out-of-range
/// values raise ConfigError naming the field path.
RunConfig parse_config(const std::string& text, const std::string& base_dir = ".");
RunConfig load_config(const std::string& path);

/// Canonical JSON echo of the resolved configuration.
std::string config_to_json(const RunConfig& config);

std::string orientation_name(Orientation o);
std::string st_source_name(StSource s);

}  // namespace cereid
