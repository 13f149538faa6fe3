#pragma once

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "cereid/config.hpp"
#include "cereid/dacm.hpp"
#include "cereid/gradcheck.hpp"
#include "cereid/metrics.hpp"
#include "cereid/scene.hpp"
#include "cereid/training.hpp"

namespace cereid {

inline constexpr const char* kToolVersion = "0.1.0";

struct CommandOptions {
  std::string out_dir;  // empty: config output.dir
  std::size_t threads = 1;
  bool dry_run = false;
  /// gradcheck only: corrupt one analytic gradient entry.
  bool inject_fault = false;
};

// Exit codes shared by the CLI.
inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 1;
inline constexpr int kExitRuntime = 2;
inline constexpr int kExitThreshold = 3;

/// Generated or ingested scene, split into train/test identities.
Scene build_scene(const RunConfig& config);

struct ModelBundle {
  DacmModel model;
  TrainHistory history;
  bool trained_here = false;
  std::size_t epochs_run = 0;
};

/// The seeded, untrained model every fresh training run starts from.
DacmModel initial_model(const RunConfig& config, std::size_t num_cameras);

/// Loads train.checkpoint when set (resuming up to train.epochs), otherwise
/// initializes and trains from scratch.
ModelBundle obtain_model(const RunConfig& config, const Scene& scene);

struct GradcheckRun {
  std::uint64_t seed = 0;
  GradCheckReport report;
};

std::vector<GradcheckRun> run_gradcheck(const GradcheckConfig& config, bool inject_fault);

/// Aligned human-readable table of per-strategy metrics.
std::string format_summary(const std::vector<MetricSummary>& rows, std::span<const std::size_t> ks);

int cmd_gen(const RunConfig& config, const CommandOptions& opts, std::ostream& log);
int cmd_train(const RunConfig& config, const CommandOptions& opts, std::ostream& log);
int cmd_gradcheck(const RunConfig& config, const CommandOptions& opts, std::ostream& log);
int cmd_simulate(const RunConfig& config, const CommandOptions& opts, std::ostream& log);
int cmd_eval_central(const RunConfig& config, const CommandOptions& opts, std::ostream& log);

}  // namespace cereid
