#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "cereid/layers.hpp"
#include "cereid/rng.hpp"
#include "cereid/tensor.hpp"

namespace cereid {

struct DacmConfig {
  std::size_t num_cameras = 0;
  std::size_t embed_dim = 16;
  std::size_t num_blocks = 2;
  double lambda = 10000.0;
  /// Raw tick differences are divided by this before embedding.
  double time_scale = 1.0;
  /// Smallest magnitude allowed for the embedding-sum denominator of the
  /// spatial aggregation.
  double den_floor = 1e-3;
  /// One classifier MLP shared by all camera nodes, or one per node.
  bool shared_classifier = true;
  double ln_eps = 1e-5;
  double bn_eps = 1e-5;
  double bn_momentum = 0.1;

  /// Throws ConfigError on invalid values.
  void validate() const;
};

struct CoMoBlock {
  Param adjacency;  // [C,C]
  Param transfer;   // [D,D]
  Param ln_scale;   // [D]
  Param ln_shift;   // [D]
};

/// Distribution-aware correlation model: maps (source camera, time delta) to
/// one logit per camera.
struct DacmModel {
  DacmConfig config;
  Param spatial_w;     // [C,D,C,D]
  Param spatial_bias;  // [C,D]
  std::vector<CoMoBlock> blocks;
  Param bn_scale;  // [D] shared, [C*D] per-node
  Param bn_shift;
  BatchNormStats bn_stats;
  Param fc_w;  // [D,1] shared, [C,D] per-node
  Param fc_b;  // [1] shared, [C] per-node

  /// Random initialization: fan-scaled symmetric uniform weights, zero
  /// biases, identity-plus-noise adjacency.
  static DacmModel initialize(const DacmConfig& config, Rng& rng);
  /// Every parameter zero except layer/batch-norm scales (1) and adjacency (I).
  static DacmModel zeros(const DacmConfig& config);

  std::vector<Param*> params();
  std::vector<const Param*> params() const;

  std::size_t num_cameras() const { return config.num_cameras; }
};

struct DacmInput {
  std::size_t camera = 0;
  /// t_d - t_q in raw ticks.
  double delta_t = 0.0;
};

struct DacmBlockCache {
  LayerNormCache ln;
  Tensor normalized;  // LN output [C,D]
  Tensor mixed;       // E · LN(A) [C,D]
  Tensor pre;         // mixed · W^l [C,D]
};

struct DacmSampleCache {
  std::size_t camera = 0;
  double inv_den = 0.0;
  Tensor embed;
  std::vector<DacmBlockCache> blocks;
};

struct DacmCache {
  std::vector<DacmSampleCache> samples;
  Tensor features;  // classifier input, [B*C,D] or [B,C*D]
  BatchNormCache bn;
  Tensor bn_out;
  Tensor hidden;  // ReLU output
};

/// Logits [B,C]. Train mode normalizes the classifier with batch statistics
/// and updates the running estimates in `model`.
Tensor dacm_forward(DacmModel& model, std::span<const DacmInput> batch, Mode mode, DacmCache* cache = nullptr);
/// Eval-mode forward on an immutable model.
Tensor dacm_forward_eval(const DacmModel& model, std::span<const DacmInput> batch);
/// Accumulates parameter gradients from dL/dlogits.
void dacm_backward(DacmModel& model, const DacmCache& cache, const Tensor& grad_logits);

/// Softmax over eval-mode logits for a single query.
std::vector<double> transition_distribution(const DacmModel& model, std::size_t camera, double t_q, double t_d);

/// Eval-mode logits for a single query.
std::vector<double> dacm_logits(const DacmModel& model, std::size_t camera, double t_q, double t_d);

}  // namespace cereid
