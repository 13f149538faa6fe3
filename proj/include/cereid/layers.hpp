#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "cereid/tensor.hpp"

namespace cereid {

enum class Mode { Train, Eval };

/// Sinusoidal encoding of a (possibly negative) time difference:
/// out[2i] = sin(dt / lambda^(2i/dim)), out[2i+1] = cos(dt / lambda^(2i/dim)).
Tensor sinusoidal_embed(double delta_t, std::size_t dim, double lambda);

// Plain matrix products on rank-2 tensors: a·b, aᵀ·b and a·bᵀ.
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor matmul_tn(const Tensor& a, const Tensor& b);
Tensor matmul_nt(const Tensor& a, const Tensor& b);

/// x [M,K] times w [K,N].
Tensor linear(const Tensor& x, const Param& w);
/// Accumulates dL/dw into w.grad and returns dL/dx.
Tensor linear_backward(const Tensor& x, Param& w, const Tensor& grad_out);

struct LayerNormCache {
  Tensor normalized;
  std::vector<double> inv_std;
};

/// Normalizes every row of x [R,D] over its D entries, then applies the
/// per-feature affine transform.
Tensor layer_norm(const Tensor& x, const Param& scale, const Param& shift, double eps,
                  LayerNormCache* cache = nullptr);
Tensor layer_norm_backward(const LayerNormCache& cache, Param& scale, Param& shift, const Tensor& grad_out);

/// Exact erf-based GELU.
Tensor gelu(const Tensor& x);
Tensor gelu_backward(const Tensor& x, const Tensor& grad_out);

Tensor relu(const Tensor& x);
Tensor relu_backward(const Tensor& x, const Tensor& grad_out);

struct BatchNormStats {
  Tensor running_mean;
  Tensor running_var;
  double momentum = 0.1;
  double eps = 1e-5;

  BatchNormStats() = default;
  explicit BatchNormStats(std::size_t features, double momentum = 0.1, double eps = 1e-5);
};

struct BatchNormCache {
  Tensor normalized;
  std::vector<double> inv_std;
  Mode mode = Mode::Eval;
};

/// Batch normalization of x [B,D] across the B rows. Train mode uses batch
/// statistics (B >= 2) and updates the running estimates; eval mode uses the
/// running estimates and leaves `stats` untouched.
Tensor batch_norm(const Tensor& x, const Param& scale, const Param& shift, BatchNormStats& stats, Mode mode,
                  BatchNormCache* cache = nullptr);
/// Eval-mode batch norm for callers holding const stats.
Tensor batch_norm_eval(const Tensor& x, const Param& scale, const Param& shift, const BatchNormStats& stats);
Tensor batch_norm_backward(const BatchNormCache& cache, Param& scale, Param& shift, const Tensor& grad_out);

/// Numerically stable softmax of a single vector.
std::vector<double> softmax(std::span<const double> x);
std::vector<double> log_softmax(std::span<const double> x);
/// Softmax over one axis of a tensor of any rank.
Tensor softmax(const Tensor& x, std::size_t axis);

struct LossResult {
  double loss = 0.0;
  Tensor grad;  // dL/dlogits
};

/// Mean cross-entropy of logits [B,C] against class indices.
LossResult cross_entropy_loss(const Tensor& logits, std::span<const std::size_t> targets);

}  // namespace cereid
