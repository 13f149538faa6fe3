#include "cereid/layers.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "cereid/error.hpp"

namespace cereid {
namespace {

void require_rank2(const Tensor& t, const char* what) {
  if (t.rank() != 2) throw ShapeError(std::string(what) + ": expected rank-2 tensor, got " + shape_string(t.shape()));
}

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

}  // namespace

Tensor sinusoidal_embed(double delta_t, std::size_t dim, double lambda) {
  if (dim == 0 || dim % 2 != 0) throw ConfigError("sinusoidal_embed: dim must be even and positive");
  if (!(lambda > 1.0)) throw ConfigError("sinusoidal_embed: lambda must exceed 1");
  if (!std::isfinite(delta_t)) throw InputError("sinusoidal_embed: non-finite time difference");
  Tensor out({dim});
  for (std::size_t i = 0; i < dim / 2; ++i) {
    const double period = std::pow(lambda, static_cast<double>(2 * i) / static_cast<double>(dim));
    const double angle = delta_t / period;
    out[2 * i] = std::sin(angle);
    out[2 * i + 1] = std::cos(angle);
  }
  return out;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank2(a, "matmul");
  require_rank2(b, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw ShapeError("matmul: inner dimensions differ, " + shape_string(a.shape()) + " x " + shape_string(b.shape()));
  }
  Tensor out({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    double* orow = &out[i * n];
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a[i * k + p];
      const double* brow = &b[p * n];
      for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  }
  return out;
}

Tensor matmul_tn(const Tensor& a, const Tensor& b) {
  require_rank2(a, "matmul_tn");
  require_rank2(b, "matmul_tn");
  const std::size_t k = a.dim(0), m = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw ShapeError("matmul_tn: leading dimensions differ, " + shape_string(a.shape()) + " vs " +
                     shape_string(b.shape()));
  }
  Tensor out({m, n});
  for (std::size_t p = 0; p < k; ++p) {
    const double* arow = &a[p * m];
    const double* brow = &b[p * n];
    for (std::size_t i = 0; i < m; ++i) {
      const double av = arow[i];
      double* orow = &out[i * n];
      for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  }
  return out;
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  require_rank2(a, "matmul_nt");
  require_rank2(b, "matmul_nt");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(0);
  if (b.dim(1) != k) {
    throw ShapeError("matmul_nt: trailing dimensions differ, " + shape_string(a.shape()) + " vs " +
                     shape_string(b.shape()));
  }
  Tensor out({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = &a[i * k];
    for (std::size_t j = 0; j < n; ++j) {
      const double* brow = &b[j * k];
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
      out[i * n + j] = acc;
    }
  }
  return out;
}

Tensor linear(const Tensor& x, const Param& w) { return matmul(x, w.value); }

Tensor linear_backward(const Tensor& x, Param& w, const Tensor& grad_out) {
  const Tensor dw = matmul_tn(x, grad_out);
  for (std::size_t i = 0; i < dw.size(); ++i) w.grad[i] += dw[i];
  return matmul_nt(grad_out, w.value);
}

Tensor layer_norm(const Tensor& x, const Param& scale, const Param& shift, double eps, LayerNormCache* cache) {
  require_rank2(x, "layer_norm");
  const std::size_t rows = x.dim(0), d = x.dim(1);
  if (d < 2) throw ShapeError("layer_norm: feature dimension must be at least 2");
  if (scale.value.size() != d || shift.value.size() != d) throw ShapeError("layer_norm: affine parameters must have D entries");
  Tensor normalized({rows, d});
  Tensor out({rows, d});
  std::vector<double> inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const auto in = x.row(r);
    double mean = 0.0;
    for (double v : in) mean += v;
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (double v : in) var += (v - mean) * (v - mean);
    var /= static_cast<double>(d);
    const double is = 1.0 / std::sqrt(var + eps);
    inv_std[r] = is;
    for (std::size_t c = 0; c < d; ++c) {
      const double xh = (in[c] - mean) * is;
      normalized.at(r, c) = xh;
      out.at(r, c) = xh * scale.value[c] + shift.value[c];
    }
  }
  if (cache) {
    cache->normalized = std::move(normalized);
    cache->inv_std = std::move(inv_std);
  }
  return out;
}

Tensor layer_norm_backward(const LayerNormCache& cache, Param& scale, Param& shift, const Tensor& grad_out) {
  const std::size_t rows = grad_out.dim(0), d = grad_out.dim(1);
  Tensor dx({rows, d});
  std::vector<double> dxh(d);
  for (std::size_t r = 0; r < rows; ++r) {
    double sum_dxh = 0.0, sum_dxh_xh = 0.0;
    for (std::size_t c = 0; c < d; ++c) {
      const double g = grad_out.at(r, c);
      const double xh = cache.normalized.at(r, c);
      scale.grad[c] += g * xh;
      shift.grad[c] += g;
      dxh[c] = g * scale.value[c];
      sum_dxh += dxh[c];
      sum_dxh_xh += dxh[c] * xh;
    }
    const double inv_d = 1.0 / static_cast<double>(d);
    for (std::size_t c = 0; c < d; ++c) {
      const double xh = cache.normalized.at(r, c);
      dx.at(r, c) = cache.inv_std[r] * (dxh[c] - inv_d * sum_dxh - xh * inv_d * sum_dxh_xh);
    }
  }
  return dx;
}

Tensor gelu(const Tensor& x) {
  Tensor out = x;
  for (double& v : out.data()) v = 0.5 * v * (1.0 + std::erf(v * kInvSqrt2));
  return out;
}

Tensor gelu_backward(const Tensor& x, const Tensor& grad_out) {
  Tensor dx = grad_out;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double v = x[i];
    const double cdf = 0.5 * (1.0 + std::erf(v * kInvSqrt2));
    const double pdf = kInvSqrt2Pi * std::exp(-0.5 * v * v);
    dx[i] *= cdf + v * pdf;
  }
  return dx;
}

Tensor relu(const Tensor& x) {
  Tensor out = x;
  for (double& v : out.data()) v = v > 0.0 ? v : 0.0;
  return out;
}

Tensor relu_backward(const Tensor& x, const Tensor& grad_out) {
  Tensor dx = grad_out;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!(x[i] > 0.0)) dx[i] = 0.0;
  }
  return dx;
}

BatchNormStats::BatchNormStats(std::size_t features, double m, double e)
    : running_mean({features}, 0.0), running_var({features}, 1.0), momentum(m), eps(e) {}

Tensor batch_norm_eval(const Tensor& x, const Param& scale, const Param& shift, const BatchNormStats& stats) {
  require_rank2(x, "batch_norm");
  const std::size_t rows = x.dim(0), d = x.dim(1);
  if (stats.running_mean.size() != d || scale.value.size() != d) throw ShapeError("batch_norm: feature count mismatch");
  Tensor out({rows, d});
  for (std::size_t c = 0; c < d; ++c) {
    const double is = 1.0 / std::sqrt(stats.running_var[c] + stats.eps);
    for (std::size_t r = 0; r < rows; ++r) {
      out.at(r, c) = (x.at(r, c) - stats.running_mean[c]) * is * scale.value[c] + shift.value[c];
    }
  }
  return out;
}

Tensor batch_norm(const Tensor& x, const Param& scale, const Param& shift, BatchNormStats& stats, Mode mode,
                  BatchNormCache* cache) {
  require_rank2(x, "batch_norm");
  const std::size_t rows = x.dim(0), d = x.dim(1);
  if (stats.running_mean.size() != d || scale.value.size() != d) throw ShapeError("batch_norm: feature count mismatch");
  if (mode == Mode::Eval) {
    Tensor out = batch_norm_eval(x, scale, shift, stats);
    if (cache) {
      cache->mode = Mode::Eval;
      cache->normalized = Tensor({rows, d});
      cache->inv_std.assign(d, 0.0);
      for (std::size_t c = 0; c < d; ++c) {
        const double is = 1.0 / std::sqrt(stats.running_var[c] + stats.eps);
        cache->inv_std[c] = is;
        for (std::size_t r = 0; r < rows; ++r) cache->normalized.at(r, c) = (x.at(r, c) - stats.running_mean[c]) * is;
      }
    }
    return out;
  }
  if (rows < 2) throw ConfigError("batch_norm: training mode needs at least 2 rows per batch");
  Tensor normalized({rows, d});
  Tensor out({rows, d});
  std::vector<double> inv_std(d);
  const double n = static_cast<double>(rows);
  for (std::size_t c = 0; c < d; ++c) {
    double mean = 0.0;
    for (std::size_t r = 0; r < rows; ++r) mean += x.at(r, c);
    mean /= n;
    double var = 0.0;
    for (std::size_t r = 0; r < rows; ++r) var += (x.at(r, c) - mean) * (x.at(r, c) - mean);
    var /= n;
    const double is = 1.0 / std::sqrt(var + stats.eps);
    inv_std[c] = is;
    for (std::size_t r = 0; r < rows; ++r) {
      const double xh = (x.at(r, c) - mean) * is;
      normalized.at(r, c) = xh;
      out.at(r, c) = xh * scale.value[c] + shift.value[c];
    }
    stats.running_mean[c] = (1.0 - stats.momentum) * stats.running_mean[c] + stats.momentum * mean;
    stats.running_var[c] = (1.0 - stats.momentum) * stats.running_var[c] + stats.momentum * var * n / (n - 1.0);
  }
  if (cache) {
    cache->mode = Mode::Train;
    cache->normalized = std::move(normalized);
    cache->inv_std = std::move(inv_std);
  }
  return out;
}

Tensor batch_norm_backward(const BatchNormCache& cache, Param& scale, Param& shift, const Tensor& grad_out) {
  const std::size_t rows = grad_out.dim(0), d = grad_out.dim(1);
  Tensor dx({rows, d});
  const double n = static_cast<double>(rows);
  for (std::size_t c = 0; c < d; ++c) {
    double sum_g = 0.0, sum_g_xh = 0.0;
    for (std::size_t r = 0; r < rows; ++r) {
      const double g = grad_out.at(r, c);
      sum_g += g;
      sum_g_xh += g * cache.normalized.at(r, c);
    }
    scale.grad[c] += sum_g_xh;
    shift.grad[c] += sum_g;
    const double gamma = scale.value[c];
    const double is = cache.inv_std[c];
    for (std::size_t r = 0; r < rows; ++r) {
      const double g = grad_out.at(r, c);
      if (cache.mode == Mode::Eval) {
        dx.at(r, c) = g * gamma * is;
      } else {
        const double xh = cache.normalized.at(r, c);
        dx.at(r, c) = gamma * is * (g - sum_g / n - xh * sum_g_xh / n);
      }
    }
  }
  return dx;
}

std::vector<double> softmax(std::span<const double> x) {
  std::vector<double> out(x.size());
  if (x.empty()) return out;
  const double m = *std::max_element(x.begin(), x.end());
  double total = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    out[i] = std::exp(x[i] - m);
    total += out[i];
  }
  for (double& v : out) v /= total;
  return out;
}

std::vector<double> log_softmax(std::span<const double> x) {
  std::vector<double> out(x.size());
  if (x.empty()) return out;
  const double m = *std::max_element(x.begin(), x.end());
  double total = 0.0;
  for (double v : x) total += std::exp(v - m);
  const double lse = m + std::log(total);
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] - lse;
  return out;
}

Tensor softmax(const Tensor& x, std::size_t axis) {
  if (axis >= x.rank()) throw ShapeError("softmax: axis out of range for shape " + shape_string(x.shape()));
  std::size_t inner = 1;
  for (std::size_t a = axis + 1; a < x.rank(); ++a) inner *= x.dim(a);
  const std::size_t len = x.dim(axis);
  const std::size_t outer = x.size() / (len * inner);
  Tensor out = x;
  std::vector<double> slice(len);
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t i = 0; i < inner; ++i) {
      const std::size_t base = o * len * inner + i;
      for (std::size_t k = 0; k < len; ++k) slice[k] = x[base + k * inner];
      const auto p = softmax(std::span<const double>(slice));
      for (std::size_t k = 0; k < len; ++k) out[base + k * inner] = p[k];
    }
  }
  return out;
}

LossResult cross_entropy_loss(const Tensor& logits, std::span<const std::size_t> targets) {
  require_rank2(logits, "cross_entropy_loss");
  const std::size_t batch = logits.dim(0), classes = logits.dim(1);
  if (targets.size() != batch) throw ShapeError("cross_entropy_loss: one target per row required");
  LossResult result;
  result.grad = Tensor({batch, classes});
  const double inv_b = 1.0 / static_cast<double>(batch);
  for (std::size_t b = 0; b < batch; ++b) {
    if (targets[b] >= classes) {
      throw InputError("cross_entropy_loss: target " + std::to_string(targets[b]) + " outside [0," +
                       std::to_string(classes) + ")");
    }
    const auto lp = log_softmax(logits.row(b));
    result.loss -= lp[targets[b]] * inv_b;
    for (std::size_t c = 0; c < classes; ++c) {
      result.grad.at(b, c) = (std::exp(lp[c]) - (c == targets[b] ? 1.0 : 0.0)) * inv_b;
    }
  }
  return result;
}

}  // namespace cereid
