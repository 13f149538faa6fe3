#include "cereid/dacm.hpp"

#include <cmath>
#include <string>

#include "cereid/error.hpp"

namespace cereid {
namespace {

Tensor uniform_tensor(Shape shape, double bound, Rng& rng) {
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = rng.uniform(-bound, bound);
  return t;
}

Tensor identity(std::size_t n) {
  Tensor t({n, n});
  for (std::size_t i = 0; i < n; ++i) t.at(i, i) = 1.0;
  return t;
}

std::size_t classifier_features(const DacmConfig& c) {
  return c.shared_classifier ? c.embed_dim : c.num_cameras * c.embed_dim;
}

// Everything up to (not including) the classifier, for one sample.
Tensor node_features(const DacmModel& m, const DacmInput& in, DacmSampleCache* cache) {
  const std::size_t C = m.config.num_cameras, D = m.config.embed_dim;
  if (in.camera >= C) {
    throw InputError("camera index " + std::to_string(in.camera) + " outside [0," + std::to_string(C) + ")");
  }
  Tensor e = sinusoidal_embed(in.delta_t / m.config.time_scale, D, m.config.lambda);
  double sum = 0.0;
  for (double v : e.data()) sum += v;
  const double mag = std::max(std::abs(sum), m.config.den_floor);
  const double den = sum < 0.0 ? -mag : mag;
  const double inv_den = 1.0 / den;

  Tensor a({C, D});
  const std::size_t cd = C * D;
  const double* w = m.spatial_w.value.data().data() + in.camera * D * cd;
  for (std::size_t j = 0; j < D; ++j) {
    const double coef = e[j] * inv_den;
    const double* wj = w + j * cd;
    for (std::size_t k = 0; k < cd; ++k) a[k] += coef * wj[k];
  }
  for (std::size_t k = 0; k < cd; ++k) a[k] += m.spatial_bias.value[k];

  if (cache) {
    cache->camera = in.camera;
    cache->inv_den = inv_den;
    cache->embed = std::move(e);
    cache->blocks.assign(m.blocks.size(), {});
  }
  for (std::size_t l = 0; l < m.blocks.size(); ++l) {
    const CoMoBlock& blk = m.blocks[l];
    DacmBlockCache local;
    DacmBlockCache& bc = cache ? cache->blocks[l] : local;
    bc.normalized = layer_norm(a, blk.ln_scale, blk.ln_shift, m.config.ln_eps, &bc.ln);
    bc.mixed = matmul(blk.adjacency.value, bc.normalized);
    bc.pre = matmul(bc.mixed, blk.transfer.value);
    a = gelu(bc.pre);
  }
  return a;
}

Tensor forward_impl(const DacmModel& m, std::span<const DacmInput> batch, Mode mode, BatchNormStats* stats,
                    DacmCache* cache) {
  if (batch.empty()) throw InputError("dacm forward: empty batch");
  const std::size_t C = m.config.num_cameras, D = m.config.embed_dim, B = batch.size();
  const bool shared = m.config.shared_classifier;
  Tensor features = shared ? Tensor({B * C, D}) : Tensor({B, C * D});
  if (cache) cache->samples.assign(B, {});
  for (std::size_t b = 0; b < B; ++b) {
    const Tensor nodes = node_features(m, batch[b], cache ? &cache->samples[b] : nullptr);
    std::copy(nodes.data().begin(), nodes.data().end(), features.data().begin() + b * C * D);
  }

  Tensor normed;
  if (mode == Mode::Train) {
    normed = batch_norm(features, m.bn_scale, m.bn_shift, *stats, Mode::Train, cache ? &cache->bn : nullptr);
  } else {
    normed = batch_norm_eval(features, m.bn_scale, m.bn_shift, m.bn_stats);
    if (cache) {
      cache->bn.mode = Mode::Eval;
      cache->bn.inv_std.resize(features.dim(1));
      cache->bn.normalized = Tensor(features.shape());
      for (std::size_t c = 0; c < features.dim(1); ++c) {
        const double is = 1.0 / std::sqrt(m.bn_stats.running_var[c] + m.bn_stats.eps);
        cache->bn.inv_std[c] = is;
        for (std::size_t r = 0; r < features.dim(0); ++r) {
          cache->bn.normalized.at(r, c) = (features.at(r, c) - m.bn_stats.running_mean[c]) * is;
        }
      }
    }
  }
  Tensor hidden = relu(normed);

  Tensor logits({B, C});
  if (shared) {
    for (std::size_t r = 0; r < B * C; ++r) {
      double acc = m.fc_b.value[0];
      const auto h = hidden.row(r);
      for (std::size_t d = 0; d < D; ++d) acc += h[d] * m.fc_w.value[d];
      logits[r] = acc;
    }
  } else {
    for (std::size_t b = 0; b < B; ++b) {
      const auto h = hidden.row(b);
      for (std::size_t c = 0; c < C; ++c) {
        double acc = m.fc_b.value[c];
        for (std::size_t d = 0; d < D; ++d) acc += h[c * D + d] * m.fc_w.value[c * D + d];
        logits.at(b, c) = acc;
      }
    }
  }
  if (!logits.all_finite()) {
    throw NumericError("dacm forward produced non-finite logits (camera " + std::to_string(batch[0].camera) +
                       ", delta_t " + std::to_string(batch[0].delta_t) + ")");
  }
  if (cache) {
    cache->features = std::move(features);
    cache->bn_out = std::move(normed);
    cache->hidden = std::move(hidden);
  }
  return logits;
}

}  // namespace

void DacmConfig::validate() const {
  if (num_cameras < 2) throw ConfigError("model.num_cameras must be at least 2");
  if (embed_dim == 0 || embed_dim % 2 != 0) throw ConfigError("model.embed_dim must be even and positive");
  if (num_blocks < 1) throw ConfigError("model.num_blocks must be at least 1");
  if (!(lambda > 1.0)) throw ConfigError("model.lambda must exceed 1");
  if (!(time_scale > 0.0)) throw ConfigError("model.time_scale must be positive");
  if (!(den_floor > 0.0)) throw ConfigError("model.den_floor must be positive");
  if (!(ln_eps > 0.0) || !(bn_eps > 0.0)) throw ConfigError("model normalization eps must be positive");
  if (!(bn_momentum > 0.0 && bn_momentum <= 1.0)) throw ConfigError("model.bn_momentum must lie in (0,1]");
}

DacmModel DacmModel::zeros(const DacmConfig& config) {
  config.validate();
  const std::size_t C = config.num_cameras, D = config.embed_dim, F = classifier_features(config);
  DacmModel m;
  m.config = config;
  m.spatial_w = Param("spatial_w", Tensor({C, D, C, D}));
  m.spatial_bias = Param("spatial_bias", Tensor({C, D}));
  for (std::size_t l = 0; l < config.num_blocks; ++l) {
    const std::string p = "block" + std::to_string(l) + ".";
    m.blocks.push_back(CoMoBlock{Param(p + "adjacency", identity(C)), Param(p + "transfer", Tensor({D, D})),
                                 Param(p + "ln_scale", Tensor({D}, 1.0)), Param(p + "ln_shift", Tensor({D}))});
  }
  m.bn_scale = Param("bn_scale", Tensor({F}, 1.0));
  m.bn_shift = Param("bn_shift", Tensor({F}));
  m.bn_stats = BatchNormStats(F, config.bn_momentum, config.bn_eps);
  m.fc_w = config.shared_classifier ? Param("fc_w", Tensor({D, 1})) : Param("fc_w", Tensor({C, D}));
  m.fc_b = Param("fc_b", Tensor({config.shared_classifier ? std::size_t{1} : C}));
  return m;
}

DacmModel DacmModel::initialize(const DacmConfig& config, Rng& rng) {
  DacmModel m = zeros(config);
  const std::size_t C = config.num_cameras, D = config.embed_dim;
  const double bound = 1.0 / std::sqrt(static_cast<double>(D));
  m.spatial_w.value = uniform_tensor({C, D, C, D}, bound, rng);
  for (CoMoBlock& blk : m.blocks) {
    for (std::size_t i = 0; i < C; ++i) {
      for (std::size_t j = 0; j < C; ++j) blk.adjacency.value.at(i, j) += rng.uniform(-0.01, 0.01);
    }
    blk.transfer.value = uniform_tensor({D, D}, bound, rng);
  }
  m.fc_w.value = uniform_tensor(m.fc_w.value.shape(), bound, rng);
  return m;
}

std::vector<Param*> DacmModel::params() {
  std::vector<Param*> out{&spatial_w, &spatial_bias};
  for (CoMoBlock& blk : blocks) {
    out.push_back(&blk.adjacency);
    out.push_back(&blk.transfer);
    out.push_back(&blk.ln_scale);
    out.push_back(&blk.ln_shift);
  }
  out.push_back(&bn_scale);
  out.push_back(&bn_shift);
  out.push_back(&fc_w);
  out.push_back(&fc_b);
  return out;
}

std::vector<const Param*> DacmModel::params() const {
  std::vector<const Param*> out;
  for (Param* p : const_cast<DacmModel*>(this)->params()) out.push_back(p);
  return out;
}

Tensor dacm_forward(DacmModel& model, std::span<const DacmInput> batch, Mode mode, DacmCache* cache) {
  return forward_impl(model, batch, mode, &model.bn_stats, cache);
}

Tensor dacm_forward_eval(const DacmModel& model, std::span<const DacmInput> batch) {
  return forward_impl(model, batch, Mode::Eval, nullptr, nullptr);
}

void dacm_backward(DacmModel& m, const DacmCache& cache, const Tensor& grad_logits) {
  const std::size_t C = m.config.num_cameras, D = m.config.embed_dim, B = cache.samples.size();
  const bool shared = m.config.shared_classifier;

  Tensor d_hidden(cache.hidden.shape());
  if (shared) {
    for (std::size_t r = 0; r < B * C; ++r) {
      const double g = grad_logits[r];
      m.fc_b.grad[0] += g;
      const auto h = cache.hidden.row(r);
      for (std::size_t d = 0; d < D; ++d) {
        m.fc_w.grad[d] += g * h[d];
        d_hidden.at(r, d) = g * m.fc_w.value[d];
      }
    }
  } else {
    for (std::size_t b = 0; b < B; ++b) {
      const auto h = cache.hidden.row(b);
      for (std::size_t c = 0; c < C; ++c) {
        const double g = grad_logits.at(b, c);
        m.fc_b.grad[c] += g;
        for (std::size_t d = 0; d < D; ++d) {
          m.fc_w.grad[c * D + d] += g * h[c * D + d];
          d_hidden.at(b, c * D + d) = g * m.fc_w.value[c * D + d];
        }
      }
    }
  }
  const Tensor d_normed = relu_backward(cache.bn_out, d_hidden);
  const Tensor d_features = batch_norm_backward(cache.bn, m.bn_scale, m.bn_shift, d_normed);

  const std::size_t cd = C * D;
  for (std::size_t b = 0; b < B; ++b) {
    const DacmSampleCache& sc = cache.samples[b];
    Tensor da({C, D}, std::vector<double>(d_features.data().begin() + b * cd, d_features.data().begin() + (b + 1) * cd));
    for (std::size_t l = m.blocks.size(); l-- > 0;) {
      CoMoBlock& blk = m.blocks[l];
      const DacmBlockCache& bc = sc.blocks[l];
      const Tensor dz = gelu_backward(bc.pre, da);
      const Tensor dw = matmul_tn(bc.mixed, dz);
      for (std::size_t i = 0; i < dw.size(); ++i) blk.transfer.grad[i] += dw[i];
      const Tensor dh = matmul_nt(dz, blk.transfer.value);
      const Tensor de = matmul_nt(dh, bc.normalized);
      for (std::size_t i = 0; i < de.size(); ++i) blk.adjacency.grad[i] += de[i];
      const Tensor dx = matmul_tn(blk.adjacency.value, dh);
      da = layer_norm_backward(bc.ln, blk.ln_scale, blk.ln_shift, dx);
    }
    for (std::size_t k = 0; k < cd; ++k) m.spatial_bias.grad[k] += da[k];
    double* gw = m.spatial_w.grad.data().data() + sc.camera * D * cd;
    for (std::size_t j = 0; j < D; ++j) {
      const double coef = sc.embed[j] * sc.inv_den;
      double* gj = gw + j * cd;
      for (std::size_t k = 0; k < cd; ++k) gj[k] += coef * da[k];
    }
  }
}

std::vector<double> dacm_logits(const DacmModel& model, std::size_t camera, double t_q, double t_d) {
  const DacmInput in{camera, t_d - t_q};
  const Tensor logits = dacm_forward_eval(model, std::span<const DacmInput>(&in, 1));
  return logits.data();
}

std::vector<double> transition_distribution(const DacmModel& model, std::size_t camera, double t_q, double t_d) {
  const auto logits = dacm_logits(model, camera, t_q, t_d);
  return softmax(std::span<const double>(logits));
}

}  // namespace cereid
