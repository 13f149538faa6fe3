#include <doctest.h>

#include <cmath>

#include "cereid/checkpoint.hpp"
#include "cereid/dacm.hpp"
#include "cereid/error.hpp"
#include "cereid/gradcheck.hpp"
#include "cereid/training.hpp"

using namespace cereid;

namespace {

DacmConfig small_config(bool shared, std::size_t blocks = 2) {
  DacmConfig c;
  c.num_cameras = 4;
  c.embed_dim = 6;
  c.num_blocks = blocks;
  c.shared_classifier = shared;
  return c;
}

// Direct transcription of the eval-mode forward pass for one sample.
std::vector<double> oracle_logits(const DacmModel& m, std::size_t cam, double dt) {
  const std::size_t C = m.config.num_cameras, D = m.config.embed_dim;
  std::vector<double> e(D);
  for (std::size_t i = 0; i < D / 2; ++i) {
    const double w = std::pow(m.config.lambda, 2.0 * i / D);
    e[2 * i] = std::sin(dt / m.config.time_scale / w);
    e[2 * i + 1] = std::cos(dt / m.config.time_scale / w);
  }
  double s = 0;
  for (double v : e) s += v;
  double den = std::max(std::abs(s), m.config.den_floor);
  if (s < 0) den = -den;

  std::vector<std::vector<double>> a(C, std::vector<double>(D));
  for (std::size_t j = 0; j < C; ++j)
    for (std::size_t k = 0; k < D; ++k) {
      double acc = m.spatial_bias.value[j * D + k];
      for (std::size_t d = 0; d < D; ++d) acc += m.spatial_w.value[((cam * D + d) * C + j) * D + k] * e[d] / den;
      a[j][k] = acc;
    }
  for (const CoMoBlock& blk : m.blocks) {
    auto ln = a;
    for (std::size_t j = 0; j < C; ++j) {
      double mean = 0, var = 0;
      for (double v : a[j]) mean += v / D;
      for (double v : a[j]) var += (v - mean) * (v - mean) / D;
      for (std::size_t k = 0; k < D; ++k)
        ln[j][k] = (a[j][k] - mean) / std::sqrt(var + m.config.ln_eps) * blk.ln_scale.value[k] + blk.ln_shift.value[k];
    }
    for (std::size_t j = 0; j < C; ++j)
      for (std::size_t k = 0; k < D; ++k) {
        double z = 0;
        for (std::size_t i = 0; i < C; ++i)
          for (std::size_t d = 0; d < D; ++d) z += blk.adjacency.value.at(j, i) * ln[i][d] * blk.transfer.value.at(d, k);
        a[j][k] = 0.5 * z * (1 + std::erf(z / std::sqrt(2.0)));
      }
  }
  std::vector<double> out(C);
  for (std::size_t j = 0; j < C; ++j) {
    double acc = m.fc_b.value[m.config.shared_classifier ? 0 : j];
    for (std::size_t k = 0; k < D; ++k) {
      const std::size_t f = m.config.shared_classifier ? k : j * D + k;
      const double bn = (a[j][k] - m.bn_stats.running_mean[f]) / std::sqrt(m.bn_stats.running_var[f] + m.bn_stats.eps) *
                            m.bn_scale.value[f] +
                        m.bn_shift.value[f];
      acc += std::max(bn, 0.0) * m.fc_w.value[m.config.shared_classifier ? k : j * D + k];
    }
    out[j] = acc;
  }
  return out;
}

GradCheckReport model_gradcheck(DacmModel& model, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<DacmInput> batch(5);
  std::vector<std::size_t> targets(5);
  for (std::size_t i = 0; i < 5; ++i) {
    batch[i] = {rng.uniform_index(model.num_cameras()), static_cast<double>(rng.uniform_int(-500, 500))};
    targets[i] = rng.uniform_index(model.num_cameras());
  }
  auto params = model.params();
  zero_grads(params);
  DacmCache cache;
  const Tensor logits = dacm_forward(model, batch, Mode::Train, &cache);
  dacm_backward(model, cache, cross_entropy_loss(logits, targets).grad);
  return finite_diff_check([&] { return cross_entropy_loss(dacm_forward(model, batch, Mode::Train), targets).loss; },
                           params, 1e-3);
}

Scene ring_scene(std::uint64_t seed) {
  GeneratorSpec spec;
  spec.num_cameras = 3;
  for (std::size_t i = 0; i < 3; ++i) spec.edges.push_back({i, (i + 1) % 3, 1.0, DelayLaw::fixed(10)});
  spec.start_time_horizon = 1000;
  spec.num_identities = 60;
  spec.visits_per_identity = 3;
  Rng rng(seed);
  Rng split_rng(seed + 1);
  return split_identities(generate(spec, rng), 0.5, split_rng);
}

TrainSchedule tiny_schedule(std::size_t epochs) {
  TrainSchedule s;
  s.epochs = epochs;
  s.batch_size = 16;
  s.pairs_per_epoch = 64;
  s.heldout_pairs = 32;
  s.seed = 9;
  return s;
}

bool same_params(const DacmModel& a, const DacmModel& b) {
  const auto pa = a.params(), pb = b.params();
  if (pa.size() != pb.size()) return false;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    if (pa[i]->value.data() != pb[i]->value.data()) return false;
    if (pa[i]->adam_m.data() != pb[i]->adam_m.data()) return false;
    if (pa[i]->adam_v.data() != pb[i]->adam_v.data()) return false;
    if (pa[i]->step_count != pb[i]->step_count) return false;
  }
  return a.bn_stats.running_mean.data() == b.bn_stats.running_mean.data() &&
         a.bn_stats.running_var.data() == b.bn_stats.running_var.data();
}

}  // namespace

TEST_CASE("zero model predicts the uniform distribution") {
  for (bool shared : {true, false}) {
    const DacmModel m = DacmModel::zeros(small_config(shared));
    for (double dt : {-700.0, 0.0, 3.0, 1e5}) {
      const auto p = transition_distribution(m, 2, 100.0, 100.0 + dt);
      for (double v : p) CHECK(v == doctest::Approx(0.25).epsilon(1e-12));
    }
  }
}

TEST_CASE("eval forward matches a direct transcription") {
  for (bool shared : {true, false}) {
    Rng rng(17);
    DacmModel m = DacmModel::initialize(small_config(shared, 3), rng);
    for (double& v : m.bn_stats.running_mean.data()) v = rng.normal() * 0.1;
    for (double& v : m.bn_stats.running_var.data()) v = 0.5 + rng.uniform();
    for (double& v : m.fc_b.value.data()) v = rng.normal();
    for (int t = 0; t < 10; ++t) {
      const std::size_t cam = rng.uniform_index(4);
      const double dt = rng.uniform(-1000, 1000);
      const auto got = dacm_logits(m, cam, 50.0, 50.0 + dt);
      const auto want = oracle_logits(m, cam, dt);
      for (std::size_t j = 0; j < 4; ++j) CHECK(got[j] == doctest::Approx(want[j]).epsilon(1e-10));
    }
  }
}

TEST_CASE("near-zero embedding sum stays finite") {
  // With D = 2 the sum sin(dt) + cos(dt) vanishes at dt = 3pi/4.
  DacmConfig c = small_config(true);
  c.embed_dim = 2;
  Rng rng(1);
  const DacmModel m = DacmModel::initialize(c, rng);
  const auto l = dacm_logits(m, 0, 0.0, 3.0 * M_PI / 4.0);
  for (double v : l) CHECK(std::isfinite(v));
}

TEST_CASE("analytic gradients of the full model match finite differences") {
  for (bool shared : {true, false}) {
    for (std::size_t blocks : {1, 2, 3}) {
      for (std::uint64_t seed : {1, 2, 3}) {
        Rng rng(seed * 31 + blocks);
        DacmModel m = DacmModel::initialize(small_config(shared, blocks), rng);
        const auto rep = model_gradcheck(m, seed);
        CAPTURE(shared);
        CAPTURE(blocks);
        CAPTURE(seed);
        for (const auto& pe : rep.per_param) {
          CAPTURE(pe.name);
          if (shared && pe.name == "fc_b") {
            // A common shift of every logit leaves the softmax unchanged, so
            // this gradient is exactly zero and only roundoff is left to compare.
            CHECK(std::abs(pe.analytic) < 1e-12);
            CHECK(std::abs(pe.numeric) < 1e-9);
          } else {
            CHECK(pe.max_rel_error < 1e-3);
          }
        }
      }
    }
  }
}

TEST_CASE("config validation and bad inputs") {
  DacmConfig c = small_config(true);
  c.embed_dim = 5;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = small_config(true);
  c.num_cameras = 1;
  CHECK_THROWS_AS(DacmModel::zeros(c), ConfigError);
  const DacmModel m = DacmModel::zeros(small_config(true));
  CHECK_THROWS_AS(dacm_logits(m, 4, 0, 1), InputError);
}

TEST_CASE("training is deterministic and lowers the loss") {
  const Scene scene = ring_scene(3);
  Rng r1(5), r2(5);
  DacmConfig c;
  c.num_cameras = 3;
  c.embed_dim = 8;
  DacmModel a = DacmModel::initialize(c, r1), b = DacmModel::initialize(c, r2);
  const auto ha = train(a, scene, tiny_schedule(6));
  const auto hb = train(b, scene, tiny_schedule(6));
  CHECK(same_params(a, b));
  REQUIRE(ha.epochs.size() == 6);
  for (std::size_t i = 0; i < 6; ++i) CHECK(ha.epochs[i].loss == hb.epochs[i].loss);
  CHECK(ha.epochs.back().loss < ha.epochs.front().loss);
}

TEST_CASE("learning rate schedule") {
  TrainSchedule s;
  s.lr = 0.01;
  s.decay_every = 30;
  s.decay_factor = 0.1;
  CHECK(s.lr_at(0) == 0.01);
  CHECK(s.lr_at(29) == 0.01);
  CHECK(s.lr_at(30) == doctest::Approx(0.001));
  CHECK(s.lr_at(65) == doctest::Approx(0.0001));
}

TEST_CASE("checkpoint round trip is bit exact and resuming matches a continuous run") {
  const Scene scene = ring_scene(4);
  DacmConfig c;
  c.num_cameras = 3;
  c.embed_dim = 8;
  Rng r1(6), r2(6);
  DacmModel full = DacmModel::initialize(c, r1), half = DacmModel::initialize(c, r2);
  train(full, scene, tiny_schedule(4));
  train(half, scene, tiny_schedule(2));

  const std::string text = checkpoint_to_string(half, {2, 0.5, 9});
  Checkpoint ck = checkpoint_from_string(text);
  CHECK(same_params(ck.model, half));
  CHECK(ck.meta.epochs_run == 2);
  CHECK(checkpoint_to_string(ck.model, ck.meta) == text);

  TrainSchedule rest = tiny_schedule(4);
  rest.start_epoch = 2;
  train(ck.model, scene, rest);
  CHECK(same_params(ck.model, full));

  // Eval logits survive the trip as well.
  const auto l1 = dacm_logits(full, 1, 0, 10), l2 = dacm_logits(ck.model, 1, 0, 10);
  CHECK(l1 == l2);
}

TEST_CASE("checkpoint errors") {
  CHECK_THROWS_AS(checkpoint_from_string("not json"), CheckpointError);
  CHECK_THROWS_AS(checkpoint_from_string("{\"format\":\"other\"}"), CheckpointError);
  const DacmModel m = DacmModel::zeros(small_config(true));
  std::string text = checkpoint_to_string(m, {});
  const std::string tag = "\"format_version\": 1";
  const auto pos = text.find(tag);
  REQUIRE(pos != std::string::npos);
  text.replace(pos, tag.size(), "\"format_version\": 99");
  CHECK_THROWS_AS(checkpoint_from_string(text), CheckpointError);
  CHECK_THROWS_AS(require_camera_count(m, 5), CheckpointError);
  CHECK_NOTHROW(require_camera_count(m, 4));
  CHECK_THROWS_AS(load_checkpoint("/nonexistent/ck.json"), CheckpointError);
}
