#include "cereid/scene.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "cereid/error.hpp"

namespace cereid {
namespace {

double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

std::vector<double> random_unit(std::size_t dim, Rng& rng) {
  std::vector<double> v(dim);
  double norm = 0.0;
  do {
    norm = 0.0;
    for (double& x : v) {
      x = rng.normal();
      norm += x * x;
    }
  } while (norm == 0.0);
  norm = std::sqrt(norm);
  for (double& x : v) x /= norm;
  return v;
}

}  // namespace

DelayLaw DelayLaw::fixed(std::int64_t tau) {
  DelayLaw d;
  d.kind = Kind::Deterministic;
  d.tau = tau;
  return d;
}

DelayLaw DelayLaw::lognormal(double mu, double sigma) {
  DelayLaw d;
  d.kind = Kind::LogNormal;
  d.mu = mu;
  d.sigma = sigma;
  return d;
}

std::int64_t DelayLaw::sample(Rng& rng) const {
  if (kind == Kind::Deterministic) return tau;
  const double x = std::exp(mu + sigma * rng.normal());
  return std::max<std::int64_t>(1, std::llround(x));
}

double DelayLaw::mass(std::int64_t lo, std::int64_t hi) const {
  if (hi <= lo) return 0.0;
  if (kind == Kind::Deterministic) return (tau >= lo && tau < hi) ? 1.0 : 0.0;
  // A sampled delay k >= 2 comes from x in [k - 0.5, k + 0.5); k == 1 also
  // absorbs everything below 1.5.
  auto cdf = [&](double x) {
    if (x <= 0.0) return 0.0;
    return normal_cdf((std::log(x) - mu) / sigma);
  };
  const double upper = hi <= 1 ? 0.0 : cdf(static_cast<double>(hi) - 0.5);
  const double lower = lo <= 1 ? 0.0 : cdf(static_cast<double>(lo) - 0.5);
  return std::max(0.0, upper - lower);
}

std::int64_t DelayLaw::quantile(double p) const {
  if (kind == Kind::Deterministic) return tau;
  std::int64_t hi = 1;
  while (mass(1, hi + 1) < p) hi *= 2;
  std::int64_t lo = 1;
  while (lo < hi) {
    const std::int64_t mid = lo + (hi - lo) / 2;
    if (mass(1, mid + 1) >= p) {
      hi = mid;
    } else {
      lo = mid + 1;
    }
  }
  return lo;
}

void GeneratorSpec::validate() const {
  if (num_cameras < 1) throw ConfigError("scene.generator.num_cameras must be positive");
  if (num_identities == 0) throw ConfigError("scene.generator.num_identities must be positive");
  if (visits_per_identity == 0) throw ConfigError("scene.generator.visits_per_identity must be positive");
  if (start_time_horizon < 0) throw ConfigError("scene.generator.start_time_horizon must be non-negative");
  if (dwell < 0) throw ConfigError("scene.generator.dwell must be non-negative");
  if (!(visibility > 0.0 && visibility <= 1.0)) throw ConfigError("scene.generator.visibility must lie in (0,1]");
  if (feature_noise < 0.0) throw ConfigError("scene.generator.feature_noise must be non-negative");
  if (!start_distribution.empty()) {
    if (start_distribution.size() != num_cameras) {
      throw ConfigError("scene.generator.start_distribution needs one entry per camera");
    }
    double total = 0.0;
    for (double p : start_distribution) {
      if (p < 0.0) throw ConfigError("scene.generator.start_distribution entries must be non-negative");
      total += p;
    }
    if (!(total > 0.0)) throw ConfigError("scene.generator.start_distribution must have positive mass");
  }
  std::vector<double> out_mass(num_cameras, 0.0);
  std::vector<bool> has_out(num_cameras, false);
  for (const auto& e : edges) {
    if (e.from >= num_cameras || e.to >= num_cameras) throw ConfigError("scene.generator.edges: camera index out of range");
    if (e.from == e.to) throw ConfigError("scene.generator.edges: self-loops are not allowed");
    if (e.probability < 0.0) throw ConfigError("scene.generator.edges: negative probability");
    if (e.delay.kind == DelayLaw::Kind::Deterministic && e.delay.tau < 1) {
      throw ConfigError("scene.generator.edges: deterministic delay must be at least 1 tick");
    }
    if (e.delay.kind == DelayLaw::Kind::LogNormal && !(e.delay.sigma > 0.0)) {
      throw ConfigError("scene.generator.edges: log-normal sigma must be positive");
    }
    out_mass[e.from] += e.probability;
    has_out[e.from] = true;
  }
  for (std::size_t c = 0; c < num_cameras; ++c) {
    if (has_out[c] && std::abs(out_mass[c] - 1.0) > 1e-9) {
      throw ConfigError("scene.generator.edges: outgoing probabilities of camera " + std::to_string(c) +
                        " sum to " + std::to_string(out_mass[c]) + ", expected 1");
    }
  }
}

std::vector<const TransitionEdge*> GeneratorSpec::outgoing(std::size_t camera) const {
  std::vector<const TransitionEdge*> out;
  for (const auto& e : edges) {
    if (e.from == camera) out.push_back(&e);
  }
  return out;
}

Split Scene::split_of(std::int64_t identity) const {
  const auto it = split.find(identity);
  return it == split.end() ? Split::Unassigned : it->second;
}

std::vector<std::int64_t> Scene::identities() const {
  std::set<std::int64_t> ids;
  for (const auto& o : observations) ids.insert(o.identity);
  return {ids.begin(), ids.end()};
}

std::map<std::int64_t, std::vector<std::size_t>> Scene::by_identity() const {
  std::map<std::int64_t, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < observations.size(); ++i) groups[observations[i].identity].push_back(i);
  for (auto& [id, idx] : groups) {
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
      return observations[a].timestamp < observations[b].timestamp;
    });
  }
  return groups;
}

std::size_t Scene::feature_dim() const { return observations.empty() ? 0 : observations.front().feature.size(); }

void Scene::sort_observations() {
  std::stable_sort(observations.begin(), observations.end(), [](const Observation& a, const Observation& b) {
    if (a.camera != b.camera) return a.camera < b.camera;
    if (a.timestamp != b.timestamp) return a.timestamp < b.timestamp;
    return a.identity < b.identity;
  });
}

Scene generate(const GeneratorSpec& spec, Rng& rng) {
  spec.validate();
  Scene scene;
  scene.num_cameras = spec.num_cameras;
  scene.generator = spec;
  scene.camera_labels.resize(spec.num_cameras);
  std::iota(scene.camera_labels.begin(), scene.camera_labels.end(), 0);

  std::vector<double> start = spec.start_distribution;
  if (start.empty()) start.assign(spec.num_cameras, 1.0);

  // Reachability from the possible start cameras.
  std::vector<bool> reached(spec.num_cameras, false);
  std::vector<std::size_t> frontier;
  for (std::size_t c = 0; c < spec.num_cameras; ++c) {
    if (start[c] > 0.0) {
      reached[c] = true;
      frontier.push_back(c);
    }
  }
  while (!frontier.empty()) {
    const std::size_t c = frontier.back();
    frontier.pop_back();
    for (const auto* e : spec.outgoing(c)) {
      if (e->probability > 0.0 && !reached[e->to]) {
        reached[e->to] = true;
        frontier.push_back(e->to);
      }
    }
  }
  for (std::size_t c = 0; c < spec.num_cameras; ++c) {
    if (!reached[c]) scene.warnings.push_back("camera " + std::to_string(c) + " is unreachable from the start cameras");
  }

  std::vector<std::vector<const TransitionEdge*>> out(spec.num_cameras);
  std::vector<std::vector<double>> out_p(spec.num_cameras);
  for (std::size_t c = 0; c < spec.num_cameras; ++c) {
    out[c] = spec.outgoing(c);
    for (const auto* e : out[c]) out_p[c].push_back(e->probability);
  }

  for (std::size_t id = 0; id < spec.num_identities; ++id) {
    Rng walk = rng.split();
    std::vector<double> mean;
    if (spec.feature_dim > 0) mean = random_unit(spec.feature_dim, walk);
    std::size_t camera = walk.categorical(start);
    std::int64_t t = walk.uniform_int(0, spec.start_time_horizon);
    for (std::size_t v = 0; v < spec.visits_per_identity; ++v) {
      const bool visible = spec.visibility >= 1.0 || walk.bernoulli(spec.visibility);
      if (visible) {
        Observation obs;
        obs.identity = static_cast<std::int64_t>(id);
        obs.camera = camera;
        obs.timestamp = t;
        if (spec.feature_dim > 0) {
          obs.feature = mean;
          double norm = 0.0;
          for (double& x : obs.feature) {
            x += spec.feature_noise * walk.normal();
            norm += x * x;
          }
          norm = std::sqrt(norm);
          for (double& x : obs.feature) x /= norm;
        }
        scene.observations.push_back(std::move(obs));
      }
      if (v + 1 == spec.visits_per_identity || out[camera].empty()) break;
      const auto* edge = out[camera][walk.categorical(out_p[camera])];
      t += spec.dwell + edge->delay.sample(walk);
      camera = edge->to;
    }
  }
  scene.sort_observations();
  return scene;
}

Scene split_identities(Scene scene, double train_fraction, Rng& rng) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) throw ConfigError("train_fraction must lie in (0,1)");
  std::vector<std::int64_t> ids = scene.identities();
  if (ids.size() < 2) throw DatasetError("split_identities needs at least 2 identities, scene has " + std::to_string(ids.size()));
  rng.shuffle(ids);
  auto n_train = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(ids.size())));
  n_train = std::clamp<std::size_t>(n_train, 1, ids.size() - 1);
  scene.split.clear();
  for (std::size_t i = 0; i < ids.size(); ++i) scene.split[ids[i]] = i < n_train ? Split::Train : Split::Test;
  return scene;
}

TransitionOracle oracle(const GeneratorSpec& spec, std::span<const ProbeCell> grid) {
  spec.validate();
  TransitionOracle result;
  result.num_cameras = spec.num_cameras;
  for (const ProbeCell& cell : grid) {
    if (cell.camera >= spec.num_cameras) throw InputError("oracle probe camera out of range");
    OracleEntry entry;
    entry.cell = cell;
    entry.joint.assign(spec.num_cameras, 0.0);
    entry.conditional.assign(spec.num_cameras, 0.0);
    for (const auto* e : spec.outgoing(cell.camera)) {
      entry.joint[e->to] += e->probability * e->delay.mass(cell.lo - spec.dwell, cell.hi - spec.dwell);
    }
    const double total = std::accumulate(entry.joint.begin(), entry.joint.end(), 0.0);
    if (total > 0.0) {
      entry.has_support = true;
      for (std::size_t j = 0; j < spec.num_cameras; ++j) entry.conditional[j] = entry.joint[j] / total;
    }
    result.entries.push_back(std::move(entry));
  }
  return result;
}

std::vector<ProbeCell> default_probe_grid(const GeneratorSpec& spec, std::size_t bins_per_camera, double lo_q,
                                          double hi_q) {
  std::vector<ProbeCell> grid;
  if (bins_per_camera == 0) return grid;
  for (std::size_t c = 0; c < spec.num_cameras; ++c) {
    const auto out = spec.outgoing(c);
    if (out.empty()) continue;
    std::int64_t lo = INT64_MAX, hi = 0;
    for (const auto* e : out) {
      lo = std::min(lo, e->delay.quantile(lo_q));
      hi = std::max(hi, e->delay.quantile(hi_q) + 1);
    }
    const auto n = static_cast<std::int64_t>(bins_per_camera);
    const std::int64_t width = std::max<std::int64_t>(1, (hi - lo + n - 1) / n);
    for (std::int64_t b = 0; b < n; ++b) {
      grid.push_back({c, spec.dwell + lo + b * width, spec.dwell + lo + (b + 1) * width});
    }
  }
  return grid;
}

}  // namespace cereid
