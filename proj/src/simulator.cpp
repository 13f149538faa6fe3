#include "cereid/simulator.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <cmath>
#include <exception>
#include <map>
#include <mutex>
#include <numeric>
#include <thread>

#include "cereid/checkpoint.hpp"
#include "cereid/error.hpp"
#include "cereid/metrics.hpp"

namespace cereid {
namespace {

std::string lower(std::string s) {
  for (char& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

std::vector<std::size_t> stable_order(std::size_t n, const std::function<bool(std::size_t, std::size_t)>& before) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), before);
  return order;
}

std::vector<std::size_t> permute(const std::vector<std::size_t>& items, const std::vector<std::size_t>& order) {
  std::vector<std::size_t> out(order.size());
  for (std::size_t k = 0; k < order.size(); ++k) out[k] = items[order[k]];
  return out;
}

// Largest cache before it is dropped; keeps worker memory bounded on long
// timelines.
constexpr std::size_t kCacheLimit = 1u << 20;

}  // namespace

std::string StrategySpec::label() const {
  std::string base;
  switch (kind) {
    case StrategyKind::PatternC: base = "Pattern-C"; break;
    case StrategyKind::PatternCE: base = "Pattern-CE"; break;
    case StrategyKind::OC: base = "OC"; break;
    case StrategyKind::OE: base = "OE"; break;
    case StrategyKind::OCOE: base = "OC+OE"; break;
  }
  return tcreid ? base + "/tc" : base;
}

StrategySpec StrategySpec::parse(const std::string& text) {
  std::string s = lower(text);
  StrategySpec spec;
  if (s.size() > 3 && s.ends_with("/tc")) {
    spec.tcreid = true;
    s.resize(s.size() - 3);
  }
  if (s == "pattern-c" || s == "c") {
    spec.kind = StrategyKind::PatternC;
  } else if (s == "pattern-ce" || s == "ce") {
    spec.kind = StrategyKind::PatternCE;
  } else if (s == "oc") {
    spec.kind = StrategyKind::OC;
  } else if (s == "oe") {
    spec.kind = StrategyKind::OE;
  } else if (s == "oc+oe" || s == "ocoe") {
    spec.kind = StrategyKind::OCOE;
  } else {
    throw ConfigError("unknown strategy '" + text + "' (expected Pattern-C, Pattern-CE, OC, OE or OC+OE, optionally with /tc)");
  }
  if (spec.tcreid && !spec.uses_edge_scoring()) {
    throw ConfigError("strategy '" + text + "': tcReID scoring needs edge-level ranking (OE or OC+OE)");
  }
  return spec;
}

void InferenceParams::validate(std::size_t num_cameras) const {
  if (!(alpha > 0.0)) throw ConfigError("inference.alpha must be positive");
  if (!(beta > 0.0)) throw ConfigError("inference.beta must be positive");
  if (!(gamma0 > 0.0)) throw ConfigError("inference.gamma0 must be positive");
  if (!(gamma1 > 0.0)) throw ConfigError("inference.gamma1 must be positive");
  if (!(mu >= 0.0 && mu <= 1.0)) throw ConfigError("inference.mu must lie in [0,1]");
  if (resolved_bandwidth(num_cameras) < num_cameras) {
    throw ConfigError("inference.bandwidth " + std::to_string(bandwidth) + " is below the camera count " +
                      std::to_string(num_cameras));
  }
}

PlanContext::PlanContext(const Scene& scene, const StrategyModels& models, const InferenceParams& params)
    : scene_(&scene), models_(models), params_(params) {
  if (models.dacm) cache_.emplace(*models.dacm);
}

void PlanContext::bind(const QueryTask& task) {
  const auto& obs = scene_->observations;
  const auto& q = obs.at(task.query).feature;
  visual_.assign(task.devices.size(), {});
  for (std::size_t d = 0; d < task.devices.size(); ++d) {
    visual_[d].reserve(task.devices[d].size());
    for (std::size_t g : task.devices[d]) {
      const auto& f = obs[g].feature;
      double dot = 0.0;
      if (f.size() == q.size()) {
        for (std::size_t i = 0; i < f.size(); ++i) dot += f[i] * q[i];
      }
      visual_[d].push_back(dot);
    }
  }
  if (cache_ && cache_->size() > kCacheLimit) cache_.emplace(*models_.dacm);
}

void require_models(const StrategySpec& spec, const StrategyModels& models, StSource source) {
  if (spec.uses_cloud_allocation() && !models.dacm) {
    throw ConfigError("strategy " + spec.label() + " needs a trained DaCM for bandwidth allocation");
  }
  if (spec.tcreid && !models.dacm) throw ConfigError("strategy " + spec.label() + " needs a DaCM for the pattern bank");
  if (spec.uses_edge_scoring()) {
    if (source != StSource::Frequency && !models.dacm) {
      throw ConfigError("strategy " + spec.label() + " needs a DaCM for spatial-temporal scores");
    }
    if (source != StSource::Dacm && !models.frequency) {
      throw ConfigError("strategy " + spec.label() + " needs a frequency model for spatial-temporal scores");
    }
  }
}

std::vector<double> edge_scores(const QueryTask& task, std::size_t device, bool tcreid, PlanContext& context) {
  const auto& params = context.params();
  const auto& models = context.models();
  const auto& obs = context.scene().observations;
  const Observation& q = obs.at(task.query);
  const auto& items = task.devices.at(device);
  std::vector<std::int64_t> times(items.size());
  for (std::size_t k = 0; k < items.size(); ++k) times[k] = obs[items[k]].timestamp;
  std::vector<double> o;
  switch (params.st_source) {
    case StSource::Dacm:
      o = st_scores_dacm(*context.cache(), q.camera, q.timestamp, device, times);
      break;
    case StSource::Frequency:
      o = st_scores_frequency(*models.frequency, q.camera, q.timestamp, device, times);
      break;
    case StSource::Fused:
      o = st_scores_fused(st_scores_dacm(*context.cache(), q.camera, q.timestamp, device, times),
                          st_scores_frequency(*models.frequency, q.camera, q.timestamp, device, times), params.mu);
      break;
  }
  auto s = joint_similarity(o, context.visual().at(device), params.alpha, params.beta, params.orientation);
  if (tcreid) {
    const auto bank = build_pattern_bank(*context.cache(), q.camera, q.timestamp, task.target_time, times);
    s = tcreid_scores(s, bank, params.orientation, &context.warnings());
  }
  return s;
}

UploadPlan plan(const QueryTask& task, const StrategySpec& spec, std::size_t total_bandwidth, PlanContext& context) {
  const auto& params = context.params();
  const auto& models = context.models();
  require_models(spec, models, params.st_source);
  const std::size_t C = task.devices.size();
  if (total_bandwidth < C) throw ConfigError("bandwidth must be at least the number of devices");
  const auto& obs = context.scene().observations;
  const Observation& q = obs.at(task.query);

  UploadPlan p;
  std::vector<std::size_t> sizes(C);
  for (std::size_t d = 0; d < C; ++d) sizes[d] = task.devices[d].size();
  if (spec.uses_cloud_allocation()) {
    const auto& y = context.cache()->logits(q.camera, task.target_time - q.timestamp);
    p.bandwidth = allocate_bandwidth(y, sizes, total_bandwidth, params.gamma0, params.gamma1).bandwidth;
  } else {
    p.bandwidth = uniform_bandwidth(C, total_bandwidth).bandwidth;
  }

  p.sequences.resize(C);
  const auto& visual = context.visual();
  for (std::size_t d = 0; d < C; ++d) {
    const auto& items = task.devices[d];
    if (spec.kind == StrategyKind::PatternC) {
      p.sequences[d] = items;
      continue;
    }
    const auto& v = visual.at(d);
    if (!spec.uses_edge_scoring()) {
      p.sequences[d] = permute(items, stable_order(items.size(), [&](std::size_t a, std::size_t b) { return v[a] > v[b]; }));
      continue;
    }
    const auto s = edge_scores(task, d, spec.tcreid, context);
    p.sequences[d] = permute(items, stable_order(items.size(), [&](std::size_t a, std::size_t b) { return s[a] < s[b]; }));
  }
  return p;
}

ArrivalLog run_rounds(const UploadPlan& plan) {
  const std::size_t C = plan.sequences.size();
  if (plan.bandwidth.size() != C) throw ShapeError("run_rounds: one bandwidth per device required");
  ArrivalLog log;
  log.round.resize(C);
  log.position.resize(C);
  std::size_t rounds = 0, total = 0;
  for (std::size_t d = 0; d < C; ++d) {
    const std::size_t n = plan.sequences[d].size(), b = plan.bandwidth[d];
    if (b == 0 && n > 0) throw ConfigError("run_rounds: device " + std::to_string(d) + " has zero bandwidth");
    log.round[d].assign(n, 0);
    log.position[d].assign(n, 0);
    if (n > 0) rounds = std::max(rounds, (n + b - 1) / b);
    total += n;
  }
  log.merged.reserve(total);
  for (std::size_t r = 1; r <= rounds; ++r) {
    for (std::size_t d = 0; d < C; ++d) {
      const std::size_t n = plan.sequences[d].size(), b = plan.bandwidth[d];
      for (std::size_t k = (r - 1) * b; k < std::min(r * b, n); ++k) {
        log.round[d][k] = r;
        log.merged.emplace_back(d, k);
        log.position[d][k] = log.merged.size();
      }
    }
  }
  return log;
}

std::size_t transmission_number(const UploadPlan& plan, const ArrivalLog& log, std::size_t observation) {
  for (std::size_t d = 0; d < plan.sequences.size(); ++d) {
    const auto& seq = plan.sequences[d];
    const auto it = std::find(seq.begin(), seq.end(), observation);
    if (it != seq.end()) return log.round[d][static_cast<std::size_t>(it - seq.begin())];
  }
  throw InputError("transmission_number: observation " + std::to_string(observation) + " is in no device gallery");
}

std::vector<std::vector<std::size_t>> gallery_by_device(const Scene& scene) {
  std::vector<std::vector<std::size_t>> devices(scene.num_cameras);
  for (std::size_t i = 0; i < scene.observations.size(); ++i) {
    const auto& o = scene.observations[i];
    if (!scene.split.empty() && scene.split_of(o.identity) != Split::Test) continue;
    devices.at(o.camera).push_back(i);
  }
  // Observations are sorted by (camera, timestamp, identity), so each list is
  // already in timestamp order.
  return devices;
}

std::pair<std::vector<std::size_t>, std::size_t> eligible_queries(const Scene& scene) {
  std::map<std::int64_t, std::vector<std::size_t>> members;
  for (const auto& dev : gallery_by_device(scene)) {
    for (std::size_t g : dev) members[scene.observations[g].identity].push_back(g);
  }
  std::vector<std::size_t> keep;
  std::size_t skipped = 0;
  for (const auto& dev : gallery_by_device(scene)) {
    for (std::size_t g : dev) {
      const auto& o = scene.observations[g];
      const auto& m = members[o.identity];
      const bool partner = std::any_of(m.begin(), m.end(), [&](std::size_t x) {
        return scene.observations[x].camera != o.camera;
      });
      if (partner) {
        keep.push_back(g);
      } else {
        ++skipped;
      }
    }
  }
  std::sort(keep.begin(), keep.end());
  return {keep, skipped};
}

void parallel_for(std::size_t n, std::size_t threads,
                  const std::function<void(std::size_t worker, std::size_t i)>& body) {
  threads = std::max<std::size_t>(1, std::min(threads, n));
  if (threads == 1) {
    for (std::size_t i = 0; i < n; ++i) body(0, i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::atomic<bool> failed{false};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < threads; ++w) {
    pool.emplace_back([&, w] {
      for (;;) {
        if (failed.load()) return;
        const std::size_t i = next.fetch_add(1);
        if (i >= n) return;
        try {
          body(w, i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mutex);
          if (!error) error = std::current_exception();
          failed.store(true);
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

namespace {

struct QueryOutcome {
  std::vector<PairRecord> pairs;
  std::vector<QueryRecord> queries;
  std::vector<std::string> warnings;
};

bool depends_on_target(const StrategySpec& spec) { return spec.uses_cloud_allocation() || spec.tcreid; }

void record_pairs(const Scene& scene, const UploadPlan& p, const ArrivalLog& log, std::size_t strategy,
                  std::size_t query, std::span<const std::size_t> partners, std::vector<PairRecord>& out) {
  for (std::size_t target : partners) {
    const std::size_t d = scene.observations[target].camera;
    const auto& seq = p.sequences[d];
    const auto it = std::find(seq.begin(), seq.end(), target);
    if (it == seq.end()) throw InputError("benchmark: target missing from its device sequence");
    PairRecord r;
    r.strategy = strategy;
    r.query = query;
    r.target = target;
    r.device = d;
    r.rank = static_cast<std::size_t>(it - seq.begin()) + 1;
    r.bandwidth = p.bandwidth[d];
    r.tn = transmission_number(p, log, target);
    out.push_back(r);
  }
}

}  // namespace

RunReport run_benchmark(const Scene& scene, const std::vector<StrategySpec>& strategies, const StrategyModels& models,
                        const QuerySampling& sampling, const InferenceParams& params, std::size_t threads) {
  params.validate(scene.num_cameras);
  for (const auto& s : strategies) require_models(s, models, params.st_source);
  if (models.dacm) require_camera_count(*models.dacm, scene.num_cameras);

  RunReport report;
  report.strategies = strategies;
  report.sampling = sampling;
  report.params = params;
  report.bandwidth = params.resolved_bandwidth(scene.num_cameras);

  const auto gallery = gallery_by_device(scene);
  for (const auto& d : gallery) report.gallery_size += d.size();
  if (report.gallery_size == 0) throw DatasetError("benchmark: test split is empty");
  if (scene.feature_dim() == 0) {
    report.warnings.push_back("scene has no appearance features; visual similarity is 0 for every item");
  }

  auto [queries, skipped] = eligible_queries(scene);
  report.skipped = skipped;
  if (sampling.max_queries > 0 && queries.size() > sampling.max_queries) {
    Rng rng = Rng::stream(sampling.seed, 0x5157ULL);
    rng.shuffle(queries);
    queries.resize(sampling.max_queries);
    std::sort(queries.begin(), queries.end());
  }
  report.num_queries = queries.size();

  const auto& obs = scene.observations;
  std::vector<QueryOutcome> outcomes(queries.size());
  std::vector<std::optional<PlanContext>> contexts(std::max<std::size_t>(1, threads));

  parallel_for(queries.size(), threads, [&](std::size_t worker, std::size_t qi) {
    auto& ctx = contexts[worker];
    if (!ctx) ctx.emplace(scene, models, params);
    const std::size_t qidx = queries[qi];
    const Observation& q = obs[qidx];

    QueryTask task;
    task.query = qidx;
    task.devices = gallery;
    auto& own = task.devices[q.camera];
    own.erase(std::remove(own.begin(), own.end(), qidx), own.end());

    std::vector<std::size_t> partners;
    for (const auto& dev : task.devices) {
      for (std::size_t g : dev) {
        if (obs[g].identity == q.identity && obs[g].camera != q.camera) partners.push_back(g);
      }
    }
    std::sort(partners.begin(), partners.end());

    Rng rng = Rng::stream(sampling.seed, qidx);
    const std::size_t anchor = partners[rng.uniform_index(partners.size())];
    const std::int64_t jitter = sampling.jitter > 0 ? rng.uniform_int(-sampling.jitter, sampling.jitter) : 0;
    const std::int64_t target_time = obs[anchor].timestamp + jitter;
    std::size_t desired = partners.front();
    for (std::size_t g : partners) {
      const auto dist = [&](std::size_t x) { return std::llabs(obs[x].timestamp - target_time); };
      if (dist(g) < dist(desired) || (dist(g) == dist(desired) && obs[g].timestamp < obs[desired].timestamp)) {
        desired = g;
      }
    }

    ctx->bind(task);
    auto& out = outcomes[qi];
    std::vector<std::int64_t> ids;
    std::vector<std::size_t> cams;
    for (std::size_t si = 0; si < strategies.size(); ++si) {
      const auto& spec = strategies[si];
      if (depends_on_target(spec)) {
        for (std::size_t target : partners) {
          task.target_time = obs[target].timestamp;
          const auto p = plan(task, spec, report.bandwidth, *ctx);
          const auto log = run_rounds(p);
          record_pairs(scene, p, log, si, qidx, std::span<const std::size_t>(&target, 1), out.pairs);
        }
      }
      task.target_time = target_time;
      const auto p = plan(task, spec, report.bandwidth, *ctx);
      const auto log = run_rounds(p);
      if (!depends_on_target(spec)) record_pairs(scene, p, log, si, qidx, partners, out.pairs);

      QueryRecord rec;
      rec.strategy = si;
      rec.query = qidx;
      rec.target_time = target_time;
      rec.desired = desired;
      rec.bandwidth = p.bandwidth;
      rec.total_arrivals = log.merged.size();
      ids.clear();
      cams.clear();
      for (const auto& [d, k] : log.merged) {
        const std::size_t g = p.sequences[d][k];
        ids.push_back(obs[g].identity);
        cams.push_back(obs[g].camera);
        if (g == desired) {
          rec.desired_position = log.position[d][k];
          rec.desired_round = log.round[d][k];
        }
      }
      rec.arrivals.assign(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(std::min(ids.size(), sampling.record_arrivals)));
      const auto stats = ranking_stats(ids, cams, q.identity, q.camera);
      rec.first_match = stats.valid ? stats.first_match : 0;
      rec.average_precision = stats.average_precision;
      out.queries.push_back(std::move(rec));
    }
    out.warnings = std::move(ctx->warnings());
    ctx->warnings().clear();
  });

  for (auto& o : outcomes) {
    report.pairs.insert(report.pairs.end(), o.pairs.begin(), o.pairs.end());
    report.queries.insert(report.queries.end(), o.queries.begin(), o.queries.end());
    for (auto& w : o.warnings) {
      if (std::find(report.warnings.begin(), report.warnings.end(), w) == report.warnings.end()) {
        report.warnings.push_back(std::move(w));
      }
    }
  }
  return report;
}

}  // namespace cereid
