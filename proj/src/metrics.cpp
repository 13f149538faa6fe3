#include "cereid/metrics.hpp"

#include <algorithm>
#include <numeric>
#include <optional>

#include "cereid/error.hpp"

namespace cereid {
namespace {

std::vector<const PairRecord*> pairs_of(const RunReport& report, std::size_t strategy) {
  std::vector<const PairRecord*> out;
  for (const auto& p : report.pairs) {
    if (p.strategy == strategy) out.push_back(&p);
  }
  return out;
}

std::vector<std::size_t> positions_of(const RunReport& report, std::size_t strategy) {
  std::vector<std::size_t> out;
  for (const auto& q : report.queries) {
    if (q.strategy != strategy) continue;
    if (q.desired_position == 0) {
      throw InputError("query " + std::to_string(q.query) + ": desired image never arrived");
    }
    out.push_back(q.desired_position);
  }
  return out;
}

}  // namespace

double mtn(const RunReport& report, std::size_t strategy) {
  const auto pairs = pairs_of(report, strategy);
  if (pairs.empty()) throw InputError("mtn: no pairs recorded for strategy " + std::to_string(strategy));
  double sum = 0.0;
  for (const auto* p : pairs) sum += static_cast<double>(p->tn);
  return sum / static_cast<double>(pairs.size());
}

double replay_mtn(const RunReport& report, std::size_t strategy) {
  const auto pairs = pairs_of(report, strategy);
  if (pairs.empty()) throw InputError("replay_mtn: no pairs recorded for strategy " + std::to_string(strategy));
  double sum = 0.0;
  for (const auto* p : pairs) {
    if (p->bandwidth == 0) throw InputError("replay_mtn: zero bandwidth in pair row");
    sum += static_cast<double>((p->rank + p->bandwidth - 1) / p->bandwidth);
  }
  return sum / static_cast<double>(pairs.size());
}

double precise_rank_k(const RunReport& report, std::size_t strategy, std::size_t k) {
  const auto pos = positions_of(report, strategy);
  if (pos.empty()) return 0.0;
  const auto hits = std::count_if(pos.begin(), pos.end(), [k](std::size_t x) { return x <= k; });
  return static_cast<double>(hits) / static_cast<double>(pos.size());
}

double mean_precise_rank(const RunReport& report, std::size_t strategy) {
  const auto pos = positions_of(report, strategy);
  if (pos.empty()) throw InputError("mean_precise_rank: no queries recorded");
  double sum = 0.0;
  for (std::size_t x : pos) sum += static_cast<double>(x);
  return sum / static_cast<double>(pos.size());
}

bool tail_sum_identity_holds(const RunReport& report, std::size_t strategy) {
  const auto pos = positions_of(report, strategy);
  if (pos.empty()) return true;
  std::size_t lhs = 0, kmax = 0;
  for (std::size_t x : pos) {
    lhs += x;
    kmax = std::max(kmax, x);
  }
  // misses(K) = n * (1 - pR-K) counted directly.
  std::size_t rhs = pos.size();
  for (std::size_t K = 1; K <= kmax; ++K) {
    rhs += static_cast<std::size_t>(std::count_if(pos.begin(), pos.end(), [K](std::size_t x) { return x > K; }));
  }
  return lhs == rhs;
}

RankingStats ranking_stats(std::span<const std::int64_t> identities, std::span<const std::size_t> cameras,
                           std::int64_t query_identity, std::size_t query_camera) {
  if (identities.size() != cameras.size()) throw ShapeError("ranking_stats: identity and camera lists differ");
  RankingStats st;
  std::size_t rank = 0, hits = 0, total = 0;
  for (std::size_t i = 0; i < identities.size(); ++i) {
    if (identities[i] == query_identity && cameras[i] != query_camera) ++total;
  }
  if (total == 0) return st;
  double precision_sum = 0.0;
  for (std::size_t i = 0; i < identities.size(); ++i) {
    const bool same = identities[i] == query_identity;
    if (same && cameras[i] == query_camera) continue;  // junk
    ++rank;
    if (!same) continue;
    ++hits;
    if (st.first_match == 0) st.first_match = rank;
    precision_sum += static_cast<double>(hits) / static_cast<double>(rank);
  }
  st.valid = true;
  st.average_precision = precision_sum / static_cast<double>(total);
  return st;
}

CmcResult cmc_from_stats(std::span<const RankingStats> stats, std::span<const std::size_t> ks) {
  CmcResult r;
  for (std::size_t k : ks) r.rank_k[k] = 0.0;
  double ap = 0.0;
  for (const auto& s : stats) {
    if (!s.valid) {
      ++r.skipped;
      continue;
    }
    ++r.evaluated;
    ap += s.average_precision;
    for (std::size_t k : ks) {
      if (s.first_match <= k) r.rank_k[k] += 1.0;
    }
  }
  if (r.evaluated > 0) {
    const double n = static_cast<double>(r.evaluated);
    r.map = ap / n;
    for (auto& [k, v] : r.rank_k) v /= n;
  }
  return r;
}

CmcResult cmc_map(std::span<const RankedList> lists, std::span<const std::size_t> ks) {
  std::vector<RankingStats> stats;
  stats.reserve(lists.size());
  for (const auto& l : lists) stats.push_back(ranking_stats(l.identities, l.cameras, l.query_identity, l.query_camera));
  return cmc_from_stats(stats, ks);
}

MetricSummary summarize(const RunReport& report, std::size_t strategy, std::span<const std::size_t> ks) {
  MetricSummary m;
  m.strategy = report.strategies.at(strategy).label();
  m.mtn = mtn(report, strategy);
  m.mpr = mean_precise_rank(report, strategy);
  for (std::size_t k : ks) m.pr_k[k] = precise_rank_k(report, strategy, k);
  std::vector<RankingStats> stats;
  for (const auto& q : report.queries) {
    if (q.strategy != strategy) continue;
    RankingStats s;
    s.valid = q.first_match > 0;
    s.first_match = q.first_match;
    s.average_precision = q.average_precision;
    stats.push_back(s);
  }
  const auto cmc = cmc_from_stats(stats, ks);
  m.r_k = cmc.rank_k;
  m.map = cmc.map;
  m.num_queries = stats.size();
  m.num_pairs = pairs_of(report, strategy).size();
  m.num_skipped = report.skipped;
  return m;
}

std::vector<std::string> check_protocol_identities(const RunReport& report) {
  std::vector<std::string> bad;
  for (std::size_t s = 0; s < report.strategies.size(); ++s) {
    const std::string name = report.strategies[s].label();
    const auto pos = positions_of(report, s);
    std::size_t kmax = 1;
    for (std::size_t x : pos) kmax = std::max(kmax, x);
    double prev = -1.0;
    for (std::size_t K = 1; K <= kmax; ++K) {
      const double r = precise_rank_k(report, s, K);
      if (r < prev) {
        bad.push_back(name + ": pR-" + std::to_string(K) + " decreases");
        break;
      }
      prev = r;
    }
    if (!pos.empty() && precise_rank_k(report, s, kmax) != 1.0) bad.push_back(name + ": pR-inf below 1");
    if (!tail_sum_identity_holds(report, s)) bad.push_back(name + ": tail-sum identity fails");
    if (!pairs_of(report, s).empty() && mtn(report, s) != replay_mtn(report, s)) {
      bad.push_back(name + ": mtn differs from replay");
    }
    for (const auto* p : pairs_of(report, s)) {
      if (p->tn != (p->rank + p->bandwidth - 1) / p->bandwidth) {
        bad.push_back(name + ": pair TN differs from ceil(rank/b)");
        break;
      }
    }
    for (const auto& q : report.queries) {
      if (q.strategy != s) continue;
      std::size_t total = 0;
      for (std::size_t b : q.bandwidth) {
        if (b == 0) bad.push_back(name + ": zero device bandwidth");
        total += b;
      }
      if (total != report.bandwidth) {
        bad.push_back(name + ": bandwidth sums to " + std::to_string(total));
        break;
      }
    }
  }
  return bad;
}

CentralResult evaluate_central(const Scene& scene, const StrategyModels& models, const InferenceParams& params,
                               const QuerySampling& sampling, std::span<const std::size_t> ks, std::size_t threads) {
  require_models(StrategySpec{StrategyKind::OE, false}, models, params.st_source);
  auto [queries, skipped] = eligible_queries(scene);
  if (sampling.max_queries > 0 && queries.size() > sampling.max_queries) {
    Rng rng = Rng::stream(sampling.seed, 0x5157ULL);
    rng.shuffle(queries);
    queries.resize(sampling.max_queries);
    std::sort(queries.begin(), queries.end());
  }
  const auto gallery = gallery_by_device(scene);
  const auto& obs = scene.observations;
  std::vector<RankingStats> visual(queries.size()), joint(queries.size());
  std::vector<std::optional<PlanContext>> contexts(std::max<std::size_t>(1, threads));

  parallel_for(queries.size(), threads, [&](std::size_t worker, std::size_t qi) {
    auto& ctx = contexts[worker];
    if (!ctx) ctx.emplace(scene, models, params);
    const std::size_t qidx = queries[qi];
    const Observation& q = obs[qidx];
    QueryTask task;
    task.query = qidx;
    task.target_time = q.timestamp;
    task.devices = gallery;
    auto& own = task.devices[q.camera];
    own.erase(std::remove(own.begin(), own.end(), qidx), own.end());
    ctx->bind(task);

    std::vector<std::size_t> items;
    std::vector<double> v, s;
    for (std::size_t d = 0; d < task.devices.size(); ++d) {
      const auto sd = edge_scores(task, d, false, *ctx);
      items.insert(items.end(), task.devices[d].begin(), task.devices[d].end());
      v.insert(v.end(), ctx->visual()[d].begin(), ctx->visual()[d].end());
      s.insert(s.end(), sd.begin(), sd.end());
    }
    const auto rank_by = [&](auto before) {
      std::vector<std::size_t> order(items.size());
      std::iota(order.begin(), order.end(), 0);
      std::stable_sort(order.begin(), order.end(), before);
      std::vector<std::int64_t> ids;
      std::vector<std::size_t> cams;
      for (std::size_t k : order) {
        ids.push_back(obs[items[k]].identity);
        cams.push_back(obs[items[k]].camera);
      }
      return ranking_stats(ids, cams, q.identity, q.camera);
    };
    visual[qi] = rank_by([&](std::size_t a, std::size_t b) { return v[a] > v[b]; });
    joint[qi] = rank_by([&](std::size_t a, std::size_t b) { return s[a] < s[b]; });
  });

  CentralResult r;
  r.visual = cmc_from_stats(visual, ks);
  r.joint = cmc_from_stats(joint, ks);
  r.num_queries = queries.size();
  r.skipped = skipped;
  return r;
}

}  // namespace cereid
