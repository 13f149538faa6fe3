#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "cereid/simulator.hpp"

namespace cereid {

/// Mean TN over every recorded pair of one strategy.
double mtn(const RunReport& report, std::size_t strategy);
/// Mean of ceil(rank / bandwidth) recomputed from the raw pair rows.
double replay_mtn(const RunReport& report, std::size_t strategy);
/// Fraction of queries whose desired image is among the first K arrivals.
double precise_rank_k(const RunReport& report, std::size_t strategy, std::size_t k);
/// Mean 1-based arrival position of the desired image.
double mean_precise_rank(const RunReport& report, std::size_t strategy);
/// Checks sum(k_i) == n + sum_{K>=1} #{k_i > K} in integer arithmetic, i.e.
/// mpR = 1 + sum_K (1 - pR-K).
bool tail_sum_identity_holds(const RunReport& report, std::size_t strategy);

struct RankingStats {
  /// False when the list has no cross-camera match for the query.
  bool valid = false;
  /// 1-based rank of the first match after junk removal.
  std::size_t first_match = 0;
  double average_precision = 0.0;
};

/// Retrieval statistics of one ranked list. Same-identity same-camera items
/// are junk and removed before ranking.
RankingStats ranking_stats(std::span<const std::int64_t> identities, std::span<const std::size_t> cameras,
                           std::int64_t query_identity, std::size_t query_camera);

struct RankedList {
  std::int64_t query_identity = 0;
  std::size_t query_camera = 0;
  std::vector<std::int64_t> identities;
  std::vector<std::size_t> cameras;
};

struct CmcResult {
  std::map<std::size_t, double> rank_k;
  double map = 0.0;
  std::size_t evaluated = 0;
  std::size_t skipped = 0;
};

CmcResult cmc_map(std::span<const RankedList> lists, std::span<const std::size_t> ks);
/// Same aggregation from precomputed per-list statistics.
CmcResult cmc_from_stats(std::span<const RankingStats> stats, std::span<const std::size_t> ks);

struct MetricSummary {
  std::string strategy;
  double mtn = 0.0;
  std::map<std::size_t, double> pr_k;
  double mpr = 0.0;
  std::map<std::size_t, double> r_k;
  double map = 0.0;
  std::size_t num_queries = 0;
  std::size_t num_pairs = 0;
  std::size_t num_skipped = 0;
};

MetricSummary summarize(const RunReport& report, std::size_t strategy, std::span<const std::size_t> ks);

struct CentralResult {
  CmcResult visual;
  CmcResult joint;
  std::size_t num_queries = 0;
  std::size_t skipped = 0;
};

/// Centralized retrieval over the whole test gallery: visual cosine ranking
/// versus per-device joint scores merged into one ascending list.
CentralResult evaluate_central(const Scene& scene, const StrategyModels& models, const InferenceParams& params,
                               const QuerySampling& sampling, std::span<const std::size_t> ks, std::size_t threads = 1);

/// Protocol identities over every strategy of a report: pR-K monotone in K,
/// tail-sum identity, mtn == replay, bandwidths summing to B. Returns the
/// violations found (empty when all hold).
std::vector<std::string> check_protocol_identities(const RunReport& report);

}  // namespace cereid
