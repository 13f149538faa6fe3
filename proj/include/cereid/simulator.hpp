#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "cereid/dacm.hpp"
#include "cereid/scene.hpp"
#include "cereid/strategy.hpp"

namespace cereid {

enum class StrategyKind { PatternC, PatternCE, OC, OE, OCOE };

/// Where the edge gets its spatial-temporal score o.
enum class StSource { Dacm, Frequency, Fused };

struct StrategySpec {
  StrategyKind kind = StrategyKind::PatternC;
  /// Rank edge sequences with pattern-bank scores against the target time.
  bool tcreid = false;

  bool uses_cloud_allocation() const { return kind == StrategyKind::OC || kind == StrategyKind::OCOE; }
  bool uses_edge_scoring() const { return kind == StrategyKind::OE || kind == StrategyKind::OCOE; }
  /// "Pattern-C", "Pattern-CE", "OC", "OE", "OC+OE", with "/tc" appended for tcReID.
  std::string label() const;
  /// Inverse of label(), case-insensitive; also accepts "C", "CE", "OCOE".
  static StrategySpec parse(const std::string& text);

  bool operator==(const StrategySpec&) const = default;
};

struct InferenceParams {
  double alpha = 0.1;
  double beta = 0.1;
  double gamma0 = 0.01;
  double gamma1 = 0.01;
  double mu = 0.5;
  Orientation orientation = Orientation::Consistent;
  StSource st_source = StSource::Fused;
  /// Total per-round upload budget B; 0 means 3 per camera.
  std::size_t bandwidth = 0;

  std::size_t resolved_bandwidth(std::size_t num_cameras) const { return bandwidth ? bandwidth : 3 * num_cameras; }
  void validate(std::size_t num_cameras) const;
};

/// Models available to the strategies. Either pointer may be null; plan()
/// raises ConfigError when a strategy needs a missing one.
struct StrategyModels {
  const DacmModel* dacm = nullptr;
  const FrequencyModel* frequency = nullptr;
};

struct QueryTask {
  std::size_t query = 0;  // index into scene.observations
  std::int64_t target_time = 0;
  /// Gallery observation indices per device, in timestamp order.
  std::vector<std::vector<std::size_t>> devices;
};

struct UploadPlan {
  /// Per device, the gallery observation indices in upload order.
  std::vector<std::vector<std::size_t>> sequences;
  std::vector<std::size_t> bandwidth;
};

struct ArrivalLog {
  /// round[d][p]: 1-based round in which sequence position p of device d lands.
  std::vector<std::vector<std::size_t>> round;
  /// position[d][p]: 1-based position in the cloud-merged arrival order.
  std::vector<std::vector<std::size_t>> position;
  /// Cloud-merged arrival order as (device, sequence position).
  std::vector<std::pair<std::size_t, std::size_t>> merged;
};

/// Per-query scratch state: visual similarities and a memo of DaCM outputs.
class PlanContext {
 public:
  PlanContext(const Scene& scene, const StrategyModels& models, const InferenceParams& params);

  /// Resets the visual similarities for a new query task.
  void bind(const QueryTask& task);
  const std::vector<std::vector<double>>& visual() const { return visual_; }
  TransitionCache* cache() { return cache_ ? &*cache_ : nullptr; }
  const Scene& scene() const { return *scene_; }
  const StrategyModels& models() const { return models_; }
  const InferenceParams& params() const { return params_; }
  std::vector<std::string>& warnings() { return warnings_; }

 private:
  const Scene* scene_;
  StrategyModels models_;
  InferenceParams params_;
  std::optional<TransitionCache> cache_;
  std::vector<std::vector<double>> visual_;
  std::vector<std::string> warnings_;
};

/// Checks that `models` carries what `spec` needs.
void require_models(const StrategySpec& spec, const StrategyModels& models, StSource source);

/// Joint scores (time-constrained when `tcreid`) for one device's gallery,
/// against the bound query. Smaller ranks earlier.
std::vector<double> edge_scores(const QueryTask& task, std::size_t device, bool tcreid, PlanContext& context);

UploadPlan plan(const QueryTask& task, const StrategySpec& spec, std::size_t total_bandwidth, PlanContext& context);

ArrivalLog run_rounds(const UploadPlan& plan);

/// Round in which gallery observation `observation` arrives. Throws InputError
/// when no device holds it.
std::size_t transmission_number(const UploadPlan& plan, const ArrivalLog& log, std::size_t observation);

struct QuerySampling {
  /// 0 keeps every eligible query.
  std::size_t max_queries = 0;
  std::uint64_t seed = 0;
  /// Target times are a random partner's timestamp plus a uniform integer
  /// offset in [-jitter, jitter].
  std::int64_t jitter = 0;
  /// Identities of the first arrivals stored per query.
  std::size_t record_arrivals = 10;
};

struct PairRecord {
  std::size_t strategy = 0;
  std::size_t query = 0;
  std::size_t target = 0;
  std::size_t device = 0;
  std::size_t rank = 0;
  std::size_t bandwidth = 0;
  std::size_t tn = 0;
};

struct QueryRecord {
  std::size_t strategy = 0;
  std::size_t query = 0;
  std::int64_t target_time = 0;
  std::size_t desired = 0;
  std::size_t desired_position = 0;
  std::size_t desired_round = 0;
  std::size_t total_arrivals = 0;
  /// 1-based merged position of the first cross-camera match; 0 if none.
  std::size_t first_match = 0;
  double average_precision = 0.0;
  std::vector<std::size_t> bandwidth;
  std::vector<std::int64_t> arrivals;
};

struct RunReport {
  std::vector<StrategySpec> strategies;
  std::vector<PairRecord> pairs;
  std::vector<QueryRecord> queries;
  std::size_t num_queries = 0;
  /// Test observations without a cross-camera partner in the gallery.
  std::size_t skipped = 0;
  std::size_t gallery_size = 0;
  std::size_t bandwidth = 0;
  QuerySampling sampling;
  InferenceParams params;
  std::vector<std::string> warnings;
};

/// Gallery = test-split observations (all when the scene is unsplit), grouped
/// by camera in timestamp order.
std::vector<std::vector<std::size_t>> gallery_by_device(const Scene& scene);

/// Eligible query indices and the number skipped for lack of a partner.
std::pair<std::vector<std::size_t>, std::size_t> eligible_queries(const Scene& scene);

RunReport run_benchmark(const Scene& scene, const std::vector<StrategySpec>& strategies, const StrategyModels& models,
                        const QuerySampling& sampling, const InferenceParams& params, std::size_t threads = 1);

/// Runs body(i) for i in [0, n) over `threads` workers. The first exception
/// thrown by any worker is rethrown on the caller.
void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t worker, std::size_t i)>& body);

}  // namespace cereid
