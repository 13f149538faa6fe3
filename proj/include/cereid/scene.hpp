#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cereid/rng.hpp"

namespace cereid {

enum class Split { Unassigned, Train, Test };

struct Observation {
  std::int64_t identity = 0;
  std::size_t camera = 0;
  std::int64_t timestamp = 0;
  /// Unit-norm appearance feature; empty when the scene carries none.
  std::vector<double> feature;

  bool operator==(const Observation&) const = default;
};

/// Travel-time law of one camera-to-camera edge. Sampled delays are rounded
/// to whole ticks and never drop below one tick.
struct DelayLaw {
  enum class Kind { Deterministic, LogNormal };
  Kind kind = Kind::Deterministic;
  std::int64_t tau = 1;
  double mu = 0.0;
  double sigma = 1.0;

  static DelayLaw fixed(std::int64_t tau);
  static DelayLaw lognormal(double mu, double sigma);

  std::int64_t sample(Rng& rng) const;
  /// P(sampled delay in [lo, hi)) for integer tick bounds.
  double mass(std::int64_t lo, std::int64_t hi) const;
  /// Smallest integer delay whose cumulative mass reaches p.
  std::int64_t quantile(double p) const;

  bool operator==(const DelayLaw&) const = default;
};

struct TransitionEdge {
  std::size_t from = 0;
  std::size_t to = 0;
  double probability = 0.0;
  DelayLaw delay;

  bool operator==(const TransitionEdge&) const = default;
};

/// Random-walk description of a synthetic camera network.
struct GeneratorSpec {
  std::size_t num_cameras = 0;
  std::vector<TransitionEdge> edges;
  /// Probability of each starting camera; empty means uniform.
  std::vector<double> start_distribution;
  /// Walk start times are uniform integers in [0, start_time_horizon].
  std::int64_t start_time_horizon = 0;
  std::size_t num_identities = 0;
  std::size_t visits_per_identity = 1;
  /// Ticks spent at a camera before departing; added to every hop.
  std::int64_t dwell = 0;
  /// Probability that a visit is captured as an observation.
  double visibility = 1.0;
  std::size_t feature_dim = 0;
  double feature_noise = 0.0;

  void validate() const;
  std::vector<const TransitionEdge*> outgoing(std::size_t camera) const;

  bool operator==(const GeneratorSpec&) const = default;
};

struct Scene {
  std::size_t num_cameras = 0;
  /// Sorted by (camera, timestamp, identity).
  std::vector<Observation> observations;
  std::map<std::int64_t, Split> split;
  std::optional<GeneratorSpec> generator;
  /// Original camera label of each dense camera index.
  std::vector<std::int64_t> camera_labels;
  /// Non-fatal issues found while building the scene.
  std::vector<std::string> warnings;

  Split split_of(std::int64_t identity) const;
  std::vector<std::int64_t> identities() const;
  /// Observation indices grouped by identity, each group in time order.
  std::map<std::int64_t, std::vector<std::size_t>> by_identity() const;
  std::size_t feature_dim() const;
  void sort_observations();
};

Scene generate(const GeneratorSpec& spec, Rng& rng);

/// Assigns round(train_fraction * n) identities to train (at least one on each
/// side) and the rest to test.
Scene split_identities(Scene scene, double train_fraction, Rng& rng);

/// A probe cell: source camera and a delay bin [lo, hi) in ticks between
/// consecutive observations.
struct ProbeCell {
  std::size_t camera = 0;
  std::int64_t lo = 0;
  std::int64_t hi = 1;
};

struct OracleEntry {
  ProbeCell cell;
  /// p(next = j, delay in bin | camera)
  std::vector<double> joint;
  /// p(next = j | camera, delay in bin); all zero without support.
  std::vector<double> conditional;
  bool has_support = false;
};

struct TransitionOracle {
  std::size_t num_cameras = 0;
  std::vector<OracleEntry> entries;
};

TransitionOracle oracle(const GeneratorSpec& spec, std::span<const ProbeCell> grid);

/// Per camera, splits the [lo_q, hi_q] quantile range of its outgoing delay
/// mixture (dwell included) into equal-width integer bins.
std::vector<ProbeCell> default_probe_grid(const GeneratorSpec& spec, std::size_t bins_per_camera, double lo_q = 0.02,
                                          double hi_q = 0.98);

// Observation CSV: header `identity,camera,timestamp[,f0,...,f{F-1}]`.
void export_csv(const Scene& scene, std::ostream& out);
void export_csv(const Scene& scene, const std::string& path);
Scene ingest_csv(std::istream& in, const std::string& source_name = "<stream>");
Scene ingest_csv(const std::string& path);
/// Dispatches on format; only "csv" is supported.
Scene ingest(const std::string& path, const std::string& format = "csv");

std::string spec_to_json(const GeneratorSpec& spec);
GeneratorSpec spec_from_json(const std::string& text);

}  // namespace cereid
