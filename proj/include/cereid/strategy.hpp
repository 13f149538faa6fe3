#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "cereid/dacm.hpp"
#include "cereid/scene.hpp"
#include "cereid/tensor.hpp"

namespace cereid {

/// `Consistent` flips the sign inside the visual and pattern factors so that
/// larger similarity ranks earlier under ascending sort; `Paper` keeps the
/// printed sign.
enum class Orientation { Consistent, Paper };

struct FrequencyOptions {
  std::int64_t bin_width = 100;
  double sigma_bins = 2.0;
  double floor = 1e-6;
};

/// Histogram estimate of p(camera j, delta-t bin | camera i) from same-identity
/// cross-camera observation pairs in the training split.
class FrequencyModel {
 public:
  static FrequencyModel fit(const Scene& scene, const FrequencyOptions& options);

  std::size_t num_cameras() const { return num_cameras_; }
  std::int64_t bin_index(std::int64_t delta_t) const;
  std::int64_t first_bin() const { return first_bin_; }
  std::size_t num_bins() const { return num_bins_; }
  const FrequencyOptions& options() const { return options_; }

  /// Unsmoothed pair count in the bin containing delta_t.
  double count(std::size_t i, std::size_t j, std::int64_t delta_t) const;
  /// Normalized p(j, bin(delta_t) | i). Outside the fitted bin range this is
  /// the floor mass of a single cell.
  double probability(std::size_t i, std::size_t j, std::int64_t delta_t) const;
  /// probability / (largest cell probability for source camera i), in [0,1].
  double score(std::size_t i, std::size_t j, std::int64_t delta_t) const;
  /// Sum of probability over every target camera and fitted bin.
  double total_mass(std::size_t i) const;

 private:
  std::size_t cell(std::size_t i, std::size_t j, std::size_t bin) const { return (i * num_cameras_ + j) * num_bins_ + bin; }

  FrequencyOptions options_;
  std::size_t num_cameras_ = 0;
  std::int64_t first_bin_ = 0;
  std::size_t num_bins_ = 0;
  std::vector<double> counts_;
  std::vector<double> prob_;
  std::vector<double> outside_;  // per source camera
  std::vector<double> max_prob_;  // per source camera
};

FrequencyModel fit_frequency(const Scene& scene, const FrequencyOptions& options = {});

/// Memoized eval-mode DaCM outputs keyed by (source camera, integer delta-t).
/// Not thread-safe; use one per worker.
class TransitionCache {
 public:
  explicit TransitionCache(const DacmModel& model) : model_(&model) {}

  const std::vector<double>& logits(std::size_t camera, std::int64_t delta_t);
  const std::vector<double>& distribution(std::size_t camera, std::int64_t delta_t);
  const DacmModel& model() const { return *model_; }
  std::size_t size() const { return entries_.size(); }

 private:
  struct Entry {
    std::vector<double> logits;
    std::vector<double> probs;
  };
  const Entry& lookup(std::size_t camera, std::int64_t delta_t);

  const DacmModel* model_;
  std::unordered_map<std::uint64_t, Entry> entries_;
};

/// o_k = DaCM probability that the query reappears at the gallery's own
/// camera c_dev at gallery time t_k.
std::vector<double> st_scores_dacm(TransitionCache& cache, std::size_t query_camera, std::int64_t query_time,
                                   std::size_t device_camera, std::span<const std::int64_t> gallery_times);
std::vector<double> st_scores_dacm(const DacmModel& model, std::size_t query_camera, std::int64_t query_time,
                                   std::size_t device_camera, std::span<const std::int64_t> gallery_times);

/// o_k = frequency-model score of (c_q -> c_dev, t_k - t_q).
std::vector<double> st_scores_frequency(const FrequencyModel& model, std::size_t query_camera, std::int64_t query_time,
                                        std::size_t device_camera, std::span<const std::int64_t> gallery_times);

/// (1 - mu) * dacm + mu * frequency.
std::vector<double> st_scores_fused(std::span<const double> dacm, std::span<const double> frequency, double mu);

/// Joint spatial-temporal / visual score; smaller (more negative) ranks
/// earlier. Softmax of -o/beta runs over the whole gallery.
std::vector<double> joint_similarity(std::span<const double> o, std::span<const double> v, double alpha, double beta,
                                     Orientation orientation = Orientation::Consistent);

struct PatternBank {
  Tensor rows;                 // [N,C], row k = DaCM distribution at gallery time t_k
  std::vector<double> target;  // [C], DaCM distribution at the target time
};

PatternBank build_pattern_bank(TransitionCache& cache, std::size_t query_camera, std::int64_t query_time,
                               std::int64_t target_time, std::span<const std::int64_t> gallery_times);

double cosine(std::span<const double> a, std::span<const double> b);

/// Time-constrained rescoring of joint scores by pattern alignment. Rows
/// with zero norm count as cos = 0 and add a message to `warnings`.
std::vector<double> tcreid_scores(std::span<const double> s, const PatternBank& bank,
                                  Orientation orientation = Orientation::Consistent,
                                  std::vector<std::string>* warnings = nullptr);

struct BandwidthAllocation {
  std::vector<std::size_t> bandwidth;  // per device, >= 1, sums to total
  std::vector<double> shares;          // real-valued shares before rounding
  std::size_t total = 0;
};

/// Largest-remainder rounding of real shares with a floor of one per device.
std::vector<std::size_t> integerize_shares(std::span<const double> shares, std::size_t total);

/// Even split of B over C devices.
BandwidthAllocation uniform_bandwidth(std::size_t num_devices, std::size_t total);

/// Cloud-level allocation from DaCM logits y and gallery sizes. Evaluated in
/// log space so extreme temperatures and large galleries cannot overflow.
BandwidthAllocation allocate_bandwidth(std::span<const double> logits, std::span<const std::size_t> gallery_sizes,
                                       std::size_t total, double gamma0, double gamma1);

}  // namespace cereid
