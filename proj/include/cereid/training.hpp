#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "cereid/dacm.hpp"
#include "cereid/error.hpp"
#include "cereid/optim.hpp"
#include "cereid/scene.hpp"

namespace cereid {

struct PairEnd {
  std::int64_t identity = 0;
  std::size_t camera = 0;
  std::int64_t timestamp = 0;
};

/// Two observations of one identity on different cameras; the model learns
/// to predict target.camera from (query.camera, target.timestamp - query.timestamp).
struct TrainPair {
  PairEnd query;
  PairEnd target;
};

/// Which identities a pair sampler or enumerator may draw from. `Train` on an
/// unsplit scene falls back to every identity.
enum class SplitFilter { Train, Test, All };

/// Uniform-with-replacement sampler: identity uniform among those observed
/// by two or more cameras, then an unordered cross-camera observation pair
/// uniform within it, then a fair coin for which side is the query.
class PairSampler {
 public:
  PairSampler(const Scene& scene, SplitFilter filter);

  std::vector<TrainPair> sample(Rng& rng, std::size_t count) const;
  std::size_t num_identities() const { return groups_.size(); }

 private:
  struct Group {
    std::vector<PairEnd> obs;
    std::vector<std::pair<std::uint32_t, std::uint32_t>> pairs;
  };
  std::vector<Group> groups_;
};

std::vector<TrainPair> sample_pairs(const Scene& scene, Rng& rng, std::size_t count,
                                    SplitFilter filter = SplitFilter::Train);

/// Every ordered cross-camera same-identity pair among the filtered identities.
std::vector<TrainPair> enumerate_pairs(const Scene& scene, SplitFilter filter);

/// Forward + cross-entropy + backward + one Adam step. Returns the mean loss.
double training_step(DacmModel& model, std::span<const TrainPair> batch, const AdamOptions& adam);

/// Mean cross-entropy loss in eval mode, with no state changes.
double evaluate_loss(const DacmModel& model, std::span<const TrainPair> pairs);
/// Fraction of pairs whose eval-mode argmax equals the target camera.
double evaluate_accuracy(const DacmModel& model, std::span<const TrainPair> pairs);

struct TrainSchedule {
  std::size_t epochs = 90;
  /// 0 means one pair per training observation.
  std::size_t pairs_per_epoch = 0;
  std::size_t batch_size = 128;
  double lr = 0.01;
  std::size_t decay_every = 30;
  double decay_factor = 0.1;
  std::uint64_t seed = 0;
  /// Epoch index to start from; used when resuming a checkpoint.
  std::size_t start_epoch = 0;
  /// Cap on held-out pairs used for the per-epoch accuracy (seeded subsample).
  std::size_t heldout_pairs = 4096;

  double lr_at(std::size_t epoch) const;
  void validate() const;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double lr = 0.0;
  double loss = 0.0;
  std::optional<double> heldout_accuracy;
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
};

/// Raised when the loss turns non-finite. The model has already been restored
/// to its state at the start of the failing epoch.
class TrainingDiverged : public NumericError {
 public:
  TrainingDiverged(std::size_t epoch, const std::string& what) : NumericError(what), epoch_(epoch) {}
  std::size_t epoch() const { return epoch_; }

 private:
  std::size_t epoch_;
};

/// Runs epochs [start_epoch, epochs). Each epoch draws from its own RNG
/// stream addressed by (seed, epoch), so a resumed run matches a continuous one.
TrainHistory train(DacmModel& model, const Scene& scene, const TrainSchedule& schedule);

}  // namespace cereid
