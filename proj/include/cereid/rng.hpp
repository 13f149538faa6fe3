#pragma once

#include <cstdint>
#include <vector>

namespace cereid {

/// Seeded xoshiro256** generator with SplitMix64 seeding. Every consumer of
/// randomness receives an Rng explicitly; there is no global generator.
///
/// `split()` derives an independent child stream and advances the parent, and
/// `stream(seed, id)` builds a generator addressed by (seed, id) without any
/// parent state, which is what lets training resume mid-schedule bit-exactly.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0);

  static Rng stream(std::uint64_t seed, std::uint64_t id);

  std::uint64_t next_u64();
  Rng split();

  /// Uniform in [0, 1) with 53 bits of mantissa.
  double uniform();
  double uniform(double lo, double hi);
  /// Uniform integer in [0, n); n must be positive.
  std::uint64_t uniform_index(std::uint64_t n);
  /// Uniform integer in [lo, hi] inclusive.
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi);
  double normal();
  bool bernoulli(double p);
  /// Draws an index with probability proportional to `weights`.
  std::size_t categorical(const std::vector<double>& weights);

  template <typename T>
  void shuffle(std::vector<T>& items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      const std::size_t j = static_cast<std::size_t>(uniform_index(i));
      std::swap(items[i - 1], items[j]);
    }
  }

 private:
  std::uint64_t s_[4];
};

}  // namespace cereid
