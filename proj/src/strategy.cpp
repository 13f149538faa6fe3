#include "cereid/strategy.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "cereid/error.hpp"
#include "cereid/layers.hpp"

namespace cereid {
namespace {

std::int64_t floor_div(std::int64_t a, std::int64_t b) {
  std::int64_t q = a / b;
  if ((a % b != 0) && ((a < 0) != (b < 0))) --q;
  return q;
}

}  // namespace

FrequencyModel FrequencyModel::fit(const Scene& scene, const FrequencyOptions& options) {
  if (options.bin_width < 1) throw ConfigError("inference.frequency.bin_width must be at least 1");
  if (options.sigma_bins < 0.0) throw ConfigError("inference.frequency.sigma_bins must be non-negative");
  if (options.floor < 0.0) throw ConfigError("inference.frequency.floor must be non-negative");

  struct Hit {
    std::size_t i, j;
    std::int64_t bin;
  };
  std::vector<Hit> hits;
  for (const auto& [id, idx] : scene.by_identity()) {
    const Split s = scene.split_of(id);
    if (!scene.split.empty() && s != Split::Train) continue;
    for (std::size_t a : idx) {
      for (std::size_t b : idx) {
        const auto& oa = scene.observations[a];
        const auto& ob = scene.observations[b];
        if (oa.camera == ob.camera) continue;
        hits.push_back({oa.camera, ob.camera, floor_div(ob.timestamp - oa.timestamp, options.bin_width)});
      }
    }
  }
  if (hits.empty()) throw DatasetError("frequency model: training split has no same-identity cross-camera pairs");

  FrequencyModel m;
  m.options_ = options;
  m.num_cameras_ = scene.num_cameras;
  const auto pad = static_cast<std::int64_t>(std::ceil(3.0 * options.sigma_bins));
  std::int64_t lo = hits.front().bin, hi = hits.front().bin;
  for (const auto& h : hits) {
    lo = std::min(lo, h.bin);
    hi = std::max(hi, h.bin);
  }
  m.first_bin_ = lo - pad;
  m.num_bins_ = static_cast<std::size_t>(hi - lo + 1 + 2 * pad);
  const std::size_t C = m.num_cameras_, nb = m.num_bins_;
  m.counts_.assign(C * C * nb, 0.0);
  for (const auto& h : hits) m.counts_[m.cell(h.i, h.j, static_cast<std::size_t>(h.bin - m.first_bin_))] += 1.0;

  std::vector<double> kernel(static_cast<std::size_t>(2 * pad + 1), 0.0);
  if (pad == 0) {
    kernel[0] = 1.0;
  } else {
    for (std::int64_t o = -pad; o <= pad; ++o) {
      kernel[static_cast<std::size_t>(o + pad)] =
          std::exp(-static_cast<double>(o * o) / (2.0 * options.sigma_bins * options.sigma_bins));
    }
    const double ksum = std::accumulate(kernel.begin(), kernel.end(), 0.0);
    for (double& k : kernel) k /= ksum;
  }

  m.prob_.assign(C * C * nb, 0.0);
  m.outside_.assign(C, 0.0);
  m.max_prob_.assign(C, 0.0);
  for (std::size_t i = 0; i < C; ++i) {
    double z = 0.0;
    for (std::size_t j = 0; j < C; ++j) {
      for (std::size_t b = 0; b < nb; ++b) {
        double acc = 0.0;
        for (std::int64_t o = -pad; o <= pad; ++o) {
          const std::int64_t src = static_cast<std::int64_t>(b) - o;
          if (src < 0 || src >= static_cast<std::int64_t>(nb)) continue;
          acc += kernel[static_cast<std::size_t>(o + pad)] * m.counts_[m.cell(i, j, static_cast<std::size_t>(src))];
        }
        m.prob_[m.cell(i, j, b)] = acc + options.floor;
        z += acc + options.floor;
      }
    }
    if (z <= 0.0) continue;  // camera i never a pair source and no floor
    for (std::size_t j = 0; j < C; ++j) {
      for (std::size_t b = 0; b < nb; ++b) {
        double& p = m.prob_[m.cell(i, j, b)];
        p /= z;
        m.max_prob_[i] = std::max(m.max_prob_[i], p);
      }
    }
    m.outside_[i] = options.floor / z;
  }
  return m;
}

FrequencyModel fit_frequency(const Scene& scene, const FrequencyOptions& options) {
  return FrequencyModel::fit(scene, options);
}

std::int64_t FrequencyModel::bin_index(std::int64_t delta_t) const { return floor_div(delta_t, options_.bin_width); }

double FrequencyModel::count(std::size_t i, std::size_t j, std::int64_t delta_t) const {
  const std::int64_t b = bin_index(delta_t) - first_bin_;
  if (b < 0 || b >= static_cast<std::int64_t>(num_bins_)) return 0.0;
  return counts_[cell(i, j, static_cast<std::size_t>(b))];
}

double FrequencyModel::probability(std::size_t i, std::size_t j, std::int64_t delta_t) const {
  if (i >= num_cameras_ || j >= num_cameras_) throw InputError("frequency model: camera index out of range");
  const std::int64_t b = bin_index(delta_t) - first_bin_;
  if (b < 0 || b >= static_cast<std::int64_t>(num_bins_)) return outside_[i];
  return prob_[cell(i, j, static_cast<std::size_t>(b))];
}

double FrequencyModel::score(std::size_t i, std::size_t j, std::int64_t delta_t) const {
  const double p = probability(i, j, delta_t);
  return max_prob_[i] > 0.0 ? std::min(1.0, p / max_prob_[i]) : 0.0;
}

double FrequencyModel::total_mass(std::size_t i) const {
  double total = 0.0;
  for (std::size_t j = 0; j < num_cameras_; ++j) {
    for (std::size_t b = 0; b < num_bins_; ++b) total += prob_[cell(i, j, b)];
  }
  return total;
}

const TransitionCache::Entry& TransitionCache::lookup(std::size_t camera, std::int64_t delta_t) {
  const std::uint64_t key = (static_cast<std::uint64_t>(camera) << 48) ^
                            (static_cast<std::uint64_t>(delta_t) & 0x0000ffffffffffffULL);
  auto it = entries_.find(key);
  if (it == entries_.end()) {
    Entry e;
    e.logits = dacm_logits(*model_, camera, 0.0, static_cast<double>(delta_t));
    e.probs = softmax(std::span<const double>(e.logits));
    it = entries_.emplace(key, std::move(e)).first;
  }
  return it->second;
}

const std::vector<double>& TransitionCache::logits(std::size_t camera, std::int64_t delta_t) {
  return lookup(camera, delta_t).logits;
}

const std::vector<double>& TransitionCache::distribution(std::size_t camera, std::int64_t delta_t) {
  return lookup(camera, delta_t).probs;
}

std::vector<double> st_scores_dacm(TransitionCache& cache, std::size_t query_camera, std::int64_t query_time,
                                   std::size_t device_camera, std::span<const std::int64_t> gallery_times) {
  std::vector<double> o;
  o.reserve(gallery_times.size());
  for (std::int64_t t : gallery_times) o.push_back(cache.distribution(query_camera, t - query_time).at(device_camera));
  return o;
}

std::vector<double> st_scores_dacm(const DacmModel& model, std::size_t query_camera, std::int64_t query_time,
                                   std::size_t device_camera, std::span<const std::int64_t> gallery_times) {
  TransitionCache cache(model);
  return st_scores_dacm(cache, query_camera, query_time, device_camera, gallery_times);
}

std::vector<double> st_scores_frequency(const FrequencyModel& model, std::size_t query_camera, std::int64_t query_time,
                                        std::size_t device_camera, std::span<const std::int64_t> gallery_times) {
  std::vector<double> o;
  o.reserve(gallery_times.size());
  for (std::int64_t t : gallery_times) o.push_back(model.score(query_camera, device_camera, t - query_time));
  return o;
}

std::vector<double> st_scores_fused(std::span<const double> dacm, std::span<const double> frequency, double mu) {
  if (dacm.size() != frequency.size()) throw ShapeError("st_scores_fused: score vectors differ in length");
  if (!(mu >= 0.0 && mu <= 1.0)) throw ConfigError("inference.mu must lie in [0,1]");
  std::vector<double> o(dacm.size());
  for (std::size_t k = 0; k < o.size(); ++k) o[k] = (1.0 - mu) * dacm[k] + mu * frequency[k];
  return o;
}

std::vector<double> joint_similarity(std::span<const double> o, std::span<const double> v, double alpha, double beta,
                                     Orientation orientation) {
  if (o.size() != v.size()) throw ShapeError("joint_similarity: o and v differ in length");
  if (!(alpha > 0.0) || !(beta > 0.0)) throw ConfigError("joint_similarity: alpha and beta must be positive");
  std::vector<double> scaled(o.size());
  for (std::size_t k = 0; k < o.size(); ++k) scaled[k] = -o[k] / beta;
  const auto phi = softmax(std::span<const double>(scaled));
  std::vector<double> s(o.size());
  for (std::size_t k = 0; k < o.size(); ++k) {
    const double g = orientation == Orientation::Paper ? v[k] - 1.0 : -(v[k] - 1.0);
    s[k] = -(1.0 / (1.0 + alpha * std::exp(phi[k]))) * (1.0 / (1.0 + std::exp(g)));
  }
  return s;
}

PatternBank build_pattern_bank(TransitionCache& cache, std::size_t query_camera, std::int64_t query_time,
                               std::int64_t target_time, std::span<const std::int64_t> gallery_times) {
  const std::size_t C = cache.model().num_cameras();
  PatternBank bank;
  bank.target = cache.distribution(query_camera, target_time - query_time);
  if (gallery_times.empty()) return bank;
  bank.rows = Tensor({gallery_times.size(), C});
  for (std::size_t k = 0; k < gallery_times.size(); ++k) {
    const auto& d = cache.distribution(query_camera, gallery_times[k] - query_time);
    std::copy(d.begin(), d.end(), bank.rows.row(k).begin());
  }
  return bank;
}

double cosine(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ShapeError("cosine: vectors differ in length");
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) return 0.0;
  return dot / std::sqrt(na * nb);
}

std::vector<double> tcreid_scores(std::span<const double> s, const PatternBank& bank, Orientation orientation,
                                  std::vector<std::string>* warnings) {
  if (s.empty()) return {};
  if (bank.rows.rank() != 2 || bank.rows.dim(0) != s.size()) {
    throw ShapeError("tcreid_scores: pattern bank needs one row per score");
  }
  if (bank.rows.dim(1) != bank.target.size()) throw ShapeError("tcreid_scores: target pattern length mismatch");
  std::vector<double> out(s.size());
  std::size_t zero_rows = 0;
  for (std::size_t k = 0; k < s.size(); ++k) {
    const auto row = bank.rows.row(k);
    double norm = 0.0;
    for (double x : row) norm += x * x;
    if (norm == 0.0) ++zero_rows;
    const double c = cosine(row, bank.target);
    const double h = orientation == Orientation::Paper ? c - 1.0 : -(c - 1.0);
    out[k] = s[k] / (1.0 + std::exp(h));
  }
  if (zero_rows > 0 && warnings) {
    warnings->push_back("tcreid_scores: " + std::to_string(zero_rows) + " zero-norm pattern rows treated as cos = 0");
  }
  return out;
}

std::vector<std::size_t> integerize_shares(std::span<const double> shares, std::size_t total) {
  const std::size_t n = shares.size();
  if (n == 0) return {};
  if (total < n) throw ConfigError("bandwidth total " + std::to_string(total) + " is below one per device (" +
                                   std::to_string(n) + " devices)");
  std::vector<std::size_t> b(n);
  std::vector<double> rem(n);
  std::size_t assigned = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double f = std::floor(std::max(0.0, shares[i]));
    b[i] = std::max<std::size_t>(1, static_cast<std::size_t>(f));
    rem[i] = shares[i] - static_cast<double>(b[i]);
    assigned += b[i];
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  // Ties go to the lower device index.
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t c) { return rem[a] > rem[c]; });
  for (std::size_t k = 0; assigned < total; k = (k + 1) % n) {
    ++b[order[k]];
    ++assigned;
  }
  // Floors can overshoot; take back from the most over-served devices first.
  for (std::size_t k = n; assigned > total;) {
    k = (k == 0 ? n : k) - 1;
    const std::size_t i = order[k];
    if (b[i] > 1) {
      --b[i];
      --assigned;
    }
  }
  return b;
}

BandwidthAllocation uniform_bandwidth(std::size_t num_devices, std::size_t total) {
  BandwidthAllocation a;
  a.total = total;
  a.shares.assign(num_devices, static_cast<double>(total) / static_cast<double>(num_devices));
  a.bandwidth = integerize_shares(a.shares, total);
  return a;
}

BandwidthAllocation allocate_bandwidth(std::span<const double> logits, std::span<const std::size_t> gallery_sizes,
                                       std::size_t total, double gamma0, double gamma1) {
  const std::size_t n = logits.size();
  if (gallery_sizes.size() != n) throw ShapeError("allocate_bandwidth: one gallery size per device required");
  if (total < n) throw ConfigError("inference.bandwidth must be at least the number of devices");
  if (!(gamma0 > 0.0) || !(gamma1 > 0.0)) throw ConfigError("inference.gamma0 and gamma1 must be positive");
  std::vector<double> y(n), sizes(n);
  for (std::size_t i = 0; i < n; ++i) {
    y[i] = logits[i] / gamma0;
    sizes[i] = static_cast<double>(gallery_sizes[i]);
  }
  const auto ly = log_softmax(std::span<const double>(y));
  const auto ls = log_softmax(std::span<const double>(sizes));
  std::vector<double> log_z(n);
  for (std::size_t i = 0; i < n; ++i) log_z[i] = ly[i] + ls[i] - std::log(gamma1);
  const auto norm = softmax(std::span<const double>(log_z));
  BandwidthAllocation a;
  a.total = total;
  a.shares.resize(n);
  for (std::size_t i = 0; i < n; ++i) a.shares[i] = norm[i] * static_cast<double>(total);
  a.bandwidth = integerize_shares(a.shares, total);
  return a;
}

}  // namespace cereid
