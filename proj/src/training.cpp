#include "cereid/training.hpp"

#include <algorithm>
#include <cmath>

namespace cereid {
namespace {

bool accepts(const Scene& scene, std::int64_t identity, SplitFilter filter) {
  if (filter == SplitFilter::All) return true;
  const Split s = scene.split_of(identity);
  if (filter == SplitFilter::Train) return s == Split::Train || scene.split.empty();
  return s == Split::Test;
}

std::vector<DacmInput> to_inputs(std::span<const TrainPair> batch) {
  std::vector<DacmInput> inputs;
  inputs.reserve(batch.size());
  for (const auto& p : batch) {
    inputs.push_back({p.query.camera, static_cast<double>(p.target.timestamp - p.query.timestamp)});
  }
  return inputs;
}

constexpr std::uint64_t kHeldoutStream = 0xfeedULL << 32;

}  // namespace

PairSampler::PairSampler(const Scene& scene, SplitFilter filter) {
  for (const auto& [id, idx] : scene.by_identity()) {
    if (!accepts(scene, id, filter)) continue;
    Group g;
    for (std::size_t i : idx) {
      const auto& o = scene.observations[i];
      g.obs.push_back({o.identity, o.camera, o.timestamp});
    }
    for (std::uint32_t a = 0; a < g.obs.size(); ++a) {
      for (std::uint32_t b = a + 1; b < g.obs.size(); ++b) {
        if (g.obs[a].camera != g.obs[b].camera) g.pairs.emplace_back(a, b);
      }
    }
    if (!g.pairs.empty()) groups_.push_back(std::move(g));
  }
}

std::vector<TrainPair> PairSampler::sample(Rng& rng, std::size_t count) const {
  if (groups_.empty()) {
    throw DatasetError("no identity is observed by two or more cameras; cannot sample training pairs");
  }
  std::vector<TrainPair> out;
  out.reserve(count);
  for (std::size_t n = 0; n < count; ++n) {
    const Group& g = groups_[rng.uniform_index(groups_.size())];
    const auto [a, b] = g.pairs[rng.uniform_index(g.pairs.size())];
    if (rng.bernoulli(0.5)) {
      out.push_back({g.obs[a], g.obs[b]});
    } else {
      out.push_back({g.obs[b], g.obs[a]});
    }
  }
  return out;
}

std::vector<TrainPair> sample_pairs(const Scene& scene, Rng& rng, std::size_t count, SplitFilter filter) {
  return PairSampler(scene, filter).sample(rng, count);
}

std::vector<TrainPair> enumerate_pairs(const Scene& scene, SplitFilter filter) {
  std::vector<TrainPair> out;
  for (const auto& [id, idx] : scene.by_identity()) {
    if (!accepts(scene, id, filter)) continue;
    for (std::size_t a : idx) {
      for (std::size_t b : idx) {
        const auto& oa = scene.observations[a];
        const auto& ob = scene.observations[b];
        if (oa.camera == ob.camera) continue;
        out.push_back({{oa.identity, oa.camera, oa.timestamp}, {ob.identity, ob.camera, ob.timestamp}});
      }
    }
  }
  return out;
}

double training_step(DacmModel& model, std::span<const TrainPair> batch, const AdamOptions& adam) {
  if (batch.empty()) throw InputError("training_step: empty batch");
  const auto inputs = to_inputs(batch);
  std::vector<std::size_t> targets;
  targets.reserve(batch.size());
  for (const auto& p : batch) targets.push_back(p.target.camera);

  auto params = model.params();
  zero_grads(params);
  DacmCache cache;
  const Tensor logits = dacm_forward(model, inputs, Mode::Train, &cache);
  const LossResult loss = cross_entropy_loss(logits, targets);
  if (!std::isfinite(loss.loss)) return loss.loss;
  dacm_backward(model, cache, loss.grad);
  adam_step(params, adam);
  return loss.loss;
}

double evaluate_loss(const DacmModel& model, std::span<const TrainPair> pairs) {
  if (pairs.empty()) return 0.0;
  const auto inputs = to_inputs(pairs);
  std::vector<std::size_t> targets;
  for (const auto& p : pairs) targets.push_back(p.target.camera);
  const Tensor logits = dacm_forward_eval(model, inputs);
  return cross_entropy_loss(logits, targets).loss;
}

double evaluate_accuracy(const DacmModel& model, std::span<const TrainPair> pairs) {
  if (pairs.empty()) return 0.0;
  const auto inputs = to_inputs(pairs);
  std::size_t correct = 0;
  constexpr std::size_t kChunk = 512;
  for (std::size_t start = 0; start < inputs.size(); start += kChunk) {
    const std::size_t n = std::min(kChunk, inputs.size() - start);
    const Tensor logits = dacm_forward_eval(model, std::span<const DacmInput>(inputs).subspan(start, n));
    for (std::size_t b = 0; b < n; ++b) {
      const auto row = logits.row(b);
      const auto best = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
      if (best == pairs[start + b].target.camera) ++correct;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(pairs.size());
}

double TrainSchedule::lr_at(std::size_t epoch) const {
  if (decay_every == 0) return lr;
  return lr * std::pow(decay_factor, static_cast<double>(epoch / decay_every));
}

void TrainSchedule::validate() const {
  if (batch_size == 0) throw ConfigError("train.batch must be positive");
  if (!(lr > 0.0)) throw ConfigError("train.lr must be positive");
  if (!(decay_factor > 0.0)) throw ConfigError("train.decay_factor must be positive");
}

TrainHistory train(DacmModel& model, const Scene& scene, const TrainSchedule& schedule) {
  schedule.validate();
  TrainHistory history;
  if (schedule.start_epoch >= schedule.epochs) return history;

  const PairSampler sampler(scene, SplitFilter::Train);
  std::size_t train_obs = 0;
  for (const auto& o : scene.observations) {
    const Split s = scene.split_of(o.identity);
    if (s == Split::Train || scene.split.empty()) ++train_obs;
  }
  const std::size_t per_epoch = schedule.pairs_per_epoch > 0 ? schedule.pairs_per_epoch : train_obs;

  std::vector<TrainPair> heldout;
  if (!scene.split.empty()) {
    heldout = enumerate_pairs(scene, SplitFilter::Test);
    if (heldout.size() > schedule.heldout_pairs) {
      Rng pick = Rng::stream(schedule.seed, kHeldoutStream);
      pick.shuffle(heldout);
      heldout.resize(schedule.heldout_pairs);
    }
  }

  for (std::size_t epoch = schedule.start_epoch; epoch < schedule.epochs; ++epoch) {
    const DacmModel snapshot = model;
    Rng rng = Rng::stream(schedule.seed, epoch);
    const auto pairs = sampler.sample(rng, per_epoch);
    AdamOptions adam;
    adam.lr = schedule.lr_at(epoch);
    double weighted = 0.0;
    std::size_t start = 0;
    while (start < pairs.size()) {
      std::size_t n = std::min(schedule.batch_size, pairs.size() - start);
      // Never leave a single-sample tail: per-node batch norm needs two rows.
      if (pairs.size() - start - n == 1) ++n;
      const double loss = training_step(model, std::span<const TrainPair>(pairs).subspan(start, n), adam);
      if (!std::isfinite(loss)) {
        model = snapshot;
        throw TrainingDiverged(epoch, "training diverged in epoch " + std::to_string(epoch) +
                                          "; model restored to the start of that epoch");
      }
      weighted += loss * static_cast<double>(n);
      start += n;
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.lr = adam.lr;
    rec.loss = pairs.empty() ? 0.0 : weighted / static_cast<double>(pairs.size());
    if (!heldout.empty()) rec.heldout_accuracy = evaluate_accuracy(model, heldout);
    history.epochs.push_back(rec);
  }
  return history;
}

}  // namespace cereid
