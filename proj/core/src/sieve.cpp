#include "spfde/sieve.hpp"

#include <algorithm>
#include <cmath>

#include "spfde/errors.hpp"

namespace spfde {

SieveState SieveState::init(std::size_t dataset_size, double p,
                            std::uint64_t seed, double update_ratio,
                            SieveShuffleMode mode) {
  if (p < 0.0 || p >= 1.0)
    throw ConfigError("sieve: removal fraction p must be in [0,1), got " +
                      std::to_string(p));
  if (update_ratio < 0.0 || update_ratio > 1.0)
    throw ConfigError("sieve: update ratio must be in [0,1]");
  SieveState s;
  s.p_ = p;
  s.update_ratio_ = update_ratio;
  s.mode_ = mode;
  s.in_partial_.assign(dataset_size, 1);
  s.forget_.assign(dataset_size, 0);
  s.prev_.assign(dataset_size, -1);
  s.visited_.assign(dataset_size, 0);

  const std::size_t removed = static_cast<std::size_t>(
      std::llround(p * static_cast<double>(dataset_size)));
  Rng rng = Rng::derive(seed, /*stream=*/0x51E5);
  // Uniform subset, already in random order.
  for (std::uint32_t idx :
       rng.sample_without_replacement(dataset_size, removed)) {
    s.queue_.push_back(idx);
    s.in_partial_[idx] = 0;
  }
  s.partial_.reserve(dataset_size - removed);
  for (std::uint32_t i = 0; i < dataset_size; ++i)
    if (s.in_partial_[i]) s.partial_.push_back(i);
  s.drain_remaining_ = s.queue_.size();
  return s;
}

std::uint32_t SieveState::forget_count(std::uint32_t sample) const {
  if (!contains(sample))
    throw InternalError("sieve: forget_count of non-partial sample " +
                        std::to_string(sample));
  return forget_[sample];
}

void SieveState::record_epoch(std::span<const std::uint32_t> samples,
                              std::span<const std::uint8_t> correct) {
  if (samples.size() != correct.size())
    throw InternalError("sieve: samples/correctness length mismatch");
  if (samples.size() != partial_.size()) {
    throw InternalError("sieve: correctness covers " +
                        std::to_string(samples.size()) + " samples, partial set has " +
                        std::to_string(partial_.size()));
  }
  std::fill(visited_.begin(), visited_.end(), 0);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const std::uint32_t s = samples[i];
    if (s >= in_partial_.size() || !in_partial_[s])
      throw InternalError("sieve: unknown sample index " + std::to_string(s));
    if (visited_[s])
      throw InternalError("sieve: duplicate sample index " + std::to_string(s));
    visited_[s] = 1;
    const bool ok = correct[i] != 0;
    if (prev_[s] >= 0 && prev_[s] == 1 && !ok) forget_[s] += 1;
    prev_[s] = ok ? 1 : 0;
  }
}

SieveReport SieveState::update(Rng& rng, int epoch) {
  SieveReport rep;
  rep.epoch = epoch;
  const std::size_t u = static_cast<std::size_t>(
      std::llround(update_ratio_ * static_cast<double>(queue_.size())));
  if (u > partial_.size())
    throw ConfigError("sieve: update count " + std::to_string(u) +
                      " exceeds partial set size " +
                      std::to_string(partial_.size()));

  // Interval stats over the current partial set.
  if (!partial_.empty()) {
    std::vector<std::uint32_t> counts;
    counts.reserve(partial_.size());
    for (std::uint32_t s : partial_) counts.push_back(forget_[s]);
    std::sort(counts.begin(), counts.end());
    rep.forget_min = counts.front();
    rep.forget_median = counts[counts.size() / 2];
    rep.forget_max = counts.back();
  }

  if (u > 0) {
    // Easiest u samples: ascending (forget count, sample index).
    std::vector<std::uint32_t> order = partial_;
    std::sort(order.begin(), order.end(),
              [&](std::uint32_t a, std::uint32_t b) {
                if (forget_[a] != forget_[b]) return forget_[a] < forget_[b];
                return a < b;
              });
    order.resize(u);
    for (std::uint32_t s : order) {
      in_partial_[s] = 0;
      queue_.push_back(s);
    }
    std::vector<std::uint32_t> incoming;
    incoming.reserve(u);
    for (std::size_t i = 0; i < u; ++i) {
      const std::uint32_t s = queue_.front();
      queue_.pop_front();
      in_partial_[s] = 1;
      incoming.push_back(s);
    }
    partial_.clear();
    for (std::uint32_t i = 0; i < in_partial_.size(); ++i)
      if (in_partial_[i]) partial_.push_back(i);
    drain_remaining_ -= std::min(drain_remaining_, u);
  }
  rep.swapped = u;
  rep.drain_remaining = drain_remaining_;

  // Fresh interval: newly added samples are treated like everyone else.
  std::fill(forget_.begin(), forget_.end(), 0);
  std::fill(prev_.begin(), prev_.end(), -1);

  if (drain_remaining_ == 0 && !queue_.empty()) {
    const bool do_shuffle = mode_ == SieveShuffleMode::after_each_update ||
                            !drained_shuffle_done_;
    if (do_shuffle) {
      std::vector<std::uint32_t> buf(queue_.begin(), queue_.end());
      rng.shuffle(buf);
      queue_.assign(buf.begin(), buf.end());
      drained_shuffle_done_ = true;
    }
  }
  return rep;
}

}  // namespace spfde
