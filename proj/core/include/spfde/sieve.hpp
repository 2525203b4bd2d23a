#pragma once

#include <cstdint>
#include <deque>
#include <span>
#include <vector>

#include "spfde/rng.hpp"

namespace spfde {

enum class SieveShuffleMode {
  after_each_update,  // shuffle the queue after every post-drain update
  once_after_drain,   // shuffle once, when the initial queue drains
};

struct SieveReport {
  int epoch = 0;
  std::size_t swapped = 0;
  std::uint32_t forget_min = 0;
  std::uint32_t forget_median = 0;
  std::uint32_t forget_max = 0;
  std::size_t drain_remaining = 0;
};

// Circular data sieving: a fixed-size partial training set plus a FIFO
// queue of removed samples. Every update the easiest partial samples (by
// forgetting events this interval) move to the queue tail and the same
// number of samples returns from the head. The queue is not shuffled until
// every initially removed sample has come back at least once.
class SieveState {
 public:
  // Randomly remove round(p * dataset_size) samples into the queue.
  static SieveState init(std::size_t dataset_size, double p,
                         std::uint64_t seed,
                         double update_ratio = 0.30,
                         SieveShuffleMode mode =
                             SieveShuffleMode::after_each_update);

  std::size_t dataset_size() const { return in_partial_.size(); }
  const std::vector<std::uint32_t>& partial_set() const { return partial_; }
  const std::deque<std::uint32_t>& removed_queue() const { return queue_; }
  std::size_t initial_drain_remaining() const { return drain_remaining_; }
  double removal_fraction() const { return p_; }
  double update_ratio() const { return update_ratio_; }
  bool enabled() const { return !queue_.empty(); }
  bool contains(std::uint32_t sample) const {
    return sample < in_partial_.size() && in_partial_[sample] != 0;
  }
  std::uint32_t forget_count(std::uint32_t sample) const;

  // Record one epoch of per-sample correctness for exactly the partial set
  // (parallel arrays). A correct->incorrect transition since the previous
  // epoch counts one forgetting event; a sample's first epoch in the
  // interval only initializes its state.
  void record_epoch(std::span<const std::uint32_t> samples,
                    std::span<const std::uint8_t> correct);

  // Swap round(update_ratio * |queue|) easiest samples (ties: lower index)
  // against the queue head, then start a fresh interval.
  SieveReport update(Rng& rng, int epoch);

 private:
  std::vector<std::uint32_t> partial_;  // ascending
  std::deque<std::uint32_t> queue_;
  std::vector<std::uint8_t> in_partial_;
  std::vector<std::uint32_t> forget_;
  std::vector<std::int8_t> prev_;  // -1 unseen this interval, else 0/1
  std::vector<std::uint8_t> visited_;
  std::size_t drain_remaining_ = 0;
  bool drained_shuffle_done_ = false;
  double p_ = 0.0;
  double update_ratio_ = 0.30;
  SieveShuffleMode mode_ = SieveShuffleMode::after_each_update;
};

}  // namespace spfde
