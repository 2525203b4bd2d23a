#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace spfde {

// Deterministic random source. Wraps std::mt19937_64 (whose output sequence
// is fixed by the standard) but draws indices/reals/normals with our own
// routines, because the std::*_distribution results are implementation
// defined and we need bitwise-reproducible runs and checkpointable state.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  // Independent stream derived from (seed, stream) via splitmix64 mixing.
  static Rng derive(std::uint64_t seed, std::uint64_t stream);

  std::uint64_t next_u64() { return engine_(); }

  // Uniform integer in [0, n). Rejection sampling, no modulo bias.
  std::size_t uniform_index(std::size_t n);

  // Uniform double in [0, 1) with 53 random bits.
  double uniform_real();

  // Uniform double in [lo, hi).
  double uniform_real(double lo, double hi) {
    return lo + (hi - lo) * uniform_real();
  }

  // Standard normal via Box-Muller (two draws per call, no cached spare).
  double normal();

  // In-place Fisher-Yates.
  template <class T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = uniform_index(i);
      std::swap(v[i - 1], v[j]);
    }
  }

  // Choose k distinct elements of [0, n), uniformly, in selection order.
  std::vector<std::uint32_t> sample_without_replacement(std::size_t n,
                                                        std::size_t k);

  // Engine state as text (mt19937_64 stream format); round-trips exactly.
  std::string serialize() const;
  static Rng deserialize(const std::string& state);

  bool operator==(const Rng& other) const { return engine_ == other.engine_; }

 private:
  std::mt19937_64 engine_;
};

std::uint64_t splitmix64(std::uint64_t x);

// Stable seed for a (run seed, epoch) pair; used by batch shuffling and
// augmentation so reruns are bit-identical.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream);

}  // namespace spfde
