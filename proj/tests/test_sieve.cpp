#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <algorithm>
#include <set>
#include <vector>

#include "doctest.h"
#include "oracles.hpp"
#include "spfde/errors.hpp"
#include "spfde/sieve.hpp"

using namespace spfde;

namespace {

void record_all(SieveState& s, const std::vector<std::uint8_t>& correct_by_id) {
  std::vector<std::uint32_t> samples(s.partial_set());
  std::vector<std::uint8_t> correct;
  for (std::uint32_t id : samples) correct.push_back(correct_by_id[id]);
  s.record_epoch(samples, correct);
}

}  // namespace

TEST_CASE("init splits 1000 samples at p=0.2 into 800/200") {
  SieveState s = SieveState::init(1000, 0.2, 1);
  CHECK(s.partial_set().size() == 800);
  CHECK(s.removed_queue().size() == 200);
  CHECK(s.initial_drain_remaining() == 200);
}

TEST_CASE("p=0 disables sieving") {
  SieveState s = SieveState::init(100, 0.0, 1);
  CHECK(s.partial_set().size() == 100);
  CHECK(s.removed_queue().empty());
  CHECK_FALSE(s.enabled());
}

TEST_CASE("p outside [0,1) is a configuration error") {
  CHECK_THROWS_AS(SieveState::init(100, 1.0, 1), ConfigError);
  CHECK_THROWS_AS(SieveState::init(100, -0.2, 1), ConfigError);
}

TEST_CASE("partial set and queue partition the dataset") {
  SieveState s = SieveState::init(500, 0.3, 2);
  std::set<std::uint32_t> seen(s.partial_set().begin(), s.partial_set().end());
  for (std::uint32_t q : s.removed_queue()) {
    CHECK(seen.count(q) == 0);
    seen.insert(q);
  }
  CHECK(seen.size() == 500);
}

TEST_CASE("removed membership is uniform across seeds (chi-square)") {
  const std::size_t n = 20, removed = 5, trials = 10000;
  std::vector<std::size_t> counts(n, 0);
  for (std::size_t seed = 0; seed < trials; ++seed) {
    SieveState s = SieveState::init(n, 0.25, seed);
    for (std::uint32_t q : s.removed_queue()) ++counts[q];
  }
  const double expected =
      static_cast<double>(trials * removed) / static_cast<double>(n);
  const double stat = oracles::chi_square_uniform(counts, expected);
  CHECK(stat < oracles::chi2_crit_99(static_cast<int>(n) - 1));
}

TEST_CASE("a 1-0-1-0-1 history yields two forgetting events") {
  SieveState s = SieveState::init(4, 0.0, 1);
  for (int epoch_correct : {1, 0, 1, 0, 1}) {
    std::vector<std::uint8_t> c(4, 1);
    c[2] = static_cast<std::uint8_t>(epoch_correct);
    record_all(s, {c[0], c[1], c[2], c[3]});
  }
  CHECK(s.forget_count(2) == 2);
  CHECK(s.forget_count(0) == 0);
}

TEST_CASE("all-correct history yields zero events") {
  SieveState s = SieveState::init(8, 0.0, 1);
  for (int e = 0; e < 5; ++e) record_all(s, std::vector<std::uint8_t>(8, 1));
  for (std::uint32_t i = 0; i < 8; ++i) CHECK(s.forget_count(i) == 0);
}

TEST_CASE("random histories match the transition-counting oracle") {
  Rng rng(33);
  const std::size_t n = 16;
  SieveState s = SieveState::init(n, 0.0, 1);
  std::vector<std::vector<int>> history(n);
  for (int epoch = 0; epoch < 12; ++epoch) {
    std::vector<std::uint8_t> correct(n);
    for (std::size_t i = 0; i < n; ++i) {
      correct[i] = static_cast<std::uint8_t>(rng.uniform_index(2));
      history[i].push_back(correct[i]);
    }
    record_all(s, correct);
  }
  for (std::uint32_t i = 0; i < n; ++i)
    CHECK(static_cast<int>(s.forget_count(i)) ==
          oracles::count_forgetting(history[i]));
}

TEST_CASE("correctness must cover exactly the partial set") {
  SieveState s = SieveState::init(10, 0.2, 1);
  std::vector<std::uint32_t> samples(s.partial_set());
  std::vector<std::uint8_t> correct(samples.size(), 1);
  // Unknown index: swap one partial sample for a removed one.
  samples[0] = s.removed_queue().front();
  CHECK_THROWS_AS(s.record_epoch(samples, correct), InternalError);
  // Wrong cardinality.
  std::vector<std::uint32_t> short_samples(samples.begin() + 1, samples.end());
  std::vector<std::uint8_t> short_correct(short_samples.size(), 1);
  CHECK_THROWS_AS(s.record_epoch(short_samples, short_correct), InternalError);
}

TEST_CASE("update swaps round(0.3 * queue) samples") {
  SieveState s = SieveState::init(1000, 0.2, 3);
  REQUIRE(s.removed_queue().size() == 200);
  record_all(s, std::vector<std::uint8_t>(1000, 1));
  Rng rng(5);
  SieveReport rep = s.update(rng, 5);
  CHECK(rep.swapped == 60);
  CHECK(s.partial_set().size() == 800);
  CHECK(s.removed_queue().size() == 200);
}

TEST_CASE("queue honours FIFO order") {
  // Dataset of 5; force a known queue by probing seeds is fragile, so build
  // the scenario through updates instead: queue [a,b,c], retrieve 2.
  SieveState s = SieveState::init(12, 0.25, 7, /*update_ratio=*/0.67);
  const auto q0 = s.removed_queue();
  REQUIRE(q0.size() == 3);
  record_all(s, std::vector<std::uint8_t>(12, 1));
  Rng rng(9);
  SieveReport rep = s.update(rng, 5);
  CHECK(rep.swapped == 2);
  // The two retrieved samples are the old queue head.
  CHECK(s.contains(q0[0]));
  CHECK(s.contains(q0[1]));
  CHECK_FALSE(s.contains(q0[2]));
  // Old tail survivor sits at the new head.
  CHECK(s.removed_queue().front() == q0[2]);
}

TEST_CASE("easiest samples leave first, ties to the lower index") {
  // Queue of 4, swap 2: the drain stays open, so no shuffle perturbs the
  // tail we are about to inspect.
  SieveState s = SieveState::init(10, 0.4, 11, /*update_ratio=*/0.5);
  // All correct every epoch -> all forget counts zero -> lowest indices go.
  record_all(s, std::vector<std::uint8_t>(10, 1));
  const auto partial_before = s.partial_set();
  Rng rng(1);
  SieveReport rep = s.update(rng, 5);
  REQUIRE(rep.swapped == 2);
  CHECK(s.initial_drain_remaining() == 2);
  // The two lowest-index partial samples moved to the tail, in order.
  const auto& q = s.removed_queue();
  CHECK(q[q.size() - 2] == partial_before[0]);
  CHECK(q[q.size() - 1] == partial_before[1]);
}

TEST_CASE("forgetting counts reset each interval") {
  SieveState s = SieveState::init(6, 0.0, 1);
  record_all(s, {1, 1, 1, 1, 1, 1});
  record_all(s, {0, 1, 1, 1, 1, 1});  // one event for sample 0
  CHECK(s.forget_count(0) == 1);
  Rng rng(2);
  s.update(rng, 5);
  CHECK(s.forget_count(0) == 0);
  // First epoch after the reset initializes without counting.
  record_all(s, {0, 1, 1, 1, 1, 1});
  CHECK(s.forget_count(0) == 0);
}

TEST_CASE("no shuffle happens before the initial queue drains") {
  SieveState s = SieveState::init(100, 0.2, 13, /*update_ratio=*/0.25);
  const std::vector<std::uint32_t> q0(s.removed_queue().begin(),
                                      s.removed_queue().end());
  Rng rng(3);
  // 20 in the queue, 5 per update: the first three updates must retrieve
  // q0[0..5), q0[5..10), q0[10..15) in order.
  for (int round = 0; round < 3; ++round) {
    record_all(s, std::vector<std::uint8_t>(80, 1));
    SieveReport rep = s.update(rng, 5 * (round + 1));
    CHECK(rep.swapped == 5);
    CHECK(rep.drain_remaining == 20 - 5 * (round + 1));
    for (int k = 0; k < 5; ++k) CHECK(s.contains(q0[5 * round + k]));
  }
}

TEST_CASE("every sample enters the partial set at least once") {
  // Same shape as the acceptance profile: 1000 samples, p=0.2, dt=5, T=160,
  // updates during the search phase only.
  SieveState s = SieveState::init(1000, 0.2, 17);
  Rng rng(21);
  std::vector<std::uint8_t> ever(1000, 0);
  for (std::uint32_t i : s.partial_set()) ever[i] = 1;
  Rng coin(99);
  for (int epoch = 0; epoch < 160; ++epoch) {
    std::vector<std::uint32_t> samples(s.partial_set());
    std::vector<std::uint8_t> correct(samples.size());
    for (auto& c : correct) c = static_cast<std::uint8_t>(coin.uniform_index(2));
    s.record_epoch(samples, correct);
    if (epoch > 0 && epoch % 5 == 0 && epoch <= 120) {
      s.update(rng, epoch);
      for (std::uint32_t i : s.partial_set()) ever[i] = 1;
    }
  }
  CHECK(std::count(ever.begin(), ever.end(), 1) == 1000);
}

TEST_CASE("conservation: sizes and disjointness hold across updates") {
  SieveState s = SieveState::init(300, 0.25, 19);
  Rng rng(4);
  Rng coin(5);
  for (int round = 1; round <= 10; ++round) {
    std::vector<std::uint32_t> samples(s.partial_set());
    std::vector<std::uint8_t> correct(samples.size());
    for (auto& c : correct) c = static_cast<std::uint8_t>(coin.uniform_index(2));
    s.record_epoch(samples, correct);
    s.update(rng, round * 5);
    CHECK(s.partial_set().size() == 225);
    CHECK(s.removed_queue().size() == 75);
    std::set<std::uint32_t> seen(s.partial_set().begin(),
                                 s.partial_set().end());
    for (std::uint32_t q : s.removed_queue()) CHECK(seen.insert(q).second);
    CHECK(seen.size() == 300);
  }
}

TEST_CASE("identical seeds reproduce identical swap sequences") {
  auto run = [](std::uint64_t seed) {
    SieveState s = SieveState::init(200, 0.3, seed);
    Rng rng = Rng::derive(seed, 1);
    Rng coin(seed ^ 7);
    std::vector<std::vector<std::uint32_t>> partials;
    for (int round = 1; round <= 6; ++round) {
      std::vector<std::uint32_t> samples(s.partial_set());
      std::vector<std::uint8_t> correct(samples.size());
      for (auto& c : correct)
        c = static_cast<std::uint8_t>(coin.uniform_index(2));
      s.record_epoch(samples, correct);
      s.update(rng, round * 5);
      partials.push_back(s.partial_set());
    }
    return partials;
  };
  CHECK(run(42) == run(42));
  CHECK(run(42) != run(43));
}

TEST_CASE("update count above the partial size is a configuration error") {
  SieveState s = SieveState::init(10, 0.8, 23, /*update_ratio=*/1.0);
  REQUIRE(s.removed_queue().size() == 8);
  record_all(s, std::vector<std::uint8_t>(2, 1));
  Rng rng(1);
  CHECK_THROWS_AS(s.update(rng, 5), ConfigError);
}
