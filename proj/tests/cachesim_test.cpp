#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "mvpcache/cachesim.hpp"
#include "model_fixtures.hpp"

using namespace mvpcache;

namespace {

TraceEvent rd(double ts, std::uint64_t block, std::uint64_t blocks = 1) {
  return {ts, OpType::Read, block * 4096, blocks * 4096};
}

// Reference LRU: a vector ordered from most to least recent, linear search.
std::vector<std::uint8_t> naive_lru(const std::vector<TraceEvent>& events, std::size_t capacity) {
  std::vector<std::uint64_t> order;
  std::vector<std::uint8_t> out;
  for (const auto& e : events) {
    if (!e.is_read()) continue;
    for (std::uint64_t b = e.offset / 4096; b <= (e.offset + e.size - 1) / 4096; ++b) {
      auto it = std::find(order.begin(), order.end(), b);
      const bool hit = it != order.end();
      if (hit) order.erase(it);
      else if (order.size() == capacity) order.pop_back();
      order.insert(order.begin(), b);
      out.push_back(hit);
    }
  }
  return out;
}

std::vector<TraceEvent> random_trace(std::uint64_t seed, std::size_t n, std::uint64_t blocks) {
  Rng rng(seed);
  std::uniform_int_distribution<std::uint64_t> blk(0, blocks - 1);
  std::uniform_int_distribution<std::uint64_t> len(1, 4);
  std::vector<TraceEvent> ev;
  for (std::size_t i = 0; i < n; ++i) {
    auto e = rd(static_cast<double>(i) * 0.5, blk(rng), len(rng));
    if (i % 9 == 4) e.op = OpType::Write;
    ev.push_back(e);
  }
  return ev;
}

// Three motifs in three bins, played in a fixed cycle, one slice each.
struct CycleFixture {
  BinningConfig binning;
  TrainedPredictor predictor;
  std::vector<TraceEvent> events;
};

CycleFixture cycle_fixture(std::size_t slices) {
  CycleFixture f;
  f.binning.bins = 3;
  f.binning.lba_lo = 0;
  f.binning.lba_hi = 3 * 1000 * 4096;
  f.binning.slice_secs = 30.0;
  auto& m = f.predictor.model;
  for (std::size_t k = 0; k < 3; ++k) {
    m.params.push_back(SMVPParams{MVPParams(3), {0.0, 0.0, 0.0}, {1, 1, 1}});
    std::vector<double> mu(3, 0.01);
    mu[k] = 20.0;
    m.mu.push_back(mu);
    std::vector<double> row(3, 0.01);
    row[(k + 1) % 3] = 0.98;
    m.transition.push_back(row);
    auto& h = f.predictor.access_map.blocks[k];
    for (std::uint64_t b = 0; b < 20; ++b) h.push_back(k * 1000 + b);
  }
  m.initial.assign(3, 1.0 / 3.0);
  f.predictor.binning = f.binning;
  for (std::size_t s = 0; s < slices; ++s)
    for (std::uint64_t b = 0; b < 20; ++b) f.events.push_back(rd(30.0 * static_cast<double>(s) + b, (s % 3) * 1000 + b));
  return f;
}

}  // namespace

TEST(Lru, RepeatedSingleBlock) {
  std::vector<TraceEvent> ev;
  for (int i = 0; i < 10; ++i) ev.push_back(rd(i, 7));
  const auto r = simulate_baseline(ev, 1, 4096);
  EXPECT_EQ(r.hits, 9u);
  EXPECT_EQ(r.misses, 1u);
  EXPECT_DOUBLE_EQ(r.hitrate(), 0.9);
}

TEST(Lru, CyclicScanLargerThanCacheNeverHits) {
  std::vector<TraceEvent> ev;
  for (int rep = 0; rep < 5; ++rep)
    for (std::uint64_t b = 0; b < 6; ++b) ev.push_back(rd(rep * 6 + static_cast<double>(b), b));
  EXPECT_EQ(simulate_baseline(ev, 5, 4096).hits, 0u);
}

TEST(Lru, MatchesNaiveReference) {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const auto ev = random_trace(seed, 400, 60);
    for (std::size_t cap : {1u, 3u, 17u, 80u}) {
      const auto r = simulate_baseline(ev, cap, 4096, true);
      EXPECT_EQ(r.outcomes, naive_lru(ev, cap)) << seed << ' ' << cap;
      EXPECT_EQ(r.hits + r.misses, r.outcomes.size());
    }
  }
}

TEST(Lru, ResidencyBoundAndRecencyOrder) {
  LruCache c(3);
  for (std::uint64_t b : {1, 2, 3, 4, 2, 5}) {
    c.access(b);
    EXPECT_LE(c.size(), 3u);
  }
  EXPECT_EQ(c.residents(), (std::vector<std::uint64_t>{5, 2, 4}));
  c.insert(9);
  EXPECT_EQ(c.residents(), (std::vector<std::uint64_t>{9, 5, 2}));
  EXPECT_THROW(LruCache(0), ConfigError);
}

TEST(Lru, StackPropertyInCapacity) {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const auto ev = random_trace(seed, 300, 50);
    std::uint64_t prev = 0;
    for (std::size_t cap = 1; cap <= 60; ++cap) {
      const auto hits = simulate_baseline(ev, cap, 4096).hits;
      EXPECT_GE(hits, prev);
      prev = hits;
    }
  }
}

TEST(Lru, WritesBypassCache) {
  std::vector<TraceEvent> ev = {rd(0, 1), rd(1, 1)};
  ev.insert(ev.begin() + 1, TraceEvent{0.5, OpType::Write, 2 * 4096, 4096});
  const auto r = simulate_baseline(ev, 1, 4096);
  EXPECT_EQ(r.hits, 1u);
  EXPECT_EQ(r.misses, 1u);
}

TEST(Capacity, Examples) {
  std::vector<TraceEvent> ev;
  for (std::uint64_t b = 0; b < 100; ++b) ev.push_back(rd(0, b));
  EXPECT_EQ(capacity_from_trace(ev, 0.05, 4096), 5u);
  EXPECT_EQ(capacity_from_trace(std::vector<TraceEvent>{rd(0, 3), rd(1, 3)}, 0.05, 4096), 1u);
  EXPECT_EQ(capacity_from_trace(std::vector<TraceEvent>{rd(0, 3)}, 1.0, 4096), 1u);
  EXPECT_THROW(capacity_from_trace(ev, 0.0, 4096), ConfigError);
}

TEST(Capacity, MatchesDistinctCount) {
  const auto ev = random_trace(3, 500, 1000);
  std::set<std::uint64_t> seen;
  for (const auto& e : ev)
    if (e.is_read())
      for (std::uint64_t b = e.offset / 4096; b <= (e.offset + e.size - 1) / 4096; ++b) seen.insert(b);
  for (double f : {0.01, 0.05, 0.33, 1.0}) {
    const auto want = std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(f * static_cast<double>(seen.size()) - 1e-9)));
    EXPECT_EQ(capacity_from_trace(ev, f, 4096), want) << f;
  }
}

TEST(Preloading, EmptyMapEqualsBaseline) {
  auto f = cycle_fixture(12);
  f.predictor.access_map = {};
  for (std::size_t cap : {1u, 10u, 25u}) {
    const auto base = simulate_baseline(f.events, cap, 4096, true);
    const auto pre = simulate_preloading(f.events, f.predictor, f.binning, cap, 0, true);
    EXPECT_EQ(pre.outcomes, base.outcomes);
    EXPECT_EQ(pre.hits, base.hits);
    EXPECT_EQ(pre.misses, base.misses);
  }
}

TEST(Preloading, OracleMapBeatsBaseline) {
  const auto f = cycle_fixture(30);
  const auto base = simulate_baseline(f.events, 25, 4096);
  const auto pre = simulate_preloading(f.events, f.predictor, f.binning, 25, 0);
  EXPECT_GE(pre.hitrate(), base.hitrate());
  EXPECT_GT(pre.hitrate(), 0.9);
  EXPECT_EQ(pre.hits + pre.misses, base.hits + base.misses);
}

TEST(Preloading, PreloadsAtEverySliceBoundary) {
  auto f = cycle_fixture(1);
  f.events.push_back(rd(95.0, 1000));  // slice 3, slices 1 and 2 empty
  const auto pre = simulate_preloading(f.events, f.predictor, f.binning, 25, 0);
  ASSERT_EQ(pre.preload_log.size(), 4u);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(pre.preload_log[i].slice, i);
  EXPECT_EQ(pre.preload_volumes.size(), 4u);
}

TEST(Preloading, OversizedPredictionKeepsLargestIds) {
  auto f = cycle_fixture(1);
  // The first preload is H(predicted) = 20 blocks into a cache of 5: the five
  // highest ids survive because blocks go in ascending order.
  const auto first = Decoder(f.predictor.model).predict_next();
  std::vector<TraceEvent> probe;
  for (std::uint64_t b = 15; b < 20; ++b) probe.push_back(rd(1.0, first * 1000 + b));
  const auto pre = simulate_preloading(probe, f.predictor, f.binning, 5, 0);
  EXPECT_EQ(pre.hits, 5u);
}

TEST(Preloading, BinningMismatchIsConfigError) {
  const auto f = cycle_fixture(3);
  BinningConfig other = f.binning;
  other.slice_secs = 10.0;
  EXPECT_THROW(simulate_preloading(f.events, f.predictor, other, 5, 0), ConfigError);
}
