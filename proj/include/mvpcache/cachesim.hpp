#ifndef MVPCACHE_CACHESIM_HPP
#define MVPCACHE_CACHESIM_HPP

// Trace-replay read-cache simulator: plain LRU and LRU with model-driven
// preloading at every slice boundary. Hits and misses are counted per block;
// writes bypass the cache.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <list>
#include <span>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "mvpcache/error.hpp"
#include "mvpcache/predictor.hpp"
#include "mvpcache/trace.hpp"

namespace mvpcache {

class LruCache {
 public:
  explicit LruCache(std::size_t capacity) : capacity_(capacity) {
    if (capacity < 1) throw ConfigError("cache capacity must be at least 1");
    pos_.reserve(capacity * 2);
  }

  std::size_t capacity() const noexcept { return capacity_; }
  std::size_t size() const noexcept { return order_.size(); }
  bool contains(std::uint64_t block) const { return pos_.count(block) != 0; }

  /// Demand access: refreshes recency on a hit, inserts on a miss.
  bool access(std::uint64_t block) {
    if (auto it = pos_.find(block); it != pos_.end()) {
      order_.splice(order_.begin(), order_, it->second);
      return true;
    }
    insert(block);
    return false;
  }

  /// Makes a block resident as most recently used, evicting the LRU victim if full.
  void insert(std::uint64_t block) {
    if (auto it = pos_.find(block); it != pos_.end()) {
      order_.splice(order_.begin(), order_, it->second);
      return;
    }
    if (order_.size() == capacity_) {
      pos_.erase(order_.back());
      order_.pop_back();
    }
    order_.push_front(block);
    pos_.emplace(block, order_.begin());
  }

  /// Resident blocks from most to least recently used.
  std::vector<std::uint64_t> residents() const { return {order_.begin(), order_.end()}; }

 private:
  std::size_t capacity_;
  std::list<std::uint64_t> order_;
  std::unordered_map<std::uint64_t, std::list<std::uint64_t>::iterator> pos_;
};

struct PreloadLogEntry {
  std::size_t slice = 0;  // absolute slice index the preload is made for
  std::size_t state = 0;  // predicted state
  std::size_t blocks = 0;
};

struct SimReport {
  std::uint64_t hits = 0;
  std::uint64_t misses = 0;
  std::vector<std::size_t> preload_volumes;  // blocks inserted per preload
  std::vector<PreloadLogEntry> preload_log;
  std::vector<std::uint8_t> outcomes;  // per block access, 1 = hit (when recorded)
  double wall_clock = 0.0;

  double hitrate() const {
    const auto total = hits + misses;
    return total == 0 ? 0.0 : static_cast<double>(hits) / static_cast<double>(total);
  }
};

/// Everything the operating phase needs from the learning phase.
struct TrainedPredictor {
  FittedModel model;
  AccessMap access_map;
  BinningConfig binning;

  bool operator==(const TrainedPredictor&) const = default;
};

namespace detail {

inline void replay_event(const TraceEvent& e, std::uint64_t block_size, LruCache& cache, SimReport& r,
                         bool record) {
  if (!e.is_read()) return;
  const auto range = block_range(e, block_size);
  for (std::uint64_t b = range.first; b < range.end(); ++b) {
    const bool hit = cache.access(b);
    hit ? ++r.hits : ++r.misses;
    if (record) r.outcomes.push_back(hit ? 1 : 0);
  }
}

}  // namespace detail

inline SimReport simulate_baseline(std::span<const TraceEvent> events, std::size_t capacity,
                                   std::uint64_t block_size, bool record_outcomes = false) {
  const auto start = std::chrono::steady_clock::now();
  LruCache cache(capacity);
  SimReport r;
  for (const auto& e : events) detail::replay_event(e, block_size, cache, r, record_outcomes);
  r.wall_clock = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return r;
}

/// Replays `events` (the operating phase, starting at absolute slice
/// `first_slice`) while preloading H(predicted next state) at the start of the
/// phase and at every slice boundary, including boundaries of empty slices.
inline SimReport simulate_preloading(std::span<const TraceEvent> events, const TrainedPredictor& predictor,
                                     const BinningConfig& binning, std::size_t capacity, std::size_t first_slice,
                                     bool record_outcomes = false) {
  if (!(predictor.binning == binning)) throw ConfigError("binning differs from the one the model was fitted with");
  if (predictor.model.dim() != binning.bins) throw ConfigError("model dimension differs from the bin count");
  const auto start = std::chrono::steady_clock::now();
  LruCache cache(capacity);
  SimReport r;
  Decoder decoder(predictor.model);
  CountVector x(binning.bins, 0);
  std::size_t current = first_slice;

  auto preload = [&](std::size_t slice) {
    const std::size_t k = decoder.predict_next();
    const auto blocks = predictor.access_map.lookup(k);
    for (auto b : blocks) cache.insert(b);
    r.preload_volumes.push_back(blocks.size());
    r.preload_log.push_back({slice, k, blocks.size()});
  };

  preload(current);
  for (const auto& e : events) {
    const std::size_t s = binning.slice_of(e.timestamp);
    while (s > current) {
      decoder.observe(x);
      std::fill(x.begin(), x.end(), 0);
      ++current;
      preload(current);
    }
    if (binning.counts(e)) count_event(binning, e, x);
    detail::replay_event(e, binning.block_size, cache, r, record_outcomes);
  }
  r.wall_clock = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return r;
}

/// ceil(fraction * distinct read blocks), at least 1.
inline std::size_t capacity_from_trace(std::span<const TraceEvent> events, double fraction,
                                       std::uint64_t block_size) {
  if (!(fraction > 0.0 && fraction <= 1.0)) throw ConfigError("cache fraction must lie in (0, 1]");
  std::unordered_set<std::uint64_t> seen;
  for (const auto& e : events) {
    if (!e.is_read()) continue;
    const auto r = block_range(e, block_size);
    for (std::uint64_t b = r.first; b < r.end(); ++b) seen.insert(b);
  }
  const auto n = static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(seen.size()) - 1e-9));
  return std::max<std::size_t>(n, 1);
}

}  // namespace mvpcache

#endif  // MVPCACHE_CACHESIM_HPP
