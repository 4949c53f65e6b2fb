#ifndef MVPCACHE_SYNTH_HPP
#define MVPCACHE_SYNTH_HPP

// Ground-truth generators: Markov-switching sparse MVP count sequences with
// known states, and block traces built from repeating access motifs.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <span>
#include <vector>

#include "mvpcache/count_models.hpp"
#include "mvpcache/error.hpp"
#include "mvpcache/random.hpp"
#include "mvpcache/trace.hpp"

namespace mvpcache {

namespace detail {

inline void check_stochastic(std::span<const double> row, const char* what) {
  double total = 0.0;
  for (double p : row) {
    if (!(p >= 0.0)) throw ConfigError(std::string(what) + " has a negative entry");
    total += p;
  }
  if (std::abs(total - 1.0) > 1e-9) throw ConfigError(std::string(what) + " does not sum to one");
}

inline std::size_t draw_index(std::span<const double> probs, Rng& rng) {
  const double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
  double acc = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    acc += probs[i];
    if (u < acc) return i;
  }
  return probs.size() - 1;
}

/// Transition matrix with `self` on the diagonal and the rest spread evenly.
inline std::vector<std::vector<double>> sticky_transitions(std::size_t K, double self) {
  std::vector<std::vector<double>> p(K, std::vector<double>(K, K > 1 ? (1.0 - self) / static_cast<double>(K - 1) : 1.0));
  if (K > 1)
    for (std::size_t k = 0; k < K; ++k) p[k][k] = self;
  return p;
}

}  // namespace detail

struct SequenceSpec {
  std::size_t length = 400;
  std::vector<double> initial;
  std::vector<std::vector<double>> transition;
  std::vector<SMVPParams> clusters;

  std::size_t num_states() const noexcept { return clusters.size(); }
  std::size_t dim() const noexcept { return clusters.empty() ? 0 : clusters.front().dim(); }

  void validate() const {
    const std::size_t K = num_states();
    if (K == 0) throw ConfigError("sequence spec needs at least one cluster");
    if (initial.size() != K || transition.size() != K) throw ConfigError("sequence spec sizes disagree");
    detail::check_stochastic(initial, "initial distribution");
    for (const auto& row : transition) {
      if (row.size() != K) throw ConfigError("transition matrix is not square");
      detail::check_stochastic(row, "transition row");
    }
    for (const auto& c : clusters) {
      c.validate();
      if (c.dim() != dim()) throw ConfigError("clusters have inconsistent dimension");
    }
  }

  /// Three sticky states (self-transition 0.9) on M = 10 bins with disjoint
  /// active sets {0,1,2}, {3,4,5}, {6,7,8}; bin 9 is never active. Diagonal
  /// rates 5, 20 and 50, off-diagonal rates half the diagonal, noise 0.05.
  static SequenceSpec default_recovery(std::size_t length = 400) {
    constexpr std::size_t K = 3, M = 10;
    const std::array<double, K> diag = {5.0, 20.0, 50.0};
    SequenceSpec s;
    s.length = length;
    s.initial.assign(K, 1.0 / K);
    s.transition = detail::sticky_transitions(K, 0.9);
    for (std::size_t k = 0; k < K; ++k) {
      SMVPParams p;
      p.lambda = MVPParams(M);
      p.noise.assign(M, 0.05);
      p.active.assign(M, 0);
      for (std::size_t j = 3 * k; j < 3 * k + 3; ++j) p.active[j] = 1;
      for (std::size_t j = 3 * k; j < 3 * k + 3; ++j) {
        p.lambda.set_rate(j, j, diag[k]);
        for (std::size_t l = j + 1; l < 3 * k + 3; ++l) p.lambda.set_rate(j, l, diag[k] / 2.0);
      }
      s.clusters.push_back(std::move(p));
    }
    return s;
  }
};

struct GeneratedSequence {
  std::vector<CountVector> counts;
  std::vector<int> states;
};

inline GeneratedSequence gen_count_sequence(const SequenceSpec& spec, Rng& rng) {
  spec.validate();
  GeneratedSequence out;
  out.counts.reserve(spec.length);
  out.states.reserve(spec.length);
  std::size_t k = 0;
  for (std::size_t t = 0; t < spec.length; ++t) {
    k = detail::draw_index(t == 0 ? std::span<const double>(spec.initial) : std::span<const double>(spec.transition[k]),
                           rng);
    out.states.push_back(static_cast<int>(k));
    out.counts.push_back(sample_smvp(spec.clusters[k], rng));
  }
  return out;
}

/// Block trace with planted repeating motifs. Each slice plays one motif
/// (chosen by a Markov schedule over motifs), keeping each motif block with
/// probability `keep_prob`, plus Poisson background reads spread over the
/// volume. An optional one-off sequential scan inflates the footprint.
struct TraceSpec {
  std::size_t slices = 240;
  double slice_secs = 30.0;
  std::uint64_t block_size = 4096;
  std::uint64_t volume_blocks = 100000;
  std::vector<std::vector<std::uint64_t>> motifs;  // block ids
  std::vector<double> initial;                     // over motifs
  std::vector<std::vector<double>> schedule;       // motif transition matrix
  double keep_prob = 0.9;
  double noise_rate = 3.0;  // background reads per slice
  std::size_t scan_slice = 5;
  std::uint64_t scan_first_block = 0;
  std::uint64_t scan_blocks = 0;
  std::uint64_t scan_request_blocks = 8;

  void validate() const {
    if (slices < 1) throw ConfigError("trace spec needs at least one slice");
    if (!(slice_secs > 0.0)) throw ConfigError("slice length must be positive");
    if (block_size < 1 || volume_blocks < 1) throw ConfigError("block geometry must be positive");
    if (motifs.empty()) throw ConfigError("trace spec needs at least one motif");
    for (const auto& m : motifs) {
      if (m.empty()) throw ConfigError("motifs must be non-empty");
      for (auto b : m)
        if (b >= volume_blocks) throw ConfigError("motif block outside the volume");
    }
    if (initial.size() != motifs.size() || schedule.size() != motifs.size())
      throw ConfigError("schedule size differs from the motif count");
    detail::check_stochastic(initial, "initial motif distribution");
    for (const auto& row : schedule) {
      if (row.size() != motifs.size()) throw ConfigError("schedule is not square");
      detail::check_stochastic(row, "schedule row");
    }
    if (!(keep_prob > 0.0 && keep_prob <= 1.0)) throw ConfigError("keep probability must lie in (0, 1]");
    if (!(noise_rate >= 0.0)) throw ConfigError("noise rate must be non-negative");
    if (scan_blocks > 0 && scan_first_block + scan_blocks > volume_blocks)
      throw ConfigError("scan extends beyond the volume");
    if (scan_request_blocks < 1) throw ConfigError("scan request size must be positive");
  }

  /// Eight motifs of 150 blocks over a 10-bin volume; motif i sits in bins
  /// i and (i + 1) mod 8, so every motif has its own pair of bins. The
  /// schedule advances cyclically with probability 0.9 and jumps uniformly
  /// otherwise. A 4000-block scan runs once in slice 5 inside bin 8.
  static TraceSpec default_pattern() {
    TraceSpec s;
    constexpr std::size_t kMotifs = 8, kBins = 10, kHalf = 75;
    const std::uint64_t bin_blocks = s.volume_blocks / kBins;
    for (std::size_t i = 0; i < kMotifs; ++i) {
      std::vector<std::uint64_t> m;
      for (std::size_t bin : {i, (i + 1) % kMotifs}) {
        // The two motifs sharing a bin use disjoint runs within it.
        const std::uint64_t first = bin * bin_blocks + 1000 + (bin == i ? 0 : 2 * kHalf);
        for (std::uint64_t b = 0; b < kHalf; ++b) m.push_back(first + b);
      }
      std::sort(m.begin(), m.end());
      s.motifs.push_back(std::move(m));
    }
    s.initial.assign(kMotifs, 1.0 / kMotifs);
    s.schedule.assign(kMotifs, std::vector<double>(kMotifs, 0.1 / kMotifs));
    for (std::size_t i = 0; i < kMotifs; ++i) s.schedule[i][(i + 1) % kMotifs] += 0.9;
    s.scan_slice = 5;
    s.scan_first_block = 8 * bin_blocks + 1000;  // bin 8 carries no motif
    s.scan_blocks = 4000;
    return s;
  }
};

struct GeneratedTrace {
  std::vector<TraceEvent> events;
  std::vector<int> motif_per_slice;
};

inline GeneratedTrace gen_block_trace(const TraceSpec& spec, Rng& rng) {
  spec.validate();
  GeneratedTrace out;
  std::uniform_real_distribution<double> offset_in_slice(0.0, 1.0);
  std::uniform_int_distribution<std::uint64_t> any_block(0, spec.volume_blocks - 1);
  auto emit = [&](std::size_t slice, std::uint64_t block, std::uint64_t blocks) {
    const double ts = (static_cast<double>(slice) + offset_in_slice(rng)) * spec.slice_secs;
    out.events.push_back({ts, OpType::Read, block * spec.block_size, blocks * spec.block_size});
  };
  std::size_t motif = 0;
  for (std::size_t s = 0; s < spec.slices; ++s) {
    motif = detail::draw_index(s == 0 ? std::span<const double>(spec.initial)
                                      : std::span<const double>(spec.schedule[motif]),
                               rng);
    out.motif_per_slice.push_back(static_cast<int>(motif));
    for (auto b : spec.motifs[motif])
      if (draw_bernoulli(spec.keep_prob, rng)) emit(s, b, 1);
    const auto noise = draw_poisson(spec.noise_rate, rng);
    for (std::int64_t i = 0; i < noise; ++i) emit(s, any_block(rng), 1);
    if (spec.scan_blocks > 0 && s == spec.scan_slice) {
      for (std::uint64_t b = 0; b < spec.scan_blocks; b += spec.scan_request_blocks)
        emit(s, spec.scan_first_block + b, std::min(spec.scan_request_blocks, spec.scan_blocks - b));
    }
  }
  std::stable_sort(out.events.begin(), out.events.end(),
                   [](const TraceEvent& a, const TraceEvent& b) { return a.timestamp < b.timestamp; });
  // Parsing re-bases timestamps to the first request; anchor it at zero so a
  // written and re-read trace keeps the same slices.
  if (!out.events.empty()) out.events.front().timestamp = 0.0;
  return out;
}

/// Adjusted Rand index between two labelings of the same items.
inline double adjusted_rand_index(std::span<const int> a, std::span<const int> b) {
  if (a.size() != b.size()) throw ConfigError("labelings differ in length");
  const double n = static_cast<double>(a.size());
  if (a.size() < 2) return 1.0;
  std::map<std::pair<int, int>, double> joint;
  std::map<int, double> rows, cols;
  for (std::size_t i = 0; i < a.size(); ++i) {
    joint[{a[i], b[i]}] += 1.0;
    rows[a[i]] += 1.0;
    cols[b[i]] += 1.0;
  }
  auto choose2 = [](double v) { return v * (v - 1.0) / 2.0; };
  double index = 0.0, sum_rows = 0.0, sum_cols = 0.0;
  for (const auto& [key, v] : joint) index += choose2(v);
  for (const auto& [key, v] : rows) sum_rows += choose2(v);
  for (const auto& [key, v] : cols) sum_cols += choose2(v);
  const double expected = sum_rows * sum_cols / choose2(n);
  const double max_index = 0.5 * (sum_rows + sum_cols);
  if (max_index == expected) return 1.0;
  return (index - expected) / (max_index - expected);
}

}  // namespace mvpcache

#endif  // MVPCACHE_SYNTH_HPP
