#ifndef MVPCACHE_RANDOM_HPP
#define MVPCACHE_RANDOM_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <span>
#include <vector>

namespace mvpcache {

using Rng = std::mt19937_64;

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();

inline double log_sum_exp(std::span<const double> values) {
  double hi = kNegInf;
  for (double v : values) hi = std::max(hi, v);
  if (hi == kNegInf) return kNegInf;
  double acc = 0.0;
  for (double v : values) acc += std::exp(v - hi);
  return hi + std::log(acc);
}

/// Draws an index with probability proportional to exp(log_weights[i]).
/// Entries equal to -inf are never chosen unless every entry is -inf, in
/// which case index 0 is returned.
inline std::size_t sample_log_categorical(std::span<const double> log_weights, Rng& rng) {
  double hi = kNegInf;
  for (double v : log_weights) hi = std::max(hi, v);
  if (hi == kNegInf || log_weights.size() == 1) return 0;
  thread_local std::vector<double> cumulative;
  cumulative.resize(log_weights.size());
  double total = 0.0;
  for (std::size_t i = 0; i < log_weights.size(); ++i) {
    total += std::exp(log_weights[i] - hi);
    cumulative[i] = total;
  }
  const double u = std::uniform_real_distribution<double>(0.0, total)(rng);
  const auto it = std::upper_bound(cumulative.begin(), cumulative.end(), u);
  const std::size_t idx = static_cast<std::size_t>(it - cumulative.begin());
  return std::min(idx, log_weights.size() - 1);
}

inline double draw_gamma(double shape, Rng& rng) {
  if (shape <= 0.0) return 0.0;
  return std::gamma_distribution<double>(shape, 1.0)(rng);
}

inline double draw_beta(double a, double b, Rng& rng) {
  const double x = draw_gamma(a, rng);
  const double y = draw_gamma(b, rng);
  if (x + y <= 0.0) return 0.5;
  return x / (x + y);
}

inline std::int64_t draw_poisson(double mean, Rng& rng) {
  if (!(mean > 0.0)) return 0;
  return std::poisson_distribution<std::int64_t>(mean)(rng);
}

inline bool draw_bernoulli(double p, Rng& rng) {
  if (p <= 0.0) return false;
  if (p >= 1.0) return true;
  return std::bernoulli_distribution(p)(rng);
}

}  // namespace mvpcache

#endif  // MVPCACHE_RANDOM_HPP
