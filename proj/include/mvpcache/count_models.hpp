#ifndef MVPCACHE_COUNT_MODELS_HPP
#define MVPCACHE_COUNT_MODELS_HPP

// Multivariate Poisson (MVP), its independent-Poisson restriction and the
// sparse variant (SMVP): generative samplers plus the Gamma-collapsed
// likelihood kernels shared by the Gibbs samplers.
//
// A count vector X = Y 1 where Y is a symmetric matrix of Poisson counts with
// rates Lambda; Cov(X_j, X_l) = lambda_jl. Gamma priors use shape/rate.

#include <cmath>
#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "mvpcache/error.hpp"
#include "mvpcache/random.hpp"

namespace mvpcache {

struct Hyperparams {
  double a_bar = 1.0;    // Gamma shape, active rates
  double b_bar = 1.0;    // Gamma rate, active rates
  double a_hat = 1.0;    // Gamma shape, noise rates
  double b_hat = 10.0;   // Gamma rate, noise rates
  double a_prime = 1.0;  // Beta prior on dimension activity
  double b_prime = 1.0;
  double alpha = 1.0;    // DP / transition concentration
  double gamma = 1.0;    // top-level stick-breaking concentration

  void validate() const {
    for (double v : {a_bar, b_bar, a_hat, b_hat, a_prime, b_prime, alpha, gamma})
      if (!(v > 0.0) || !std::isfinite(v)) throw ConfigError("hyperparameters must be positive and finite");
  }
  bool operator==(const Hyperparams&) const = default;
};

/// Row-major index into the upper triangle (j <= l) of an M x M matrix.
class TriIndex {
 public:
  explicit TriIndex(std::size_t dim = 0) : dim_(dim) {}

  std::size_t dim() const noexcept { return dim_; }
  std::size_t size() const noexcept { return dim_ * (dim_ + 1) / 2; }

  std::size_t operator()(std::size_t j, std::size_t l) const noexcept {
    if (j > l) std::swap(j, l);
    return j * dim_ - (j * (j - 1)) / 2 + (l - j);
  }

 private:
  std::size_t dim_;
};

/// Symmetric rate matrix stored as its upper triangle.
struct MVPParams {
  std::size_t dim = 0;
  std::vector<double> rates;  // TriIndex layout

  MVPParams() = default;
  explicit MVPParams(std::size_t m) : dim(m), rates(TriIndex(m).size(), 0.0) {}

  double rate(std::size_t j, std::size_t l) const { return rates[TriIndex(dim)(j, l)]; }
  void set_rate(std::size_t j, std::size_t l, double v) { rates[TriIndex(dim)(j, l)] = v; }

  void validate() const {
    if (rates.size() != TriIndex(dim).size()) throw ConfigError("rate matrix has wrong size");
    for (double r : rates)
      if (!(r >= 0.0) || !std::isfinite(r)) throw ConfigError("rates must be non-negative");
  }
};

struct SMVPParams {
  MVPParams lambda;                  // referenced only where both dims active
  std::vector<double> noise;         // per-dimension rate for inactive dims
  std::vector<std::uint8_t> active;  // b_j

  std::size_t dim() const noexcept { return lambda.dim; }

  void validate() const {
    lambda.validate();
    if (noise.size() != dim() || active.size() != dim()) throw ConfigError("SMVP parameter sizes disagree");
    for (double r : noise)
      if (!(r >= 0.0)) throw ConfigError("noise rates must be non-negative");
  }
};

inline std::vector<std::int64_t> sample_mvp(const MVPParams& p, Rng& rng) {
  std::vector<std::int64_t> x(p.dim, 0);
  for (std::size_t j = 0; j < p.dim; ++j) {
    x[j] += draw_poisson(p.rate(j, j), rng);
    for (std::size_t l = j + 1; l < p.dim; ++l) {
      const auto y = draw_poisson(p.rate(j, l), rng);
      x[j] += y;
      x[l] += y;
    }
  }
  return x;
}

inline std::vector<std::int64_t> sample_smvp(const SMVPParams& p, Rng& rng) {
  const std::size_t m = p.dim();
  std::vector<std::int64_t> x(m, 0);
  for (std::size_t j = 0; j < m; ++j) {
    if (!p.active[j]) {
      x[j] += draw_poisson(p.noise[j], rng);
      continue;
    }
    x[j] += draw_poisson(p.lambda.rate(j, j), rng);
    for (std::size_t l = j + 1; l < m; ++l) {
      if (!p.active[l]) continue;
      const auto y = draw_poisson(p.lambda.rate(j, l), rng);
      x[j] += y;
      x[l] += y;
    }
  }
  return x;
}

/// log [ Gamma(shape + S) / ((rate + n)^(shape + S) * prod Y!) ], the
/// Gamma-collapsed Poisson factor for n observations summing to S.
inline double log_collapsed_poisson(std::int64_t sum, std::int64_t n, double log_fact_sum,
                                    double shape, double rate) {
  const double a = shape + static_cast<double>(sum);
  return std::lgamma(a) - a * std::log(rate + static_cast<double>(n)) - log_fact_sum;
}

inline double log_F(std::int64_t sum, std::int64_t n, double log_fact_sum, const Hyperparams& hp) {
  return log_collapsed_poisson(sum, n, log_fact_sum, hp.a_bar, hp.b_bar);
}

inline double log_F_hat(std::int64_t sum, std::int64_t n, double log_fact_sum, const Hyperparams& hp) {
  return log_collapsed_poisson(sum, n, log_fact_sum, hp.a_hat, hp.b_hat);
}

/// Per-cluster emission means: mu_i = sum_j lambda_ij b_i b_j + (1 - b_i) noise_i.
inline std::vector<double> mu_from_params(const SMVPParams& p) {
  const std::size_t m = p.dim();
  std::vector<double> mu(m, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    if (!p.active[i]) {
      mu[i] = p.noise[i];
      continue;
    }
    for (std::size_t j = 0; j < m; ++j)
      if (p.active[j]) mu[i] += p.lambda.rate(i, j);
  }
  return mu;
}

inline double log_poisson(std::int64_t x, double mu) {
  if (mu <= 0.0) return x == 0 ? 0.0 : kNegInf;
  const double xd = static_cast<double>(x);
  return xd * std::log(mu) - mu - std::lgamma(xd + 1.0);
}

/// Sum of independent Poisson log-pmfs; -inf when some mu_i = 0 with x_i > 0.
inline double log_poisson_vec(std::span<const std::int64_t> x, std::span<const double> mu) {
  double acc = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double v = log_poisson(x[i], mu[i]);
    if (v == kNegInf) return kNegInf;
    acc += v;
  }
  return acc;
}

}  // namespace mvpcache

#endif  // MVPCACHE_COUNT_MODELS_HPP
