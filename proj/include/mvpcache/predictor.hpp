#ifndef MVPCACHE_PREDICTOR_HPP
#define MVPCACHE_PREDICTOR_HPP

// Point estimates from a fitted sampler, the cluster -> block access map, and
// the online Viterbi decoder that predicts the next slice's state before its
// counts are seen. Emissions are approximated as independent Poisson(mu_k).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <span>
#include <vector>

#include "mvpcache/count_models.hpp"
#include "mvpcache/error.hpp"
#include "mvpcache/gibbs.hpp"
#include "mvpcache/random.hpp"

namespace mvpcache {

struct FittedModel {
  ModelKind kind = ModelKind::SparseHmmDpMmvp;
  Hyperparams hp;
  std::vector<SMVPParams> params;              // per cluster
  std::vector<std::vector<double>> transition;  // K x K, rows sum to one
  std::vector<double> initial;                  // pi0
  std::vector<std::vector<double>> mu;          // K x M emission means

  std::size_t num_states() const noexcept { return mu.size(); }
  std::size_t dim() const noexcept { return mu.empty() ? 0 : mu.front().size(); }

  void validate() const {
    const std::size_t K = num_states();
    if (K == 0) throw ConfigError("model has no states");
    if (transition.size() != K || initial.size() != K || params.size() != K)
      throw ConfigError("model components disagree on the state count");
    auto check_row = [](std::span<const double> row, const char* what) {
      double total = 0.0;
      for (double p : row) {
        if (!(p >= 0.0)) throw ConfigError(std::string(what) + " has a negative entry");
        total += p;
      }
      if (std::abs(total - 1.0) > 1e-9) throw ConfigError(std::string(what) + " does not sum to one");
    };
    for (const auto& row : transition) {
      if (row.size() != K) throw ConfigError("transition matrix is not square");
      check_row(row, "transition row");
    }
    check_row(initial, "initial distribution");
    for (const auto& m : mu) {
      if (m.size() != dim()) throw ConfigError("emission means have inconsistent dimension");
      for (double v : m)
        if (!(v >= 0.0)) throw ConfigError("emission means must be non-negative");
    }
  }

  bool operator==(const FittedModel&) const = default;
};

inline bool operator==(const MVPParams& a, const MVPParams& b) { return a.dim == b.dim && a.rates == b.rates; }
inline bool operator==(const SMVPParams& a, const SMVPParams& b) {
  return a.lambda == b.lambda && a.noise == b.noise && a.active == b.active;
}

/// Point estimates from the final sample's (Z, Y, b): posterior means of the
/// rates, smoothed transition rows and beta-based initial weights.
/// Exchangeable kinds get identical rows equal to the mixture weights.
inline FittedModel estimate_params(std::span<const GibbsState> samples) {
  if (samples.empty()) throw ConfigError("no posterior samples to estimate from");
  const GibbsState& s = samples.back();
  const std::size_t K = s.num_clusters();
  const std::size_t M = s.dim;
  const TriIndex idx(M);
  const Hyperparams& hp = s.hp;
  FittedModel m;
  m.kind = s.kind;
  m.hp = hp;

  std::vector<double> noise(M, 0.0);
  for (std::size_t j = 0; j < M; ++j)
    noise[j] = (hp.a_hat + static_cast<double>(s.noise_sum[j])) / (hp.b_hat + static_cast<double>(s.noise_n[j]));

  for (std::size_t k = 0; k < K; ++k) {
    const auto& c = s.clusters[k];
    SMVPParams p;
    p.lambda = MVPParams(M);
    p.noise = noise;
    p.active = c.active;
    const double denom = hp.b_bar + static_cast<double>(c.size);
    for (std::size_t j = 0; j < M; ++j) {
      for (std::size_t l = j; l < M; ++l) {
        if (j != l && s.traits().independent) continue;
        p.lambda.rates[idx(j, l)] = (hp.a_bar + static_cast<double>(c.sums[idx(j, l)])) / denom;
      }
    }
    m.mu.push_back(mu_from_params(p));
    m.params.push_back(std::move(p));
  }

  auto normalise = [](std::vector<double>& row) {
    double total = 0.0;
    for (double v : row) total += v;
    if (total > 0.0) {
      for (double& v : row) v /= total;
    } else {
      row.assign(row.size(), 1.0 / static_cast<double>(row.size()));
    }
  };

  std::vector<double> init(s.beta.begin(), s.beta.begin() + static_cast<std::ptrdiff_t>(K));
  if (s.traits().temporal) {
    m.transition.assign(K, std::vector<double>(K, 0.0));
    for (std::size_t k = 0; k < K; ++k) {
      for (std::size_t l = 0; l < K; ++l)
        m.transition[k][l] = static_cast<double>(s.trans[k][l]) + hp.alpha * s.beta[l];
      normalise(m.transition[k]);
    }
  } else {
    std::vector<double> w(K, 0.0);
    for (std::size_t k = 0; k < K; ++k) w[k] = static_cast<double>(s.clusters[k].size) + hp.alpha * s.beta[k];
    normalise(w);
    m.transition.assign(K, w);
    init = w;
  }
  normalise(init);
  m.initial = std::move(init);
  return m;
}

/// H(k): union of the block ids accessed in every training slice assigned to k.
struct AccessMap {
  std::map<std::size_t, std::vector<std::uint64_t>> blocks;  // sorted, unique

  std::span<const std::uint64_t> lookup(std::size_t k) const {
    const auto it = blocks.find(k);
    if (it == blocks.end()) return {};
    return it->second;
  }
  bool empty() const noexcept { return blocks.empty(); }
  bool operator==(const AccessMap&) const = default;
};

inline AccessMap build_access_map(std::span<const int> z, std::span<const std::vector<std::uint64_t>> accesses) {
  if (z.size() != accesses.size()) throw ConfigError("assignment and access sequences differ in length");
  AccessMap map;
  for (std::size_t t = 0; t < z.size(); ++t) {
    if (z[t] < 0) continue;
    auto& dst = map.blocks[static_cast<std::size_t>(z[t])];
    dst.insert(dst.end(), accesses[t].begin(), accesses[t].end());
  }
  for (auto& [k, v] : map.blocks) {
    std::sort(v.begin(), v.end());
    v.erase(std::unique(v.begin(), v.end()), v.end());
  }
  return map;
}

namespace detail {

inline std::size_t argmax_first(std::span<const double> v) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i)
    if (v[i] > v[best]) best = i;
  return best;
}

inline double safe_log(double p) { return p > 0.0 ? std::log(p) : kNegInf; }

}  // namespace detail

/// Log emission of x under state k.
inline double emission_log_prob(const FittedModel& m, std::size_t k, std::span<const std::int64_t> x) {
  return log_poisson_vec(x, m.mu[k]);
}

/// log Poisson(floor(mu); mu) summed over coordinates: the emission of the
/// per-state modal count vector.
inline double mode_log_prob(const FittedModel& m, std::size_t k) {
  double acc = 0.0;
  for (double mu : m.mu[k]) acc += log_poisson(static_cast<std::int64_t>(std::floor(mu)), mu);
  return acc;
}

/// Online Viterbi state: log-scores after the last observation plus backpointers.
class Decoder {
 public:
  explicit Decoder(const FittedModel& model) : model_(&model) {
    model.validate();
    const std::size_t K = model.num_states();
    log_trans_.assign(K, std::vector<double>(K));
    for (std::size_t j = 0; j < K; ++j)
      for (std::size_t k = 0; k < K; ++k) log_trans_[j][k] = detail::safe_log(model.transition[j][k]);
    log_init_.resize(K);
    mode_.resize(K);
    for (std::size_t k = 0; k < K; ++k) {
      log_init_[k] = detail::safe_log(model.initial[k]);
      mode_[k] = mode_log_prob(model, k);
    }
  }

  std::size_t steps() const noexcept { return backptr_.size(); }
  std::span<const double> scores() const noexcept { return omega_; }

  void observe(std::span<const std::int64_t> x) {
    const std::size_t K = model_->num_states();
    if (x.size() != model_->dim()) throw ConfigError("observation has wrong dimension");
    std::vector<double> next(K);
    std::vector<std::size_t> back(K, 0);
    for (std::size_t k = 0; k < K; ++k) {
      double best;
      if (omega_.empty()) {
        best = log_init_[k];
      } else {
        best = kNegInf;
        for (std::size_t j = 0; j < K; ++j) {
          const double v = omega_[j] + log_trans_[j][k];
          if (v > best) {
            best = v;
            back[k] = j;
          }
        }
      }
      next[k] = best + emission_log_prob(*model_, k, x);
    }
    omega_ = std::move(next);
    backptr_.push_back(std::move(back));
  }

  /// Scores of each candidate next state with its emission replaced by the
  /// state's modal count vector.
  std::vector<double> next_scores() const {
    const std::size_t K = model_->num_states();
    std::vector<double> out(K);
    for (std::size_t k = 0; k < K; ++k) {
      double best = kNegInf;
      if (omega_.empty()) {
        best = log_init_[k];
      } else {
        for (std::size_t j = 0; j < K; ++j) best = std::max(best, omega_[j] + log_trans_[j][k]);
      }
      out[k] = best + mode_[k];
    }
    return out;
  }

  std::size_t predict_next() const { return detail::argmax_first(next_scores()); }

  /// Most likely state sequence for the observations absorbed so far.
  std::vector<std::size_t> path() const {
    if (omega_.empty()) return {};
    std::vector<std::size_t> out(steps());
    out.back() = detail::argmax_first(omega_);
    for (std::size_t t = steps() - 1; t > 0; --t) out[t - 1] = backptr_[t][out[t]];
    return out;
  }

 private:
  const FittedModel* model_;
  std::vector<std::vector<double>> log_trans_;
  std::vector<double> log_init_;
  std::vector<double> mode_;
  std::vector<double> omega_;
  std::vector<std::vector<std::size_t>> backptr_;
};

inline std::span<const std::uint64_t> predict_blocks(const Decoder& d, const AccessMap& map) {
  return map.lookup(d.predict_next());
}

inline std::vector<std::size_t> viterbi_path(const FittedModel& m, std::span<const CountVector> xs) {
  Decoder d(m);
  for (const auto& x : xs) d.observe(x);
  return d.path();
}

/// Forward-algorithm log-likelihood of a held-out sequence.
inline double heldout_loglik(const FittedModel& m, std::span<const CountVector> xs) {
  m.validate();
  const std::size_t K = m.num_states();
  if (xs.empty()) return 0.0;
  std::vector<double> alpha(K), next(K), terms(K);
  for (std::size_t k = 0; k < K; ++k) alpha[k] = detail::safe_log(m.initial[k]) + emission_log_prob(m, k, xs[0]);
  for (std::size_t t = 1; t < xs.size(); ++t) {
    for (std::size_t k = 0; k < K; ++k) {
      for (std::size_t j = 0; j < K; ++j) terms[j] = alpha[j] + detail::safe_log(m.transition[j][k]);
      next[k] = log_sum_exp(terms) + emission_log_prob(m, k, xs[t]);
    }
    alpha.swap(next);
  }
  return log_sum_exp(alpha);
}

}  // namespace mvpcache

#endif  // MVPCACHE_PREDICTOR_HPP
