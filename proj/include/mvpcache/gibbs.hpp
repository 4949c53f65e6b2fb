#ifndef MVPCACHE_GIBBS_HPP
#define MVPCACHE_GIBBS_HPP

// Collapsed Gibbs sampling for the six mixture variants:
//
//   DP-MIP, DP-MMVP, Sparse-DP-MMVP            (exchangeable, CRP prior)
//   HMM-DP-MIP, HMM-DP-MMVP, Sparse-HMM-DP-MMVP (HDP-HMM, direct assignment)
//
// Rates (Lambda, noise rates), the activity prior eta and the transition rows
// are integrated out. The sampled variables are the assignments Z, the latent
// symmetric count matrices Y_t (X_t = Y_t 1), the activity indicators b (sparse
// variants), and the global weights beta with their auxiliary table counts m.
//
// Cluster statistics are integer sums of Y, so incrementally maintained
// statistics can be compared exactly against a full recount.

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <thread>
#include <utility>
#include <vector>

#include "mvpcache/count_models.hpp"
#include "mvpcache/error.hpp"
#include "mvpcache/random.hpp"
#include "mvpcache/trace.hpp"

namespace mvpcache {

enum class ModelKind : std::uint8_t {
  DpMip = 0,
  DpMmvp = 1,
  SparseDpMmvp = 2,
  HmmDpMip = 3,
  HmmDpMmvp = 4,
  SparseHmmDpMmvp = 5,
};

inline constexpr std::array<ModelKind, 6> kAllKinds = {
    ModelKind::DpMip,    ModelKind::DpMmvp,    ModelKind::SparseDpMmvp,
    ModelKind::HmmDpMip, ModelKind::HmmDpMmvp, ModelKind::SparseHmmDpMmvp};

struct KindTraits {
  bool temporal;     // HDP-HMM prior over Z instead of CRP
  bool sparse;       // per-cluster activity indicators with shared noise rates
  bool independent;  // diagonal Lambda (no off-diagonal Y)
};

constexpr KindTraits traits_of(ModelKind k) {
  switch (k) {
    case ModelKind::DpMip: return {false, false, true};
    case ModelKind::DpMmvp: return {false, false, false};
    case ModelKind::SparseDpMmvp: return {false, true, false};
    case ModelKind::HmmDpMip: return {true, false, true};
    case ModelKind::HmmDpMmvp: return {true, false, false};
    case ModelKind::SparseHmmDpMmvp: return {true, true, false};
  }
  return {false, false, false};
}

constexpr std::string_view kind_name(ModelKind k) {
  switch (k) {
    case ModelKind::DpMip: return "dp-mip";
    case ModelKind::DpMmvp: return "dp-mmvp";
    case ModelKind::SparseDpMmvp: return "sparse-dp-mmvp";
    case ModelKind::HmmDpMip: return "hmm-dp-mip";
    case ModelKind::HmmDpMmvp: return "hmm-dp-mmvp";
    case ModelKind::SparseHmmDpMmvp: return "sparse-hmm-dp-mmvp";
  }
  return "unknown";
}

inline ModelKind parse_kind(std::string_view name) {
  const std::string n = detail::lower(name);
  for (auto k : kAllKinds)
    if (kind_name(k) == n) return k;
  throw ConfigError("unknown model kind '" + std::string(name) + "'");
}

/// Symmetric non-negative integer matrix: dense diagonal plus a sorted list of
/// non-zero upper off-diagonal entries keyed by j * dim + l (j < l).
class SymCounts {
 public:
  using Entry = std::pair<std::uint32_t, std::int64_t>;

  SymCounts() = default;
  explicit SymCounts(std::size_t dim) : dim_(dim), diag_(dim, 0) {}

  std::size_t dim() const noexcept { return dim_; }
  std::int64_t diag(std::size_t j) const { return diag_[j]; }
  void set_diag(std::size_t j, std::int64_t v) { diag_[j] = v; }

  std::int64_t off(std::size_t j, std::size_t l) const {
    const auto key = make_key(j, l);
    const auto it = find(key);
    return (it != off_.end() && it->first == key) ? it->second : 0;
  }

  void set_off(std::size_t j, std::size_t l, std::int64_t v) {
    const auto key = make_key(j, l);
    auto it = std::lower_bound(off_.begin(), off_.end(), key,
                               [](const Entry& e, std::uint32_t k) { return e.first < k; });
    const bool present = it != off_.end() && it->first == key;
    if (v == 0) {
      if (present) off_.erase(it);
    } else if (present) {
      it->second = v;
    } else {
      off_.insert(it, {key, v});
    }
  }

  std::int64_t get(std::size_t j, std::size_t l) const { return j == l ? diag_[j] : off(j, l); }

  std::int64_t row_sum(std::size_t j) const {
    std::int64_t s = diag_[j];
    for (const auto& [key, v] : off_)
      if (key / dim_ == j || key % dim_ == j) s += v;
    return s;
  }

  std::span<const Entry> off_entries() const { return off_; }
  std::span<const std::int64_t> diagonal() const { return diag_; }

  std::pair<std::size_t, std::size_t> unpack(std::uint32_t key) const { return {key / dim_, key % dim_}; }

  /// Moves the mass of every off-diagonal entry whose pair is not active onto
  /// both diagonals, preserving row sums.
  void project(std::span<const std::uint8_t> active) {
    auto keep = off_.begin();
    for (auto it = off_.begin(); it != off_.end(); ++it) {
      const auto [j, l] = unpack(it->first);
      if (active[j] && active[l]) {
        *keep++ = *it;
      } else {
        diag_[j] += it->second;
        diag_[l] += it->second;
      }
    }
    off_.erase(keep, off_.end());
  }

  bool operator==(const SymCounts&) const = default;

 private:
  std::uint32_t make_key(std::size_t j, std::size_t l) const {
    if (j > l) std::swap(j, l);
    return static_cast<std::uint32_t>(j * dim_ + l);
  }
  std::vector<Entry>::const_iterator find(std::uint32_t key) const {
    return std::lower_bound(off_.begin(), off_.end(), key,
                            [](const Entry& e, std::uint32_t k) { return e.first < k; });
  }

  std::size_t dim_ = 0;
  std::vector<std::int64_t> diag_;
  std::vector<Entry> off_;
};

struct Cluster {
  std::int64_t size = 0;
  std::vector<std::int64_t> sums;     // sum of Y over members, TriIndex layout
  std::vector<std::uint8_t> active;   // b_k (all ones for non-sparse kinds)

  bool operator==(const Cluster&) const = default;
};

/// Metropolis-Hastings settings for the new-cluster activity marginal.
struct MhSettings {
  std::size_t samples = 20;
  double flip_prob = 0.2;
  bool operator==(const MhSettings&) const = default;
};

/// log Gamma-Poisson marginal of a pair's counts, normalised so that an empty
/// pair contributes 0: log_F(S, n) - log_F(0, 0) without the factorial term.
struct PairMarginal {
  double shape;
  double rate;
  double base;

  PairMarginal(double a, double b) : shape(a), rate(b), base(std::lgamma(a) - a * std::log(b)) {}

  double operator()(std::int64_t sum, std::int64_t n) const {
    const double s = shape + static_cast<double>(sum);
    return std::lgamma(s) - s * std::log(rate + static_cast<double>(n)) - base;
  }
};

/// Full sampler state. Public data, with bookkeeping helpers that keep the
/// sufficient statistics consistent with (Z, Y, b).
class GibbsState {
 public:
  ModelKind kind = ModelKind::SparseHmmDpMmvp;
  Hyperparams hp;
  MhSettings mh;
  std::size_t dim = 0;

  std::vector<CountVector> x;  // observed counts, T x M
  std::vector<SymCounts> y;    // latent Y_t, row sums equal x[t]
  std::vector<int> z;          // assignment, -1 while a point is being resampled
  std::vector<Cluster> clusters;
  std::vector<double> beta;            // K + 1 weights, last is the unused remainder
  std::vector<std::int64_t> tables;    // auxiliary m_k
  std::vector<std::vector<std::int64_t>> trans;  // n_{k,l}: transitions t -> t+1
  std::vector<std::int64_t> trans_out;           // row sums of trans
  std::vector<std::int64_t> noise_sum;           // S_hat_j
  std::vector<std::int64_t> noise_n;             // n_hat_j

  KindTraits traits() const { return traits_of(kind); }
  std::size_t length() const { return x.size(); }
  std::size_t num_clusters() const { return clusters.size(); }
  TriIndex tri() const { return TriIndex(dim); }

  /// One cluster holding every point, Y diagonal, and (sparse kinds) b_j = 1
  /// where the empirical mean of bin j exceeds `activity_threshold`.
  static GibbsState initial(std::vector<CountVector> data, ModelKind kind, const Hyperparams& hp,
                            const MhSettings& mh = {}, double activity_threshold = 0.1) {
    if (data.empty()) throw ConfigError("cannot fit an empty sequence");
    hp.validate();
    GibbsState s;
    s.kind = kind;
    s.hp = hp;
    s.mh = mh;
    s.dim = data.front().size();
    if (s.dim == 0) throw ConfigError("count vectors must have at least one dimension");
    for (const auto& v : data) {
      if (v.size() != s.dim) throw ConfigError("count vectors have inconsistent dimension");
      for (auto c : v)
        if (c < 0) throw ConfigError("counts must be non-negative");
    }
    s.x = std::move(data);
    s.y.reserve(s.length());
    for (const auto& v : s.x) {
      SymCounts yt(s.dim);
      for (std::size_t j = 0; j < s.dim; ++j) yt.set_diag(j, v[j]);
      s.y.push_back(std::move(yt));
    }
    s.z.assign(s.length(), 0);
    Cluster c;
    c.active.assign(s.dim, 1);
    if (s.traits().sparse) {
      for (std::size_t j = 0; j < s.dim; ++j) {
        double mean = 0.0;
        for (const auto& v : s.x) mean += static_cast<double>(v[j]);
        mean /= static_cast<double>(s.length());
        c.active[j] = mean > activity_threshold ? 1 : 0;
      }
    }
    s.clusters.push_back(std::move(c));
    s.beta = {0.5, 0.5};
    s.tables = {0};
    s.rebuild_stats();
    return s;
  }

  /// State from an explicit configuration. `y_init` may be empty (diagonal Y);
  /// `activity` holds b_k per cluster (ignored, i.e. all ones, for non-sparse
  /// kinds); `beta_init` may be empty (uniform). Y is projected onto each
  /// point's cluster activity.
  static GibbsState from_assignment(std::vector<CountVector> data, ModelKind kind, const Hyperparams& hp,
                                    std::vector<int> z_init, std::vector<std::vector<std::uint8_t>> activity,
                                    std::vector<SymCounts> y_init = {}, std::vector<double> beta_init = {},
                                    const MhSettings& mh = {}) {
    GibbsState s = initial(std::move(data), kind, hp, mh);
    if (z_init.size() != s.length()) throw ConfigError("assignment length mismatch");
    const int k_max = *std::max_element(z_init.begin(), z_init.end());
    const std::size_t k_count = static_cast<std::size_t>(k_max) + 1;
    std::vector<bool> used(k_count, false);
    for (int k : z_init) {
      if (k < 0) throw ConfigError("assignments must be non-negative");
      used[static_cast<std::size_t>(k)] = true;
    }
    if (std::find(used.begin(), used.end(), false) != used.end())
      throw ConfigError("cluster labels must be contiguous and non-empty");
    s.z = std::move(z_init);
    s.clusters.assign(k_count, Cluster{});
    for (std::size_t k = 0; k < k_count; ++k) {
      if (s.traits().sparse && k < activity.size()) {
        if (activity[k].size() != s.dim) throw ConfigError("activity vector has wrong size");
        s.clusters[k].active = activity[k];
      } else {
        s.clusters[k].active.assign(s.dim, 1);
      }
    }
    if (!y_init.empty()) {
      if (y_init.size() != s.length()) throw ConfigError("latent matrix count mismatch");
      s.y = std::move(y_init);
    }
    for (std::size_t t = 0; t < s.length(); ++t) {
      if (s.traits().independent) s.y[t].project(std::vector<std::uint8_t>(s.dim, 0));
      else s.y[t].project(s.clusters[static_cast<std::size_t>(s.z[t])].active);
    }
    if (beta_init.empty()) beta_init.assign(k_count + 1, 1.0 / static_cast<double>(k_count + 1));
    if (beta_init.size() != k_count + 1) throw ConfigError("beta must have K + 1 entries");
    s.beta = std::move(beta_init);
    s.tables.assign(k_count, 0);
    s.rebuild_stats();
    return s;
  }

  bool pair_active(std::size_t k, std::size_t j, std::size_t l) const {
    if (traits().independent && j != l) return false;
    const auto& a = clusters[k].active;
    return a[j] && a[l];
  }

  /// Recomputes every sufficient statistic from (Z, Y, b).
  void rebuild_stats() {
    const std::size_t K = clusters.size();
    const TriIndex idx = tri();
    for (auto& c : clusters) {
      c.size = 0;
      c.sums.assign(idx.size(), 0);
      if (c.active.size() != dim) c.active.assign(dim, 1);
    }
    noise_sum.assign(dim, 0);
    noise_n.assign(dim, 0);
    trans.assign(K, std::vector<std::int64_t>(K, 0));
    trans_out.assign(K, 0);
    for (std::size_t t = 0; t < length(); ++t) {
      if (z[t] < 0) continue;
      auto& c = clusters[static_cast<std::size_t>(z[t])];
      c.size += 1;
      for (std::size_t j = 0; j < dim; ++j) c.sums[idx(j, j)] += y[t].diag(j);
      for (const auto& [key, v] : y[t].off_entries()) {
        const auto [j, l] = y[t].unpack(key);
        c.sums[idx(j, l)] += v;
      }
      if (traits().sparse) {
        for (std::size_t j = 0; j < dim; ++j) {
          if (c.active[j]) continue;
          noise_sum[j] += y[t].diag(j);
          noise_n[j] += 1;
        }
      }
      if (traits().temporal && t + 1 < length() && z[t + 1] >= 0) {
        trans[static_cast<std::size_t>(z[t])][static_cast<std::size_t>(z[t + 1])] += 1;
        trans_out[static_cast<std::size_t>(z[t])] += 1;
      }
    }
    if (tables.size() != K) tables.resize(K, 0);
  }

  /// Removes point t from its cluster's statistics; z[t] becomes -1.
  void remove_point(std::size_t t) {
    const int k = z[t];
    if (k < 0) return;
    update_point(t, static_cast<std::size_t>(k), -1);
    z[t] = -1;
  }

  /// Assigns an unassigned point t to cluster k, projecting Y_t onto b_k.
  void add_point(std::size_t t, std::size_t k) {
    if (traits().sparse) y[t].project(clusters[k].active);
    z[t] = static_cast<int>(k);
    update_point(t, k, +1);
  }

  /// Deletes an empty cluster; its weight returns to the remainder and labels
  /// above k shift down by one.
  void delete_cluster(std::size_t k) {
    beta.back() += beta[k];
    beta.erase(beta.begin() + static_cast<std::ptrdiff_t>(k));
    clusters.erase(clusters.begin() + static_cast<std::ptrdiff_t>(k));
    tables.erase(tables.begin() + static_cast<std::ptrdiff_t>(k));
    trans.erase(trans.begin() + static_cast<std::ptrdiff_t>(k));
    for (auto& row : trans) row.erase(row.begin() + static_cast<std::ptrdiff_t>(k));
    trans_out.erase(trans_out.begin() + static_cast<std::ptrdiff_t>(k));
    for (auto& label : z)
      if (label > static_cast<int>(k)) --label;
  }

  /// Appends an empty cluster with activity b, splitting the remainder weight
  /// with a Beta(1, gamma) stick-breaking draw. Returns its index.
  std::size_t new_cluster(std::vector<std::uint8_t> b, Rng& rng) {
    Cluster c;
    c.sums.assign(tri().size(), 0);
    c.active = std::move(b);
    clusters.push_back(std::move(c));
    const double rem = beta.back();
    const double v = draw_beta(1.0, hp.gamma, rng);
    beta.back() = v * rem;
    beta.push_back(rem - v * rem);
    tables.push_back(0);
    for (auto& row : trans) row.push_back(0);
    trans.emplace_back(clusters.size(), 0);
    trans_out.push_back(0);
    return clusters.size() - 1;
  }

  /// Collapsed log p(Y | Z, b) over assigned points, with each pair marginal
  /// normalised by its empty-cluster value.
  double log_likelihood() const {
    const PairMarginal g(hp.a_bar, hp.b_bar);
    const PairMarginal gh(hp.a_hat, hp.b_hat);
    const TriIndex idx = tri();
    double acc = 0.0;
    for (std::size_t k = 0; k < clusters.size(); ++k) {
      const auto& c = clusters[k];
      for (std::size_t j = 0; j < dim; ++j)
        for (std::size_t l = j; l < dim; ++l)
          if (pair_active(k, j, l)) acc += g(c.sums[idx(j, l)], c.size);
    }
    if (traits().sparse)
      for (std::size_t j = 0; j < dim; ++j) acc += gh(noise_sum[j], noise_n[j]);
    for (std::size_t t = 0; t < length(); ++t) {
      if (z[t] < 0) continue;
      for (auto v : y[t].diagonal()) acc -= std::lgamma(static_cast<double>(v) + 1.0);
      for (const auto& [key, v] : y[t].off_entries()) acc -= std::lgamma(static_cast<double>(v) + 1.0);
    }
    return acc;
  }

  /// log p(Z | beta): CRP for exchangeable kinds; for temporal kinds the
  /// first state is drawn from beta and transition rows are collapsed
  /// DP(alpha, beta) draws.
  double log_assignment_prior() const {
    const double a = hp.alpha;
    if (!traits().temporal) {
      double n_total = 0.0;
      double acc = static_cast<double>(clusters.size()) * std::log(a);
      for (const auto& c : clusters) {
        acc += std::lgamma(static_cast<double>(c.size));
        n_total += static_cast<double>(c.size);
      }
      return acc + std::lgamma(a) - std::lgamma(a + n_total);
    }
    double acc = z.empty() || z.front() < 0 ? 0.0 : std::log(beta[static_cast<std::size_t>(z.front())]);
    for (std::size_t j = 0; j < clusters.size(); ++j) {
      if (trans_out[j] == 0) continue;
      acc += std::lgamma(a) - std::lgamma(a + static_cast<double>(trans_out[j]));
      for (std::size_t k = 0; k < clusters.size(); ++k) {
        const auto n = trans[j][k];
        if (n == 0) continue;
        acc += std::lgamma(a * beta[k] + static_cast<double>(n)) - std::lgamma(a * beta[k]);
      }
    }
    return acc;
  }

  /// Beta-Bernoulli marginal of the activity indicators (eta collapsed).
  double log_activity_prior() const {
    if (!traits().sparse) return 0.0;
    const double ap = hp.a_prime, bp = hp.b_prime;
    const double K = static_cast<double>(clusters.size());
    auto lbeta = [](double a, double b) { return std::lgamma(a) + std::lgamma(b) - std::lgamma(a + b); };
    double acc = 0.0;
    for (std::size_t j = 0; j < dim; ++j) {
      double c = 0.0;
      for (const auto& cl : clusters) c += cl.active[j];
      acc += lbeta(c + ap, K - c + bp) - lbeta(ap, bp);
    }
    return acc;
  }

  double joint_log_density() const { return log_likelihood() + log_assignment_prior() + log_activity_prior(); }

  /// Returns a description of the first violated structural invariant.
  std::optional<std::string> check_invariants() const {
    const std::size_t K = clusters.size();
    if (y.size() != length() || z.size() != length()) return "state arrays have inconsistent length";
    for (std::size_t t = 0; t < length(); ++t) {
      if (z[t] < 0 || static_cast<std::size_t>(z[t]) >= K) return "point " + std::to_string(t) + " has invalid label";
      for (std::size_t j = 0; j < dim; ++j) {
        if (y[t].diag(j) < 0) return "negative diagonal at t=" + std::to_string(t);
        if (y[t].row_sum(j) != x[t][j])
          return "row-sum violated at t=" + std::to_string(t) + " j=" + std::to_string(j);
      }
      for (const auto& [key, v] : y[t].off_entries()) {
        const auto [j, l] = y[t].unpack(key);
        if (v <= 0 || j >= l) return "malformed off-diagonal entry at t=" + std::to_string(t);
        if (!pair_active(static_cast<std::size_t>(z[t]), j, l))
          return "off-diagonal mass on an inactive pair at t=" + std::to_string(t);
      }
    }
    for (std::size_t k = 0; k < K; ++k)
      if (clusters[k].size <= 0) return "empty cluster " + std::to_string(k);
    if (beta.size() != K + 1) return "beta has wrong length";
    if (tables.size() != K) return "table counts have wrong length";
    double total = 0.0;
    for (double b : beta) {
      if (!(b >= 0.0)) return "negative beta weight";
      total += b;
    }
    if (std::abs(total - 1.0) > 1e-12) return "beta does not sum to one";
    GibbsState fresh = *this;
    fresh.rebuild_stats();
    for (std::size_t k = 0; k < K; ++k) {
      if (fresh.clusters[k].size != clusters[k].size) return "cluster size drift in cluster " + std::to_string(k);
      if (fresh.clusters[k].sums != clusters[k].sums) return "pair-sum drift in cluster " + std::to_string(k);
    }
    if (fresh.noise_sum != noise_sum || fresh.noise_n != noise_n) return "noise statistic drift";
    if (fresh.trans != trans || fresh.trans_out != trans_out) return "transition count drift";
    return std::nullopt;
  }

  bool operator==(const GibbsState&) const = default;

 private:
  void update_point(std::size_t t, std::size_t k, int sign) {
    auto& c = clusters[k];
    const TriIndex idx = tri();
    c.size += sign;
    for (std::size_t j = 0; j < dim; ++j) c.sums[idx(j, j)] += sign * y[t].diag(j);
    for (const auto& [key, v] : y[t].off_entries()) {
      const auto [j, l] = y[t].unpack(key);
      c.sums[idx(j, l)] += sign * v;
    }
    if (traits().sparse) {
      for (std::size_t j = 0; j < dim; ++j) {
        if (c.active[j]) continue;
        noise_sum[j] += sign * y[t].diag(j);
        noise_n[j] += sign;
      }
    }
    if (!traits().temporal) return;
    if (t > 0 && z[t - 1] >= 0) {
      const auto p = static_cast<std::size_t>(z[t - 1]);
      trans[p][k] += sign;
      trans_out[p] += sign;
    }
    if (t + 1 < length() && z[t + 1] >= 0) {
      const auto n = static_cast<std::size_t>(z[t + 1]);
      trans[k][n] += sign;
      trans_out[k] += sign;
    }
  }
};

namespace detail {

/// Change in the collapsed log-likelihood from adding point t (currently
/// unassigned) to a cluster with statistics (`sums`, `n`) and activity
/// `active`; `sums == nullptr` means an empty cluster. Y_t is taken as its
/// projection onto `active`.
inline double assign_log_lik(const GibbsState& s, std::size_t t, const std::int64_t* sums, std::int64_t n,
                             std::span<const std::uint8_t> active) {
  const std::size_t M = s.dim;
  const TriIndex idx(M);
  const auto& yt = s.y[t];
  const auto& xt = s.x[t];
  const double a = s.hp.a_bar;
  const double nd = static_cast<double>(n);
  const double log_old = std::log(s.hp.b_bar + nd);
  const double log_new = std::log(s.hp.b_bar + nd + 1.0);
  const double dlog = log_new - log_old;
  auto S = [&](std::size_t i) { return sums ? static_cast<double>(sums[i]) : 0.0; };
  const bool independent = s.traits().independent;

  thread_local std::vector<std::int64_t> diag;
  diag.assign(xt.begin(), xt.end());
  double acc = 0.0;
  if (!independent) {
    for (const auto& [key, v] : yt.off_entries()) {
      const auto [j, l] = yt.unpack(key);
      if (!(active[j] && active[l])) continue;  // projected onto the diagonals
      diag[j] -= v;
      diag[l] -= v;
      const double sjl = S(idx(j, l));
      const double vd = static_cast<double>(v);
      acc += std::lgamma(a + sjl + vd) - std::lgamma(a + sjl) - vd * log_new - std::lgamma(vd + 1.0);
    }
    double pair_mass = 0.0;
    for (std::size_t j = 0; j < M; ++j) {
      if (!active[j]) continue;
      for (std::size_t l = j + 1; l < M; ++l)
        if (active[l]) pair_mass += a + S(idx(j, l));
    }
    acc -= pair_mass * dlog;
  }
  const PairMarginal gh(s.hp.a_hat, s.hp.b_hat);
  for (std::size_t j = 0; j < M; ++j) {
    if (active[j]) {
      const double sjj = S(idx(j, j));
      const double v = static_cast<double>(diag[j]);
      acc += std::lgamma(a + sjj + v) - std::lgamma(a + sjj) - v * log_new - (a + sjj) * dlog -
             std::lgamma(v + 1.0);
    } else {
      const auto v = xt[j];
      acc += gh(s.noise_sum[j] + v, s.noise_n[j] + 1) - gh(s.noise_sum[j], s.noise_n[j]) -
             std::lgamma(static_cast<double>(v) + 1.0);
    }
  }
  return acc;
}

}  // namespace detail

/// Log-likelihood change of assigning unassigned point t to existing cluster k.
/// Only pairs active under b_k contribute Gamma-Poisson factors; inactive
/// diagonals (sparse kinds) update the shared noise factor.
inline double f_existing(const GibbsState& s, std::size_t t, std::size_t k) {
  const auto& c = s.clusters[k];
  return detail::assign_log_lik(s, t, c.sums.data(), c.size, c.active);
}

/// Log-likelihood of unassigned point t opening a cluster with activity b.
inline double f_new_given(const GibbsState& s, std::size_t t, std::span<const std::uint8_t> b) {
  return detail::assign_log_lik(s, t, nullptr, 0, b);
}

/// Prior probability that a new cluster activates each dimension, given the
/// activity of the K existing clusters (Beta-Bernoulli predictive).
inline std::vector<double> new_activity_probs(const GibbsState& s) {
  const double K = static_cast<double>(s.clusters.size());
  std::vector<double> q(s.dim, 0.0);
  for (std::size_t j = 0; j < s.dim; ++j) {
    double c = 0.0;
    for (const auto& cl : s.clusters) c += cl.active[j];
    q[j] = (c + s.hp.a_prime) / (K + s.hp.a_prime + s.hp.b_prime);
  }
  return q;
}

struct NewClusterEstimate {
  double log_mean = kNegInf;                      // log of the averaged likelihood
  std::vector<std::vector<std::uint8_t>> draws;   // chain states, one per sample
  std::vector<double> log_h;                      // log-likelihood of each draw
};

/// Monte-Carlo marginal of the new-cluster likelihood over its unknown
/// activity vector. A Metropolis-Hastings chain targets the Beta-Bernoulli
/// predictive p(b | existing b), starts at `b_init` (the activity of the
/// point's previous cluster) and proposes independent per-coordinate flips
/// with probability `mh.flip_prob`; `mh.samples` chain states are averaged.
inline NewClusterEstimate f_new_sparse(const GibbsState& s, std::size_t t, std::span<const std::uint8_t> b_init,
                                       const MhSettings& mh, Rng& rng) {
  const std::size_t M = s.dim;
  const auto q = new_activity_probs(s);
  std::vector<double> lq1(M), lq0(M);
  for (std::size_t j = 0; j < M; ++j) {
    lq1[j] = std::log(q[j]);
    lq0[j] = std::log1p(-q[j]);
  }
  auto log_target = [&](const std::vector<std::uint8_t>& b) {
    double acc = 0.0;
    for (std::size_t j = 0; j < M; ++j) acc += b[j] ? lq1[j] : lq0[j];
    return acc;
  };
  std::vector<std::uint8_t> cur(b_init.begin(), b_init.end());
  double lp = log_target(cur);
  double h = f_new_given(s, t, cur);
  NewClusterEstimate est;
  const std::size_t n = std::max<std::size_t>(mh.samples, 1);
  est.draws.reserve(n);
  est.log_h.reserve(n);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::vector<std::uint8_t> prop;
  for (std::size_t i = 0; i < n; ++i) {
    prop = cur;
    bool moved = false;
    if (mh.flip_prob > 0.0) {
      for (std::size_t j = 0; j < M; ++j) {
        if (unif(rng) < mh.flip_prob) {
          prop[j] ^= 1;
          moved = true;
        }
      }
    }
    if (moved) {
      const double lp_prop = log_target(prop);
      if (std::log(unif(rng)) < lp_prop - lp) {
        cur.swap(prop);
        lp = lp_prop;
        h = f_new_given(s, t, cur);
      }
    }
    est.draws.push_back(cur);
    est.log_h.push_back(h);
  }
  est.log_mean = log_sum_exp(est.log_h) - std::log(static_cast<double>(n));
  return est;
}

namespace detail {

template <class LogPrior>
void resample_assignment(GibbsState& s, std::size_t t, Rng& rng, LogPrior&& log_prior) {
  const KindTraits tr = s.traits();
  const auto old = static_cast<std::size_t>(s.z[t]);
  const std::vector<std::uint8_t> b_old = s.clusters[old].active;
  s.remove_point(t);
  if (s.clusters[old].size == 0) s.delete_cluster(old);

  const std::size_t K = s.clusters.size();
  thread_local std::vector<double> logw;
  logw.assign(K + 1, 0.0);
  for (std::size_t k = 0; k < K; ++k) logw[k] = log_prior(k) + f_existing(s, t, k);
  NewClusterEstimate est;
  std::vector<std::uint8_t> all_active(s.dim, 1);
  if (tr.sparse) {
    est = f_new_sparse(s, t, b_old, s.mh, rng);
    logw[K] = log_prior(K) + est.log_mean;
  } else {
    logw[K] = log_prior(K) + f_new_given(s, t, all_active);
  }
  std::size_t pick = sample_log_categorical(logw, rng);
  if (pick == K) {
    std::vector<std::uint8_t> b = all_active;
    if (tr.sparse) b = est.draws[sample_log_categorical(est.log_h, rng)];
    pick = s.new_cluster(std::move(b), rng);
  }
  s.add_point(t, pick);
}

}  // namespace detail

/// Resamples Z_t under the CRP prior: existing k with weight n_k^{-t} f_k,
/// a new cluster with weight alpha f_new.
inline void sample_z_dp(GibbsState& s, std::size_t t, Rng& rng) {
  const double log_alpha = std::log(s.hp.alpha);
  detail::resample_assignment(s, t, rng, [&](std::size_t k) {
    return k < s.clusters.size() ? std::log(static_cast<double>(s.clusters[k].size)) : log_alpha;
  });
}

/// Resamples Z_t under the HDP-HMM direct-assignment prior with transition
/// rows collapsed. Both the incoming edge (from Z_{t-1}) and the outgoing edge
/// (to Z_{t+1}) enter the weight; the first point uses beta as its initial
/// distribution and the last point has no outgoing edge.
inline void sample_z_hdp(GibbsState& s, std::size_t t, Rng& rng) {
  const double a = s.hp.alpha;
  const bool has_prev = t > 0;
  const bool has_next = t + 1 < s.length();
  detail::resample_assignment(s, t, rng, [&](std::size_t k) {
    const std::size_t K = s.clusters.size();
    const auto prev = has_prev ? static_cast<std::size_t>(s.z[t - 1]) : K;
    const auto next = has_next ? static_cast<std::size_t>(s.z[t + 1]) : K;
    if (k == K) {
      double w = has_prev ? a * s.beta[K] : s.beta[K];
      if (has_next) w *= s.beta[next];
      return std::log(w);
    }
    const double in = has_prev ? static_cast<double>(s.trans[prev][k]) + a * s.beta[k] : s.beta[k];
    double out = 1.0;
    if (has_next) {
      const double self_in = (has_prev && prev == k) ? 1.0 : 0.0;
      const double loop = (self_in > 0.0 && k == next) ? 1.0 : 0.0;
      out = (static_cast<double>(s.trans[k][next]) + a * s.beta[next] + loop) /
            (static_cast<double>(s.trans_out[k]) + a + self_in);
    }
    return std::log(in) + std::log(out);
  });
}

inline void sample_z(GibbsState& s, std::size_t t, Rng& rng) {
  if (s.traits().temporal) sample_z_hdp(s, t, rng);
  else sample_z_dp(s, t, rng);
}

/// Resamples the off-diagonal Y_{t,j,l} (j < l) of an active pair. The support
/// is every value that keeps both diagonals Y_{t,j,j}, Y_{t,l,l} non-negative;
/// the diagonals absorb the difference so row sums are preserved. Does nothing
/// when the pair is inactive for the point's cluster.
inline void sample_y(GibbsState& s, std::size_t t, std::size_t j, std::size_t l, Rng& rng) {
  if (j == l) return;
  if (j > l) std::swap(j, l);
  const auto k = static_cast<std::size_t>(s.z[t]);
  if (!s.pair_active(k, j, l)) return;
  auto& yt = s.y[t];
  auto& c = s.clusters[k];
  const TriIndex idx = s.tri();
  const std::int64_t cur = yt.off(j, l);
  const std::int64_t dj = yt.diag(j), dl = yt.diag(l);
  const std::int64_t top = cur + std::min(dj, dl);
  if (top == 0) return;
  const double s_jl = static_cast<double>(c.sums[idx(j, l)] - cur);
  const double s_jj = static_cast<double>(c.sums[idx(j, j)] - dj);
  const double s_ll = static_cast<double>(c.sums[idx(l, l)] - dl);
  const double a = s.hp.a_bar;
  const double log_rate = std::log(s.hp.b_bar + static_cast<double>(c.size));
  thread_local std::vector<double> logw;
  logw.resize(static_cast<std::size_t>(top) + 1);
  for (std::int64_t v = 0; v <= top; ++v) {
    const double vd = static_cast<double>(v);
    const double wj = static_cast<double>(dj + cur - v);
    const double wl = static_cast<double>(dl + cur - v);
    logw[static_cast<std::size_t>(v)] = std::lgamma(a + s_jl + vd) + std::lgamma(a + s_jj + wj) +
                                        std::lgamma(a + s_ll + wl) - (vd + wj + wl) * log_rate -
                                        std::lgamma(vd + 1.0) - std::lgamma(wj + 1.0) - std::lgamma(wl + 1.0);
  }
  const auto v = static_cast<std::int64_t>(sample_log_categorical(logw, rng));
  const std::int64_t new_dj = dj + cur - v, new_dl = dl + cur - v;
  yt.set_off(j, l, v);
  yt.set_diag(j, new_dj);
  yt.set_diag(l, new_dl);
  c.sums[idx(j, l)] += v - cur;
  c.sums[idx(j, j)] += new_dj - dj;
  c.sums[idx(l, l)] += new_dl - dl;
}

/// Members of cluster k in increasing order.
inline std::vector<std::size_t> cluster_members(const GibbsState& s, std::size_t k) {
  std::vector<std::size_t> out;
  for (std::size_t t = 0; t < s.length(); ++t)
    if (s.z[t] == static_cast<int>(k)) out.push_back(t);
  return out;
}

/// Log-weights (b = 0, b = 1) of the two-way conditional for b_{k,j}. Turning a
/// dimension off moves each member's off-diagonal mass in row j onto the
/// diagonals (the alternative configuration is evaluated on that projection).
inline std::array<double, 2> b_conditional(const GibbsState& s, std::size_t k, std::size_t j,
                                           std::span<const std::size_t> members) {
  const auto& c = s.clusters[k];
  const TriIndex idx = s.tri();
  const PairMarginal g(s.hp.a_bar, s.hp.b_bar);
  const PairMarginal gh(s.hp.a_hat, s.hp.b_hat);
  const std::int64_t n = c.size;
  double others = 0.0;
  for (std::size_t q = 0; q < s.clusters.size(); ++q)
    if (q != k) others += s.clusters[q].active[j];
  const double K = static_cast<double>(s.clusters.size());
  const double prior1 = std::log(others + s.hp.a_prime);
  const double prior0 = std::log(K - 1.0 - others + s.hp.b_prime);

  if (c.active[j]) {
    double on = g(c.sums[idx(j, j)], n) + gh(s.noise_sum[j], s.noise_n[j]);
    double off = 0.0;
    for (std::size_t l = 0; l < s.dim; ++l) {
      if (l == j || !c.active[l]) continue;
      const std::int64_t moved = c.sums[idx(j, l)];
      on += g(moved, n) + g(c.sums[idx(l, l)], n);
      off += g(c.sums[idx(l, l)] + moved, n);
    }
    // Row j of every member folds onto the diagonals.
    std::int64_t diag_total = 0;
    double dfact = 0.0;
    for (std::size_t t : members) {
      const auto& yt = s.y[t];
      std::int64_t dj = yt.diag(j);
      for (const auto& [key, v] : yt.off_entries()) {
        const auto [a, b] = yt.unpack(key);
        if (a != j && b != j) continue;
        const std::size_t l = a == j ? b : a;
        const double dl = static_cast<double>(yt.diag(l));
        const double vd = static_cast<double>(v);
        dfact += std::lgamma(dl + vd + 1.0) - std::lgamma(dl + 1.0) - std::lgamma(vd + 1.0);
        dj += v;
      }
      dfact += std::lgamma(static_cast<double>(dj) + 1.0) - std::lgamma(static_cast<double>(yt.diag(j)) + 1.0);
      diag_total += dj;
    }
    off += gh(s.noise_sum[j] + diag_total, s.noise_n[j] + n) - dfact;
    return {prior0 + off, prior1 + on};
  }
  const std::int64_t sjj = c.sums[idx(j, j)];
  const double off = gh(s.noise_sum[j], s.noise_n[j]);
  double on = g(sjj, n) + gh(s.noise_sum[j] - sjj, s.noise_n[j] - n);
  for (std::size_t l = 0; l < s.dim; ++l)
    if (l != j && c.active[l]) on += g(c.sums[idx(j, l)], n);
  return {prior0 + off, prior1 + on};
}

/// Sets b_{k,j}, re-projecting member Y matrices and moving statistics
/// between the cluster and the shared noise factor.
inline void set_activity(GibbsState& s, std::size_t k, std::size_t j, bool value,
                         std::span<const std::size_t> members) {
  auto& c = s.clusters[k];
  if (static_cast<bool>(c.active[j]) == value) return;
  const TriIndex idx = s.tri();
  if (!value) {
    c.active[j] = 0;
    for (std::size_t t : members) {
      auto& yt = s.y[t];
      for (const auto& [key, v] : std::vector<SymCounts::Entry>(yt.off_entries().begin(), yt.off_entries().end())) {
        const auto [a, b] = yt.unpack(key);
        if (a != j && b != j) continue;
        const std::size_t l = a == j ? b : a;
        c.sums[idx(a, b)] -= v;
        c.sums[idx(j, j)] += v;
        c.sums[idx(l, l)] += v;
      }
      yt.project(c.active);
    }
    s.noise_sum[j] += c.sums[idx(j, j)];
    s.noise_n[j] += c.size;
  } else {
    c.active[j] = 1;
    s.noise_sum[j] -= c.sums[idx(j, j)];
    s.noise_n[j] -= c.size;
  }
}

inline void sample_b(GibbsState& s, std::size_t k, std::size_t j, Rng& rng, std::span<const std::size_t> members) {
  if (!s.traits().sparse) return;
  const auto w = b_conditional(s, k, j, members);
  const std::size_t pick = sample_log_categorical(w, rng);
  set_activity(s, k, j, pick == 1, members);
}

inline void sample_b(GibbsState& s, std::size_t k, std::size_t j, Rng& rng) {
  const auto members = cluster_members(s, k);
  sample_b(s, k, j, rng, members);
}

/// Number of occupied tables when n customers enter a Chinese restaurant with
/// concentration c: sum over i = 1..n of Bernoulli(c / (i - 1 + c)).
inline std::int64_t sample_table_count(std::int64_t n, double concentration, Rng& rng) {
  std::int64_t m = 0;
  for (std::int64_t i = 1; i <= n; ++i) {
    const double p = concentration / (static_cast<double>(i - 1) + concentration);
    if (draw_bernoulli(p, rng)) ++m;
  }
  return m;
}

/// Auxiliary table counts then beta ~ Dir(m_1, ..., m_K, gamma). Temporal
/// kinds sum per-source table counts over the transition counts into k and
/// add the initial-state observation; exchangeable kinds use cluster sizes.
inline void sample_m_beta(GibbsState& s, Rng& rng) {
  const std::size_t K = s.clusters.size();
  if (K == 0) return;
  const double a = s.hp.alpha;
  s.tables.assign(K, 0);
  std::vector<double> weights(K + 1, 0.0);
  for (std::size_t k = 0; k < K; ++k) {
    const double c = a * s.beta[k];
    if (s.traits().temporal) {
      for (std::size_t j = 0; j < K; ++j) s.tables[k] += sample_table_count(s.trans[j][k], c, rng);
    } else {
      s.tables[k] = sample_table_count(s.clusters[k].size, c, rng);
    }
  }
  double total = 0.0;
  for (std::size_t k = 0; k < K; ++k) {
    double shape = static_cast<double>(s.tables[k]);
    if (s.traits().temporal && s.z.front() == static_cast<int>(k)) shape += 1.0;
    weights[k] = draw_gamma(shape, rng);
    total += weights[k];
  }
  weights[K] = draw_gamma(s.hp.gamma, rng);
  total += weights[K];
  if (!(total > 0.0)) {
    weights.assign(K + 1, 1.0);
    total = static_cast<double>(K + 1);
  }
  for (auto& w : weights) w /= total;
  s.beta = std::move(weights);
}

enum class UpdateKind : std::uint8_t { Z, Y, B, Beta };

struct SweepCounts {
  std::size_t z_updates = 0;
  std::size_t y_updates = 0;
  std::size_t b_updates = 0;
};

using UpdateObserver = std::function<void(const GibbsState&, UpdateKind)>;

/// One full sweep: for each t, Z_t then the active off-diagonal Y_t entries in
/// (j, l) lexicographic order; then every b_{k,j} (sparse kinds); then m and
/// beta. `observer`, when set, runs after every individual update.
inline SweepCounts sweep(GibbsState& s, Rng& rng, const UpdateObserver& observer = {}) {
  SweepCounts counts;
  const KindTraits tr = s.traits();
  for (std::size_t t = 0; t < s.length(); ++t) {
    sample_z(s, t, rng);
    ++counts.z_updates;
    if (observer) observer(s, UpdateKind::Z);
    if (tr.independent) continue;
    const auto k = static_cast<std::size_t>(s.z[t]);
    const auto& active = s.clusters[k].active;
    for (std::size_t j = 0; j < s.dim; ++j) {
      if (!active[j]) continue;
      for (std::size_t l = j + 1; l < s.dim; ++l) {
        if (!active[l]) continue;
        sample_y(s, t, j, l, rng);
        ++counts.y_updates;
        if (observer) observer(s, UpdateKind::Y);
      }
    }
  }
  if (tr.sparse) {
    std::vector<std::vector<std::size_t>> members(s.clusters.size());
    for (std::size_t t = 0; t < s.length(); ++t) members[static_cast<std::size_t>(s.z[t])].push_back(t);
    for (std::size_t j = 0; j < s.dim; ++j) {
      for (std::size_t k = 0; k < s.clusters.size(); ++k) {
        sample_b(s, k, j, rng, members[k]);
        ++counts.b_updates;
        if (observer) observer(s, UpdateKind::B);
      }
    }
  }
  sample_m_beta(s, rng);
  if (observer) observer(s, UpdateKind::Beta);
  return counts;
}

struct FitConfig {
  std::size_t iterations = 500;
  std::size_t burn_in = 100;
  std::size_t thinning = 10;
  double wall_clock_limit = 4.0 * 3600.0;  // seconds
  MhSettings mh;
  std::uint64_t seed = 1;
  double activity_threshold = 0.1;
  // Y-only passes over the initial single cluster before the first sweep, so
  // every point carries off-diagonal mass consistent with the others when Z
  // is first resampled.
  std::size_t y_warmup_passes = 5;

  void validate() const {
    if (iterations <= burn_in) throw ConfigError("iterations must exceed burn-in");
    if (thinning < 1) throw ConfigError("thinning must be at least 1");
    if (mh.samples < 1) throw ConfigError("MH sample count must be at least 1");
    if (!(mh.flip_prob > 0.0 && mh.flip_prob < 1.0)) throw ConfigError("MH flip probability must lie in (0, 1)");
    if (!(wall_clock_limit > 0.0)) throw ConfigError("wall-clock limit must be positive");
  }
};

struct DiagnosticRow {
  std::size_t sweep = 0;
  double joint_log_density = 0.0;
  std::size_t clusters = 0;
  double wall_clock = 0.0;  // seconds since the fit started
  std::size_t y_updates = 0;
};

struct FitResult {
  std::vector<GibbsState> samples;  // post burn-in, thinned; last entry is the final state
  GibbsState map_state;             // highest joint density visited after burn-in
  std::vector<DiagnosticRow> diagnostics;
  std::size_t sweeps = 0;
  bool partial = false;  // wall-clock limit hit before burn-in finished
};

/// Resamples every active off-diagonal Y entry once, in sweep order.
inline std::size_t sample_all_y(GibbsState& s, Rng& rng) {
  if (s.traits().independent) return 0;
  std::size_t n = 0;
  for (std::size_t t = 0; t < s.length(); ++t) {
    const auto& active = s.clusters[static_cast<std::size_t>(s.z[t])].active;
    for (std::size_t j = 0; j < s.dim; ++j) {
      if (!active[j]) continue;
      for (std::size_t l = j + 1; l < s.dim; ++l) {
        if (!active[l]) continue;
        sample_y(s, t, j, l, rng);
        ++n;
      }
    }
  }
  return n;
}

/// Continues a chain from `s` for sweeps start_sweep + 1 .. cfg.iterations.
/// Burn-in and thinning refer to absolute sweep numbers.
inline FitResult continue_gibbs(GibbsState s, Rng& rng, const FitConfig& cfg, std::size_t start_sweep = 0) {
  cfg.validate();
  using Clock = std::chrono::steady_clock;
  const auto start = Clock::now();
  FitResult out;
  double best = kNegInf;
  for (std::size_t it = start_sweep; it < cfg.iterations; ++it) {
    const auto counts = sweep(s, rng);
    const double elapsed = std::chrono::duration<double>(Clock::now() - start).count();
    const double joint = s.joint_log_density();
    out.diagnostics.push_back({it + 1, joint, s.num_clusters(), elapsed, counts.y_updates});
    out.sweeps = it + 1;
    if (it >= cfg.burn_in) {
      if (joint > best || out.samples.empty()) {
        best = joint;
        out.map_state = s;
      }
      if ((it - cfg.burn_in) % cfg.thinning == 0) out.samples.push_back(s);
    }
    if (elapsed >= cfg.wall_clock_limit) {
      out.partial = it < cfg.burn_in;
      break;
    }
  }
  out.sweeps = std::max(out.sweeps, start_sweep);
  if (out.samples.empty() || !(out.samples.back() == s)) out.samples.push_back(s);
  if (best == kNegInf) out.map_state = s;
  return out;
}

inline FitResult run_gibbs(const std::vector<CountVector>& data, ModelKind kind, const Hyperparams& hp,
                           const FitConfig& cfg, Rng* rng_out = nullptr) {
  cfg.validate();
  hp.validate();
  Rng rng(cfg.seed);
  GibbsState s = GibbsState::initial(data, kind, hp, cfg.mh, cfg.activity_threshold);
  for (std::size_t i = 0; i < cfg.y_warmup_passes; ++i) sample_all_y(s, rng);
  auto out = continue_gibbs(std::move(s), rng, cfg);
  if (rng_out) *rng_out = rng;
  return out;
}

inline FitResult run_gibbs(const CountVectorSequence& data, ModelKind kind, const Hyperparams& hp,
                           const FitConfig& cfg) {
  return run_gibbs(data.counts, kind, hp, cfg);
}

/// Runs independent chains on separate threads (seeds seed, seed + 1, ...)
/// and returns them in seed order.
inline std::vector<FitResult> run_chains(const std::vector<CountVector>& data, ModelKind kind,
                                         const Hyperparams& hp, const FitConfig& cfg, std::size_t chains) {
  chains = std::max<std::size_t>(chains, 1);
  std::vector<FitResult> results(chains);
  if (chains == 1) {
    results[0] = run_gibbs(data, kind, hp, cfg);
    return results;
  }
  std::vector<std::exception_ptr> errors(chains);
  std::vector<std::thread> workers;
  for (std::size_t c = 0; c < chains; ++c) {
    workers.emplace_back([&, c] {
      try {
        FitConfig local = cfg;
        local.seed = cfg.seed + c;
        results[c] = run_gibbs(data, kind, hp, local);
      } catch (...) {
        errors[c] = std::current_exception();
      }
    });
  }
  for (auto& w : workers) w.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return results;
}

/// Index of the chain whose final state has the highest joint density.
inline std::size_t best_chain(std::span<const FitResult> results) {
  std::size_t best = 0;
  double best_value = kNegInf;
  for (std::size_t i = 0; i < results.size(); ++i) {
    const double v = results[i].samples.back().joint_log_density();
    if (v > best_value) {
      best_value = v;
      best = i;
    }
  }
  return best;
}

}  // namespace mvpcache

#endif  // MVPCACHE_GIBBS_HPP
