#ifndef MVPCACHE_SERIALIZE_HPP
#define MVPCACHE_SERIALIZE_HPP

// Versioned little-endian binary artifacts:
//
//   count-vector sequence  magic "MVPCSEQ\0"
//   trained predictor      magic "MVPCMOD\0"  (FittedModel + AccessMap + binning)
//   sampler checkpoint     magic "MVPCCKP\0"  (GibbsState + sweep count + RNG)
//
// Every file is: magic (8 bytes), format version (u32), payload. Integers are
// fixed-width, doubles are IEEE-754 bit patterns, vectors are a u64 length
// followed by their elements.
//
// Checkpoint payload field order:
//   kind u8, hyperparameters (a_bar b_bar a_hat b_hat a_prime b_prime alpha
//   gamma as f64), MH samples u64, MH flip probability f64, dim u64,
//   T u64, x (T vectors of i64), y (per t: diagonal i64 vector, then
//   off-diagonal count u64 and (key u32, value i64) pairs), z (i32 vector),
//   K u64, per cluster (size i64, sums i64 vector, active u8 vector), beta
//   (f64 vector), tables (i64 vector), sweeps u64, RNG state string.
//   Transition and noise statistics are recomputed on load.

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <type_traits>
#include <vector>

#include "mvpcache/cachesim.hpp"
#include "mvpcache/error.hpp"
#include "mvpcache/gibbs.hpp"
#include "mvpcache/predictor.hpp"
#include "mvpcache/trace.hpp"

namespace mvpcache {

inline constexpr std::uint32_t kFormatVersion = 1;

namespace detail {

template <class T, bool = std::is_enum_v<T>>
struct unsigned_repr {
  using type = std::make_unsigned_t<T>;
};
template <class T>
struct unsigned_repr<T, true> {
  using type = std::make_unsigned_t<std::underlying_type_t<T>>;
};

}  // namespace detail

class BinaryWriter {
 public:
  explicit BinaryWriter(std::ostream& out) : out_(out) {}

  void bytes(const void* p, std::size_t n) { out_.write(static_cast<const char*>(p), static_cast<std::streamsize>(n)); }

  template <class T>
  void scalar(T v) {
    static_assert(std::is_integral_v<T> || std::is_enum_v<T>);
    using U = typename detail::unsigned_repr<T>::type;
    auto u = static_cast<U>(v);
    unsigned char buf[sizeof(U)];
    for (std::size_t i = 0; i < sizeof(U); ++i) buf[i] = static_cast<unsigned char>(u >> (8 * i));
    bytes(buf, sizeof(U));
  }
  void f64(double v) { scalar(std::bit_cast<std::uint64_t>(v)); }
  void u64(std::uint64_t v) { scalar(v); }
  void str(const std::string& s) {
    u64(s.size());
    bytes(s.data(), s.size());
  }
  template <class T>
  void vec(const std::vector<T>& v) {
    u64(v.size());
    for (const auto& e : v) {
      if constexpr (std::is_floating_point_v<T>) f64(e);
      else scalar(e);
    }
  }
  void header(const char (&magic)[9]) {
    bytes(magic, 8);
    scalar(kFormatVersion);
  }

 private:
  std::ostream& out_;
};

class BinaryReader {
 public:
  explicit BinaryReader(std::istream& in) : in_(in) {}

  void bytes(void* p, std::size_t n) {
    in_.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in_.gcount()) != n) throw ParseError(0, "truncated artifact");
  }

  template <class T>
  T scalar() {
    using U = typename detail::unsigned_repr<T>::type;
    unsigned char buf[sizeof(U)];
    bytes(buf, sizeof(U));
    U u = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) u |= static_cast<U>(static_cast<U>(buf[i]) << (8 * i));
    return static_cast<T>(u);
  }
  double f64() { return std::bit_cast<double>(scalar<std::uint64_t>()); }
  std::uint64_t u64() { return scalar<std::uint64_t>(); }
  std::size_t length() {
    const auto n = u64();
    if (n > (std::uint64_t{1} << 40)) throw ParseError(0, "corrupt artifact length");
    return static_cast<std::size_t>(n);
  }
  std::string str() {
    std::string s(length(), '\0');
    bytes(s.data(), s.size());
    return s;
  }
  template <class T>
  std::vector<T> vec() {
    std::vector<T> v(length());
    for (auto& e : v) {
      if constexpr (std::is_floating_point_v<T>) e = f64();
      else e = scalar<T>();
    }
    return v;
  }
  void header(const char (&magic)[9]) {
    char got[8];
    bytes(got, 8);
    if (std::memcmp(got, magic, 8) != 0) throw ParseError(0, "not a " + std::string(magic, 7) + " artifact");
    const auto version = scalar<std::uint32_t>();
    if (version != kFormatVersion)
      throw ParseError(0, "unsupported artifact version " + std::to_string(version));
  }

 private:
  std::istream& in_;
};

inline constexpr char kSequenceMagic[9] = "MVPCSEQ\0";
inline constexpr char kModelMagic[9] = "MVPCMOD\0";
inline constexpr char kCheckpointMagic[9] = "MVPCCKP\0";

namespace detail {

inline void write_binning(BinaryWriter& w, const BinningConfig& c) {
  w.u64(c.bins);
  w.u64(c.lba_lo);
  w.u64(c.lba_hi);
  w.f64(c.slice_secs);
  w.u64(c.block_size);
  w.scalar(c.count_mode);
  w.scalar(static_cast<std::uint8_t>(c.include_writes));
}

inline BinningConfig read_binning(BinaryReader& r) {
  BinningConfig c;
  c.bins = r.u64();
  c.lba_lo = r.u64();
  c.lba_hi = r.u64();
  c.slice_secs = r.f64();
  c.block_size = r.u64();
  c.count_mode = r.scalar<CountMode>();
  c.include_writes = r.scalar<std::uint8_t>() != 0;
  return c;
}

inline void write_hp(BinaryWriter& w, const Hyperparams& hp) {
  for (double v : {hp.a_bar, hp.b_bar, hp.a_hat, hp.b_hat, hp.a_prime, hp.b_prime, hp.alpha, hp.gamma}) w.f64(v);
}

inline Hyperparams read_hp(BinaryReader& r) {
  Hyperparams hp;
  for (double* v : {&hp.a_bar, &hp.b_bar, &hp.a_hat, &hp.b_hat, &hp.a_prime, &hp.b_prime, &hp.alpha, &hp.gamma})
    *v = r.f64();
  return hp;
}

inline ModelKind read_kind(BinaryReader& r) {
  const auto k = r.scalar<std::uint8_t>();
  if (k > static_cast<std::uint8_t>(ModelKind::SparseHmmDpMmvp)) throw ParseError(0, "unknown model kind tag");
  return static_cast<ModelKind>(k);
}

template <class F>
void write_file(const std::string& path, F&& body) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open '" + path + "' for writing");
  body(out);
  out.flush();
  if (!out) throw Error("failed writing '" + path + "'");
}

template <class F>
auto read_file(const std::string& path, F&& body) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open '" + path + "'");
  return body(in);
}

}  // namespace detail

inline void write_sequence(std::ostream& out, const CountVectorSequence& seq) {
  BinaryWriter w(out);
  w.header(kSequenceMagic);
  detail::write_binning(w, seq.config);
  w.u64(seq.first_slice);
  w.u64(seq.counts.size());
  for (const auto& x : seq.counts) w.vec(x);
  w.u64(seq.accesses.size());
  for (const auto& a : seq.accesses) w.vec(a);
}

inline CountVectorSequence read_sequence(std::istream& in) {
  BinaryReader r(in);
  r.header(kSequenceMagic);
  CountVectorSequence seq;
  seq.config = detail::read_binning(r);
  seq.first_slice = r.u64();
  seq.counts.resize(r.length());
  for (auto& x : seq.counts) x = r.vec<std::int64_t>();
  seq.accesses.resize(r.length());
  for (auto& a : seq.accesses) a = r.vec<std::uint64_t>();
  if (seq.counts.size() != seq.accesses.size()) throw ParseError(0, "sequence artifact is inconsistent");
  return seq;
}

inline void write_predictor(std::ostream& out, const TrainedPredictor& p) {
  BinaryWriter w(out);
  w.header(kModelMagic);
  const auto& m = p.model;
  w.scalar(m.kind);
  detail::write_hp(w, m.hp);
  detail::write_binning(w, p.binning);
  w.u64(m.num_states());
  w.u64(m.dim());
  for (std::size_t k = 0; k < m.num_states(); ++k) {
    w.vec(m.params[k].lambda.rates);
    w.vec(m.params[k].noise);
    w.vec(m.params[k].active);
    w.vec(m.transition[k]);
    w.vec(m.mu[k]);
  }
  w.vec(m.initial);
  w.u64(p.access_map.blocks.size());
  for (const auto& [k, blocks] : p.access_map.blocks) {
    w.u64(k);
    w.vec(blocks);
  }
}

inline TrainedPredictor read_predictor(std::istream& in) {
  BinaryReader r(in);
  r.header(kModelMagic);
  TrainedPredictor p;
  auto& m = p.model;
  m.kind = detail::read_kind(r);
  m.hp = detail::read_hp(r);
  p.binning = detail::read_binning(r);
  const std::size_t K = r.length();
  const std::size_t M = r.length();
  for (std::size_t k = 0; k < K; ++k) {
    SMVPParams sp;
    sp.lambda.dim = M;
    sp.lambda.rates = r.vec<double>();
    sp.noise = r.vec<double>();
    sp.active = r.vec<std::uint8_t>();
    m.params.push_back(std::move(sp));
    m.transition.push_back(r.vec<double>());
    m.mu.push_back(r.vec<double>());
  }
  m.initial = r.vec<double>();
  const std::size_t entries = r.length();
  for (std::size_t i = 0; i < entries; ++i) {
    const auto k = r.u64();
    p.access_map.blocks[k] = r.vec<std::uint64_t>();
  }
  try {
    m.validate();
    for (const auto& sp : m.params) sp.validate();
  } catch (const ConfigError& e) {
    throw ParseError(0, std::string("invalid model artifact: ") + e.what());
  }
  return p;
}

struct Checkpoint {
  GibbsState state;
  std::size_t sweeps = 0;
  std::string rng_state;  // textual std::mt19937_64 state

  static Checkpoint capture(const GibbsState& s, std::size_t sweeps, const Rng& rng) {
    std::ostringstream os;
    os << rng;
    return {s, sweeps, os.str()};
  }
  Rng restore_rng() const {
    Rng rng;
    std::istringstream is(rng_state);
    is >> rng;
    if (!is) throw ParseError(0, "corrupt random-number-generator state");
    return rng;
  }
};

inline void write_checkpoint(std::ostream& out, const Checkpoint& c) {
  BinaryWriter w(out);
  w.header(kCheckpointMagic);
  const auto& s = c.state;
  w.scalar(s.kind);
  detail::write_hp(w, s.hp);
  w.u64(s.mh.samples);
  w.f64(s.mh.flip_prob);
  w.u64(s.dim);
  w.u64(s.length());
  for (const auto& x : s.x) w.vec(x);
  for (const auto& y : s.y) {
    w.vec(std::vector<std::int64_t>(y.diagonal().begin(), y.diagonal().end()));
    w.u64(y.off_entries().size());
    for (const auto& [key, v] : y.off_entries()) {
      w.scalar(key);
      w.scalar(v);
    }
  }
  w.vec(s.z);
  w.u64(s.clusters.size());
  for (const auto& cl : s.clusters) {
    w.scalar(cl.size);
    w.vec(cl.sums);
    w.vec(cl.active);
  }
  w.vec(s.beta);
  w.vec(s.tables);
  w.u64(c.sweeps);
  w.str(c.rng_state);
}

inline Checkpoint read_checkpoint(std::istream& in) {
  BinaryReader r(in);
  r.header(kCheckpointMagic);
  Checkpoint c;
  auto& s = c.state;
  s.kind = detail::read_kind(r);
  s.hp = detail::read_hp(r);
  s.mh.samples = r.u64();
  s.mh.flip_prob = r.f64();
  s.dim = r.length();
  const std::size_t T = r.length();
  s.x.resize(T);
  for (auto& x : s.x) x = r.vec<std::int64_t>();
  s.y.reserve(T);
  for (std::size_t t = 0; t < T; ++t) {
    SymCounts y(s.dim);
    const auto diag = r.vec<std::int64_t>();
    if (diag.size() != s.dim) throw ParseError(0, "checkpoint latent matrix has wrong size");
    for (std::size_t j = 0; j < s.dim; ++j) y.set_diag(j, diag[j]);
    const std::size_t n = r.length();
    for (std::size_t i = 0; i < n; ++i) {
      const auto key = r.scalar<std::uint32_t>();
      const auto v = r.scalar<std::int64_t>();
      y.set_off(key / s.dim, key % s.dim, v);
    }
    s.y.push_back(std::move(y));
  }
  s.z = r.vec<int>();
  s.clusters.resize(r.length());
  for (auto& cl : s.clusters) {
    cl.size = r.scalar<std::int64_t>();
    cl.sums = r.vec<std::int64_t>();
    cl.active = r.vec<std::uint8_t>();
  }
  s.beta = r.vec<double>();
  s.tables = r.vec<std::int64_t>();
  c.sweeps = r.u64();
  c.rng_state = r.str();
  s.rebuild_stats();
  if (auto bad = s.check_invariants()) throw ParseError(0, "inconsistent checkpoint: " + *bad);
  return c;
}

inline void save_sequence(const std::string& path, const CountVectorSequence& seq) {
  detail::write_file(path, [&](std::ostream& o) { write_sequence(o, seq); });
}
inline CountVectorSequence load_sequence(const std::string& path) {
  return detail::read_file(path, [](std::istream& i) { return read_sequence(i); });
}
inline void save_predictor(const std::string& path, const TrainedPredictor& p) {
  detail::write_file(path, [&](std::ostream& o) { write_predictor(o, p); });
}
inline TrainedPredictor load_predictor(const std::string& path) {
  return detail::read_file(path, [](std::istream& i) { return read_predictor(i); });
}
inline void save_checkpoint(const std::string& path, const Checkpoint& c) {
  detail::write_file(path, [&](std::ostream& o) { write_checkpoint(o, c); });
}
inline Checkpoint load_checkpoint(const std::string& path) {
  return detail::read_file(path, [](std::istream& i) { return read_checkpoint(i); });
}

}  // namespace mvpcache

#endif  // MVPCACHE_SERIALIZE_HPP
