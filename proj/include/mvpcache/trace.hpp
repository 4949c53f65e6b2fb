#ifndef MVPCACHE_TRACE_HPP
#define MVPCACHE_TRACE_HPP

// Block I/O trace ingestion: CSV parsing, aggregation of requests into
// per-slice count vectors over equal-width LBA bins, and the temporal
// learning/operating split.

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <istream>
#include <limits>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "mvpcache/error.hpp"

namespace mvpcache {

enum class OpType : std::uint8_t { Read = 0, Write = 1 };

struct TraceEvent {
  double timestamp = 0.0;  // seconds since the first request of the trace
  OpType op = OpType::Read;
  std::uint64_t offset = 0;  // bytes
  std::uint64_t size = 0;    // bytes

  bool is_read() const noexcept { return op == OpType::Read; }
  bool operator==(const TraceEvent&) const = default;
};

/// Contiguous run of fixed-size cache blocks covered by a request.
struct BlockRange {
  std::uint64_t first = 0;
  std::uint64_t count = 0;

  std::uint64_t end() const noexcept { return first + count; }
};

inline BlockRange block_range(const TraceEvent& e, std::uint64_t block_size) {
  const std::uint64_t first = e.offset / block_size;
  const std::uint64_t last = (e.offset + e.size - 1) / block_size;
  return {first, last - first + 1};
}

/// Column layout of a CSV trace. Timestamps are multiplied by `ts_scale` to
/// obtain seconds and re-based so the earliest request is at t = 0.
struct TraceFormat {
  std::size_t ts_col = 0;
  std::size_t op_col = 1;
  std::size_t offset_col = 2;
  std::size_t size_col = 3;
  double ts_scale = 1.0;

  /// MSR Cambridge layout: Timestamp,Hostname,DiskNumber,Type,Offset,Size,ResponseTime
  /// with Windows filetime timestamps (100 ns ticks).
  static TraceFormat msr() { return {0, 3, 4, 5, 1e-7}; }

  /// timestamp_seconds,op,offset,size (the layout the synthetic generator writes).
  static TraceFormat simple() { return {0, 1, 2, 3, 1.0}; }

  /// Accepts "msr", "simple", or "custom:ts=0,op=3,offset=4,size=5,scale=1e-7".
  static TraceFormat parse(std::string_view id);
};

namespace detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

inline std::vector<std::string_view> split_csv(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = line.find(',', start);
    if (pos == std::string_view::npos) {
      out.push_back(trim(line.substr(start)));
      break;
    }
    out.push_back(trim(line.substr(start, pos - start)));
    start = pos + 1;
  }
  return out;
}

inline bool parse_u64(std::string_view s, std::uint64_t& out) {
  if (s.empty()) return false;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), out);
  return res.ec == std::errc{} && res.ptr == s.data() + s.size();
}

inline bool parse_long_double(std::string_view s, long double& out) {
  if (s.empty()) return false;
  std::string tmp(s);
  char* end = nullptr;
  out = std::strtold(tmp.c_str(), &end);
  return end == tmp.c_str() + tmp.size() && std::isfinite(static_cast<double>(out));
}

inline std::string lower(std::string_view s) {
  std::string r(s);
  for (auto& c : r) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return r;
}

}  // namespace detail

inline TraceFormat TraceFormat::parse(std::string_view id) {
  const std::string name = detail::lower(detail::trim(id));
  if (name == "msr") return msr();
  if (name == "simple") return simple();
  constexpr std::string_view kCustom = "custom:";
  if (name.rfind(kCustom, 0) != 0) throw ConfigError("unknown trace format '" + std::string(id) + "'");
  TraceFormat f = simple();
  for (auto item : detail::split_csv(std::string_view(name).substr(kCustom.size()))) {
    const auto eq = item.find('=');
    if (eq == std::string_view::npos) throw ConfigError("bad trace format item '" + std::string(item) + "'");
    const auto key = item.substr(0, eq);
    const auto val = item.substr(eq + 1);
    if (key == "scale") {
      long double v = 0;
      if (!detail::parse_long_double(val, v) || v <= 0) throw ConfigError("bad timestamp scale");
      f.ts_scale = static_cast<double>(v);
      continue;
    }
    std::uint64_t col = 0;
    if (!detail::parse_u64(val, col)) throw ConfigError("bad column index for '" + std::string(key) + "'");
    if (key == "ts") f.ts_col = col;
    else if (key == "op") f.op_col = col;
    else if (key == "offset") f.offset_col = col;
    else if (key == "size") f.size_col = col;
    else throw ConfigError("unknown trace format key '" + std::string(key) + "'");
  }
  return f;
}

/// Parses a CSV trace. Blank lines are skipped; a non-numeric timestamp on
/// the first line is treated as a header. Write requests are kept (flagged by
/// `op`); downstream stages decide whether to use them. The result is sorted
/// by timestamp (stable) and re-based to start at zero.
inline std::vector<TraceEvent> parse_trace(std::istream& in, const TraceFormat& fmt) {
  struct Raw {
    long double ts;
    OpType op;
    std::uint64_t offset;
    std::uint64_t size;
  };
  std::vector<Raw> raw;
  std::string line;
  std::size_t lineno = 0;
  const std::size_t needed =
      std::max({fmt.ts_col, fmt.op_col, fmt.offset_col, fmt.size_col}) + 1;
  while (std::getline(in, line)) {
    ++lineno;
    const auto view = detail::trim(line);
    if (view.empty()) continue;
    const auto fields = detail::split_csv(view);
    if (fields.size() < needed) {
      throw ParseError(lineno, "expected at least " + std::to_string(needed) + " columns, got " +
                                   std::to_string(fields.size()));
    }
    long double ts = 0;
    if (!detail::parse_long_double(fields[fmt.ts_col], ts)) {
      if (raw.empty() && lineno == 1) continue;  // header
      throw ParseError(lineno, "bad timestamp '" + std::string(fields[fmt.ts_col]) + "'");
    }
    if (ts < 0) throw ParseError(lineno, "negative timestamp");
    const std::string op = detail::lower(fields[fmt.op_col]);
    OpType type;
    if (op == "read" || op == "r") type = OpType::Read;
    else if (op == "write" || op == "w") type = OpType::Write;
    else throw ParseError(lineno, "bad request type '" + std::string(fields[fmt.op_col]) + "'");
    std::uint64_t offset = 0, size = 0;
    if (!detail::parse_u64(fields[fmt.offset_col], offset))
      throw ParseError(lineno, "bad offset '" + std::string(fields[fmt.offset_col]) + "'");
    if (!detail::parse_u64(fields[fmt.size_col], size))
      throw ParseError(lineno, "bad size '" + std::string(fields[fmt.size_col]) + "'");
    if (size == 0) throw ParseError(lineno, "request size must be positive");
    raw.push_back({ts, type, offset, size});
  }
  if (raw.empty()) throw EmptyInputError("trace contains no requests");

  std::stable_sort(raw.begin(), raw.end(), [](const Raw& a, const Raw& b) { return a.ts < b.ts; });
  const long double origin = raw.front().ts;
  std::vector<TraceEvent> events;
  events.reserve(raw.size());
  for (const auto& r : raw) {
    events.push_back({static_cast<double>((r.ts - origin) * static_cast<long double>(fmt.ts_scale)),
                      r.op, r.offset, r.size});
  }
  return events;
}

inline std::vector<TraceEvent> parse_trace(std::istream& in, std::string_view format_id) {
  return parse_trace(in, TraceFormat::parse(format_id));
}

inline std::vector<TraceEvent> parse_trace_file(const std::string& path, const TraceFormat& fmt) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open trace file '" + path + "'");
  return parse_trace(in, fmt);
}

/// Writes events in the `simple` layout. Timestamps are printed with enough
/// digits to round-trip.
inline void write_trace_csv(std::ostream& out, std::span<const TraceEvent> events) {
  out << "timestamp,op,offset,size\n";
  out.precision(17);
  for (const auto& e : events) {
    out << e.timestamp << ',' << (e.is_read() ? "R" : "W") << ',' << e.offset << ',' << e.size << '\n';
  }
}

inline std::vector<TraceEvent> filter_reads(std::span<const TraceEvent> events) {
  std::vector<TraceEvent> out;
  out.reserve(events.size());
  for (const auto& e : events)
    if (e.is_read()) out.push_back(e);
  return out;
}

/// How a request increments the count vector.
enum class CountMode : std::uint8_t {
  PerRequest = 0,  // one increment, in the bin of the starting offset
  PerBlock = 1,    // one increment per covered block, in that block's bin
};

struct BinningConfig {
  std::size_t bins = 10;
  std::uint64_t lba_lo = 0;  // bytes, inclusive
  std::uint64_t lba_hi = 1;  // bytes, exclusive
  double slice_secs = 30.0;
  std::uint64_t block_size = 4096;
  CountMode count_mode = CountMode::PerRequest;
  bool include_writes = false;

  void validate() const {
    if (bins < 1) throw ConfigError("bin count must be at least 1");
    if (lba_hi <= lba_lo) throw ConfigError("LBA range must be non-empty");
    if (!(slice_secs > 0.0)) throw ConfigError("slice length must be positive");
    if (block_size < 1) throw ConfigError("block size must be positive");
  }

  std::size_t bin_of(std::uint64_t offset) const {
    if (offset <= lba_lo) return 0;
    const unsigned __int128 rel = offset - lba_lo;
    const unsigned __int128 idx = rel * bins / (lba_hi - lba_lo);
    return static_cast<std::size_t>(std::min<unsigned __int128>(idx, bins - 1));
  }

  std::size_t slice_of(double timestamp) const {
    if (timestamp <= 0.0) return 0;
    return static_cast<std::size_t>(std::floor(timestamp / slice_secs));
  }

  bool counts(const TraceEvent& e) const { return include_writes || e.is_read(); }

  bool operator==(const BinningConfig&) const = default;
};

using CountVector = std::vector<std::int64_t>;

/// Aggregated view of a trace: one M-dimensional count vector and one set of
/// touched block ids per time slice. `first_slice` is the absolute slice index
/// of `counts[0]` within the originating trace.
struct CountVectorSequence {
  BinningConfig config;
  std::size_t first_slice = 0;
  std::vector<CountVector> counts;
  std::vector<std::vector<std::uint64_t>> accesses;  // sorted, unique

  std::size_t length() const noexcept { return counts.size(); }
  std::size_t dim() const noexcept { return config.bins; }
  bool operator==(const CountVectorSequence&) const = default;
};

/// Adds one request to a count vector according to the binning rules.
inline void count_event(const BinningConfig& cfg, const TraceEvent& e, std::span<std::int64_t> x) {
  if (cfg.count_mode == CountMode::PerRequest) {
    x[cfg.bin_of(e.offset)] += 1;
    return;
  }
  const auto r = block_range(e, cfg.block_size);
  for (std::uint64_t b = r.first; b < r.end(); ++b) x[cfg.bin_of(b * cfg.block_size)] += 1;
}

/// Aggregates events into slices [first_slice, first_slice + slice_count).
/// Events outside that window are ignored. When `slice_count` is 0 the window
/// extends to the slice of the last event.
inline CountVectorSequence aggregate(std::span<const TraceEvent> events, const BinningConfig& cfg,
                                     std::size_t first_slice = 0, std::size_t slice_count = 0) {
  cfg.validate();
  if (slice_count == 0) {
    std::size_t last = first_slice;
    bool any = false;
    for (const auto& e : events) {
      if (!cfg.counts(e)) continue;
      last = std::max(last, cfg.slice_of(e.timestamp));
      any = true;
    }
    slice_count = any ? last - first_slice + 1 : 0;
  }
  CountVectorSequence seq;
  seq.config = cfg;
  seq.first_slice = first_slice;
  seq.counts.assign(slice_count, CountVector(cfg.bins, 0));
  seq.accesses.assign(slice_count, {});
  for (const auto& e : events) {
    if (!cfg.counts(e)) continue;
    const std::size_t s = cfg.slice_of(e.timestamp);
    if (s < first_slice || s >= first_slice + slice_count) continue;
    const std::size_t t = s - first_slice;
    count_event(cfg, e, seq.counts[t]);
    const auto r = block_range(e, cfg.block_size);
    auto& a = seq.accesses[t];
    for (std::uint64_t b = r.first; b < r.end(); ++b) a.push_back(b);
  }
  for (auto& a : seq.accesses) {
    std::sort(a.begin(), a.end());
    a.erase(std::unique(a.begin(), a.end()), a.end());
  }
  return seq;
}

/// Number of leading slices assigned to the learning phase: ceil(fraction * T),
/// clamped so both phases are non-empty.
inline std::size_t learn_slice_count(std::size_t total, double fraction) {
  if (!(fraction > 0.0 && fraction < 1.0)) throw ConfigError("split fraction must lie in (0, 1)");
  if (total < 2) throw ConfigError("need at least 2 slices to split, got " + std::to_string(total));
  // Guard against 0.9 * 100 = 90.00000000000001 rounding up.
  const double raw = fraction * static_cast<double>(total);
  auto n = static_cast<std::size_t>(std::ceil(raw - 1e-9));
  return std::clamp<std::size_t>(n, 1, total - 1);
}

inline std::pair<CountVectorSequence, CountVectorSequence> split_learn_operate(
    const CountVectorSequence& seq, double fraction) {
  const std::size_t n = learn_slice_count(seq.length(), fraction);
  CountVectorSequence learn, op;
  learn.config = op.config = seq.config;
  learn.first_slice = seq.first_slice;
  op.first_slice = seq.first_slice + n;
  learn.counts.assign(seq.counts.begin(), seq.counts.begin() + static_cast<std::ptrdiff_t>(n));
  op.counts.assign(seq.counts.begin() + static_cast<std::ptrdiff_t>(n), seq.counts.end());
  learn.accesses.assign(seq.accesses.begin(), seq.accesses.begin() + static_cast<std::ptrdiff_t>(n));
  op.accesses.assign(seq.accesses.begin() + static_cast<std::ptrdiff_t>(n), seq.accesses.end());
  return {std::move(learn), std::move(op)};
}

/// Sets the LBA range to [min offset, max offset + 1) over counted events whose
/// slice is below `slice_limit` (all events when no such event exists).
inline void fit_lba_range(std::span<const TraceEvent> events, BinningConfig& cfg,
                          std::size_t slice_limit = std::numeric_limits<std::size_t>::max()) {
  auto scan = [&](bool limited) {
    std::uint64_t lo = std::numeric_limits<std::uint64_t>::max(), hi = 0;
    bool any = false;
    for (const auto& e : events) {
      if (!cfg.counts(e)) continue;
      if (limited && cfg.slice_of(e.timestamp) >= slice_limit) continue;
      lo = std::min(lo, e.offset);
      hi = std::max(hi, e.offset);
      any = true;
    }
    if (any) {
      cfg.lba_lo = lo;
      cfg.lba_hi = hi + 1;
    }
    return any;
  };
  if (!scan(true) && !scan(false)) throw EmptyInputError("no countable requests to derive an LBA range from");
}

/// A trace turned into learning and operating sequences with one consistent
/// binning (LBA range taken from the learning portion).
struct PreparedTrace {
  BinningConfig binning;
  CountVectorSequence full;
  CountVectorSequence learn;
  CountVectorSequence operate;
  std::vector<TraceEvent> learn_events;
  std::vector<TraceEvent> operate_events;
};

/// Runs the aggregation pipeline. `base` supplies M, slice length, block size
/// and count mode; its LBA range is replaced by the learning-phase range.
inline PreparedTrace prepare_trace(std::span<const TraceEvent> events, BinningConfig base,
                                   double split) {
  if (events.empty()) throw EmptyInputError("trace contains no requests");
  std::size_t last = 0;
  bool any = false;
  for (const auto& e : events) {
    if (!base.counts(e)) continue;
    last = std::max(last, static_cast<std::size_t>(std::floor(e.timestamp / base.slice_secs)));
    any = true;
  }
  if (!any) throw EmptyInputError("trace contains no countable requests");
  const std::size_t total = last + 1;
  const std::size_t n_learn = learn_slice_count(total, split);
  fit_lba_range(events, base, n_learn);
  base.validate();

  PreparedTrace p;
  p.binning = base;
  p.full = aggregate(events, base, 0, total);
  auto [learn, op] = split_learn_operate(p.full, split);
  p.learn = std::move(learn);
  p.operate = std::move(op);
  for (const auto& e : events) {
    (base.slice_of(e.timestamp) < n_learn ? p.learn_events : p.operate_events).push_back(e);
  }
  return p;
}

}  // namespace mvpcache

#endif  // MVPCACHE_TRACE_HPP
