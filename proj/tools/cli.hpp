#ifndef MVPCACHE_TOOLS_CLI_HPP
#define MVPCACHE_TOOLS_CLI_HPP

// Command-line front end: aggregate, fit, eval, simulate, synth.
// Exit codes: 0 success, 2 configuration error, 3 parse error, 4 runtime error.

#include <cmath>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "mvpcache/mvpcache.hpp"

namespace mvpcache::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitParse = 3;
inline constexpr int kExitRuntime = 4;

struct IngestOptions {
  std::string trace;
  std::string input;  // count-vector artifact, alternative to a trace
  std::string format = "msr";
  std::size_t bins = 10;
  double slice_secs = 30.0;
  std::uint64_t block_size = 4096;
  double split = 0.5;
  std::string count_mode = "request";
  bool include_writes = false;

  BinningConfig binning() const {
    BinningConfig b;
    b.bins = bins;
    b.slice_secs = slice_secs;
    b.block_size = block_size;
    b.include_writes = include_writes;
    if (count_mode == "request") b.count_mode = CountMode::PerRequest;
    else if (count_mode == "block") b.count_mode = CountMode::PerBlock;
    else throw ConfigError("count mode must be 'request' or 'block'");
    return b;
  }
};

struct FitOptions {
  std::string kind = "sparse-hmm-dp-mmvp";
  std::size_t iterations = 500;
  std::size_t burn_in = 100;
  std::size_t thinning = 10;
  double wall_clock_secs = 4.0 * 3600.0;
  std::size_t mh_samples = 20;
  double mh_flip = 0.2;
  std::uint64_t seed = 1;
  std::size_t chains = 1;
  Hyperparams hp;
  std::string model_out = "model.bin";
  std::string diagnostics_out;
  std::string checkpoint_out;
  std::string resume;
};

struct SimOptions {
  std::string model;
  double cache_frac = 0.05;
  std::string preload_log;
  std::string report_out;
  bool empty_map = false;
};

namespace detail {

inline void add_ingest(CLI::App* cmd, IngestOptions& o, bool allow_input) {
  cmd->add_option("--trace", o.trace, "Block I/O trace CSV");
  if (allow_input) cmd->add_option("--input", o.input, "Count-vector artifact written by 'aggregate'");
  cmd->add_option("--format", o.format, "Trace layout: msr, simple or custom:ts=..,op=..,offset=..,size=..,scale=..")
      ->capture_default_str();
  cmd->add_option("--bins", o.bins, "Number of LBA bins (M)")->capture_default_str()->check(CLI::PositiveNumber);
  cmd->add_option("--slice-secs", o.slice_secs, "Slice length in seconds")->capture_default_str();
  cmd->add_option("--block-size", o.block_size, "Cache block size in bytes")->capture_default_str();
  cmd->add_option("--split", o.split, "Fraction of slices used for learning")->capture_default_str();
  cmd->add_option("--count-mode", o.count_mode, "request: one count per request; block: one per covered block")
      ->capture_default_str();
  cmd->add_flag("--include-writes", o.include_writes, "Count write requests as well");
}

/// Learning and operating sequences plus (when a trace was given) the raw events.
struct Loaded {
  BinningConfig binning;
  CountVectorSequence learn;
  CountVectorSequence operate;
  std::optional<PreparedTrace> prepared;
  std::vector<TraceEvent> events;
};

inline Loaded load(const IngestOptions& o) {
  Loaded l;
  if (!o.input.empty()) {
    const auto seq = load_sequence(o.input);
    auto [learn, op] = split_learn_operate(seq, o.split);
    l.binning = seq.config;
    l.learn = std::move(learn);
    l.operate = std::move(op);
    return l;
  }
  if (o.trace.empty()) throw ConfigError("either --trace or --input is required");
  l.events = parse_trace_file(o.trace, TraceFormat::parse(o.format));
  l.prepared = prepare_trace(l.events, o.binning(), o.split);
  l.binning = l.prepared->binning;
  l.learn = l.prepared->learn;
  l.operate = l.prepared->operate;
  return l;
}

inline std::ofstream open_out(const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot open '" + path + "' for writing");
  out.precision(17);
  return out;
}

inline double ratio(double preload, double baseline) {
  if (preload == baseline) return 1.0;
  if (baseline == 0.0) return std::numeric_limits<double>::infinity();
  return preload / baseline;
}

inline void write_diagnostics(const std::string& path, std::span<const DiagnosticRow> rows) {
  auto out = open_out(path);
  out << "sweep,joint_log_density,clusters,wall_clock_secs,y_updates\n";
  for (const auto& r : rows)
    out << r.sweep << ',' << r.joint_log_density << ',' << r.clusters << ',' << r.wall_clock << ',' << r.y_updates
        << '\n';
}

inline TraceSpec trace_spec_from_json(const nlohmann::json& j) {
  TraceSpec s = TraceSpec::default_pattern();
  s.slices = j.value("slices", s.slices);
  s.slice_secs = j.value("slice_secs", s.slice_secs);
  s.block_size = j.value("block_size", s.block_size);
  s.volume_blocks = j.value("volume_blocks", s.volume_blocks);
  s.keep_prob = j.value("keep_prob", s.keep_prob);
  s.noise_rate = j.value("noise_rate", s.noise_rate);
  s.scan_slice = j.value("scan_slice", s.scan_slice);
  s.scan_first_block = j.value("scan_first_block", s.scan_first_block);
  s.scan_blocks = j.value("scan_blocks", s.scan_blocks);
  s.scan_request_blocks = j.value("scan_request_blocks", s.scan_request_blocks);
  if (j.contains("motifs")) {
    s.motifs.clear();
    for (const auto& m : j.at("motifs")) {
      std::vector<std::uint64_t> blocks;
      if (m.is_object()) {
        const auto first = m.at("first").get<std::uint64_t>();
        const auto count = m.at("count").get<std::uint64_t>();
        for (std::uint64_t b = 0; b < count; ++b) blocks.push_back(first + b);
      } else {
        blocks = m.get<std::vector<std::uint64_t>>();
      }
      s.motifs.push_back(std::move(blocks));
    }
    const std::size_t n = s.motifs.size();
    const double advance = j.value("advance_prob", 0.9);
    s.initial.assign(n, 1.0 / static_cast<double>(n));
    s.schedule.assign(n, std::vector<double>(n, (1.0 - advance) / static_cast<double>(n)));
    for (std::size_t i = 0; i < n; ++i) s.schedule[i][(i + 1) % n] += advance;
  }
  if (j.contains("schedule")) s.schedule = j.at("schedule").get<std::vector<std::vector<double>>>();
  if (j.contains("initial")) s.initial = j.at("initial").get<std::vector<double>>();
  s.validate();
  return s;
}

inline SequenceSpec sequence_spec_from_json(const nlohmann::json& j) {
  SequenceSpec s = SequenceSpec::default_recovery(j.value("length", std::size_t{400}));
  if (j.contains("clusters")) {
    const std::size_t M = j.value("dim", std::size_t{10});
    s.clusters.clear();
    for (const auto& c : j.at("clusters")) {
      SMVPParams p;
      p.lambda = MVPParams(M);
      p.noise.assign(M, c.value("noise", 0.05));
      p.active.assign(M, 0);
      const auto active = c.at("active").get<std::vector<std::size_t>>();
      for (auto a : active) {
        if (a >= M) throw ConfigError("active dimension out of range");
        p.active[a] = 1;
      }
      const double diag = c.at("diag").get<double>();
      const double off = c.value("off", diag / 2.0);
      for (auto a : active) {
        p.lambda.set_rate(a, a, diag);
        for (auto b : active)
          if (b > a) p.lambda.set_rate(a, b, off);
      }
      s.clusters.push_back(std::move(p));
    }
    const std::size_t K = s.clusters.size();
    s.initial.assign(K, 1.0 / static_cast<double>(K));
    s.transition = mvpcache::detail::sticky_transitions(K, j.value("self_transition", 0.9));
  } else if (j.contains("self_transition")) {
    s.transition = mvpcache::detail::sticky_transitions(s.num_states(), j.at("self_transition").get<double>());
  }
  s.validate();
  return s;
}

inline nlohmann::json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open '" + path + "'");
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(0, "'" + path + "': " + e.what());
  }
}

}  // namespace detail

inline void cmd_aggregate(const IngestOptions& o, const std::string& out_path, std::ostream& out) {
  if (o.trace.empty()) throw ConfigError("--trace is required");
  const auto events = parse_trace_file(o.trace, TraceFormat::parse(o.format));
  const auto p = prepare_trace(events, o.binning(), o.split);
  save_sequence(out_path, p.full);
  std::size_t nonzero = 0, total = 0;
  for (const auto& x : p.full.counts) {
    for (auto v : x) {
      nonzero += v != 0;
      total += static_cast<std::size_t>(v);
    }
  }
  const double cells = static_cast<double>(p.full.length() * p.full.dim());
  out << "slices," << p.full.length() << "\n"
      << "learn_slices," << p.learn.length() << "\n"
      << "bins," << p.full.dim() << "\n"
      << "lba_range," << p.binning.lba_lo << ',' << p.binning.lba_hi << "\n"
      << "requests_counted," << total << "\n"
      << "nonzero_fraction," << (cells > 0 ? static_cast<double>(nonzero) / cells : 0.0) << "\n";
}

inline void cmd_fit(const IngestOptions& io, const FitOptions& o, std::ostream& out) {
  const auto data = detail::load(io);
  const ModelKind kind = parse_kind(o.kind);
  FitConfig cfg;
  cfg.iterations = o.iterations;
  cfg.burn_in = o.burn_in;
  cfg.thinning = o.thinning;
  cfg.wall_clock_limit = o.wall_clock_secs;
  cfg.mh = {o.mh_samples, o.mh_flip};
  cfg.seed = o.seed;
  cfg.validate();
  o.hp.validate();

  FitResult result;
  Rng rng_end(cfg.seed);
  if (!o.resume.empty()) {
    const auto ckpt = load_checkpoint(o.resume);
    if (ckpt.state.x != data.learn.counts) throw ConfigError("checkpoint was taken on different data");
    if (ckpt.state.kind != kind) throw ConfigError("checkpoint was taken with a different model kind");
    rng_end = ckpt.restore_rng();
    result = continue_gibbs(ckpt.state, rng_end, cfg, ckpt.sweeps);
  } else if (o.chains > 1) {
    auto results = run_chains(data.learn.counts, kind, o.hp, cfg, o.chains);
    const std::size_t best = best_chain(results);
    result = std::move(results[best]);
    out << "best_chain," << best << "\n";
  } else {
    result = run_gibbs(data.learn.counts, kind, o.hp, cfg, &rng_end);
  }

  const GibbsState& final_state = result.samples.back();
  TrainedPredictor p;
  p.model = estimate_params(result.samples);
  p.access_map = build_access_map(final_state.z, data.learn.accesses);
  p.binning = data.binning;
  save_predictor(o.model_out, p);
  if (!o.diagnostics_out.empty()) detail::write_diagnostics(o.diagnostics_out, result.diagnostics);
  if (!o.checkpoint_out.empty() && o.chains <= 1)
    save_checkpoint(o.checkpoint_out, Checkpoint::capture(final_state, result.sweeps, rng_end));
  out << "kind," << kind_name(kind) << "\n"
      << "sweeps," << result.sweeps << "\n"
      << "partial," << (result.partial ? "true" : "false") << "\n"
      << "states," << p.model.num_states() << "\n"
      << "final_joint_log_density," << std::setprecision(17) << final_state.joint_log_density() << "\n";
}

inline void cmd_eval(const IngestOptions& io, const std::vector<std::string>& models, std::ostream& out) {
  if (models.empty()) throw ConfigError("at least one --model is required");
  out << "model,kind,states,heldout_loglik,slices\n";
  out << std::setprecision(17);
  std::optional<std::vector<TraceEvent>> events;
  std::optional<CountVectorSequence> artifact;
  if (!io.input.empty()) artifact = load_sequence(io.input);
  else if (!io.trace.empty()) events = parse_trace_file(io.trace, TraceFormat::parse(io.format));
  else throw ConfigError("either --trace or --input is required");
  for (const auto& path : models) {
    const auto p = load_predictor(path);
    CountVectorSequence seq;
    if (artifact) {
      if (!(artifact->config == p.binning)) throw ConfigError("'" + path + "' was fitted with a different binning");
      seq = *artifact;
    } else {
      std::size_t last = 0;
      for (const auto& e : *events)
        if (p.binning.counts(e)) last = std::max(last, p.binning.slice_of(e.timestamp));
      seq = aggregate(*events, p.binning, 0, last + 1);
    }
    const auto [learn, op] = split_learn_operate(seq, io.split);
    const double ll = heldout_loglik(p.model, op.counts);
    out << path << ',' << kind_name(p.model.kind) << ',' << p.model.num_states() << ',' << ll << ','
        << op.length() << '\n';
  }
}

inline void cmd_simulate(const IngestOptions& io, const SimOptions& o, std::ostream& out) {
  if (io.trace.empty()) throw ConfigError("--trace is required");
  if (o.model.empty()) throw ConfigError("--model is required");
  auto predictor = load_predictor(o.model);
  if (o.empty_map) predictor.access_map = {};
  const auto events = parse_trace_file(io.trace, TraceFormat::parse(io.format));
  const BinningConfig& binning = predictor.binning;
  std::size_t last = 0;
  for (const auto& e : events)
    if (binning.counts(e)) last = std::max(last, binning.slice_of(e.timestamp));
  const std::size_t first_op = learn_slice_count(last + 1, io.split);
  std::vector<TraceEvent> op_events;
  for (const auto& e : events)
    if (binning.slice_of(e.timestamp) >= first_op) op_events.push_back(e);
  const std::size_t capacity = capacity_from_trace(events, o.cache_frac, binning.block_size);
  const auto base = simulate_baseline(op_events, capacity, binning.block_size);
  const auto pre = simulate_preloading(op_events, predictor, binning, capacity, first_op);

  std::ostringstream row;
  row << std::setprecision(17) << io.trace << ',' << capacity << ',' << base.hits << ',' << base.misses << ','
      << base.hitrate() << ',' << pre.hits << ',' << pre.misses << ',' << pre.hitrate() << ','
      << detail::ratio(pre.hitrate(), base.hitrate()) << '\n';
  const std::string header =
      "trace,capacity,baseline_hits,baseline_misses,baseline_hitrate,preload_hits,preload_misses,preload_hitrate,"
      "ratio\n";
  out << header << row.str();
  if (!o.report_out.empty()) {
    auto f = detail::open_out(o.report_out);
    f << header << row.str();
  }
  if (!o.preload_log.empty()) {
    auto f = detail::open_out(o.preload_log);
    f << "slice,predicted_state,blocks\n";
    for (const auto& e : pre.preload_log) f << e.slice << ',' << e.state << ',' << e.blocks << '\n';
  }
}

inline void cmd_synth(const std::string& mode, const std::string& config, std::uint64_t seed,
                      const std::string& out_path, const std::string& truth_path, std::ostream& out) {
  const nlohmann::json j = config.empty() ? nlohmann::json::object() : detail::read_json(config);
  Rng rng(seed);
  if (mode == "trace") {
    const auto spec = detail::trace_spec_from_json(j);
    const auto gen = gen_block_trace(spec, rng);
    auto f = detail::open_out(out_path);
    write_trace_csv(f, gen.events);
    if (!truth_path.empty()) {
      auto t = detail::open_out(truth_path);
      t << "slice,motif\n";
      for (std::size_t s = 0; s < gen.motif_per_slice.size(); ++s) t << s << ',' << gen.motif_per_slice[s] << '\n';
    }
    out << "events," << gen.events.size() << "\nslices," << spec.slices << "\n";
  } else if (mode == "counts") {
    const auto spec = detail::sequence_spec_from_json(j);
    const auto gen = gen_count_sequence(spec, rng);
    CountVectorSequence seq;
    seq.config.bins = spec.dim();
    seq.counts = gen.counts;
    seq.accesses.assign(gen.counts.size(), {});
    save_sequence(out_path, seq);
    if (!truth_path.empty()) {
      auto t = detail::open_out(truth_path);
      t << "slice,state\n";
      for (std::size_t s = 0; s < gen.states.size(); ++s) t << s << ',' << gen.states[s] << '\n';
    }
    out << "slices," << gen.counts.size() << "\nbins," << spec.dim() << "\n";
  } else {
    throw ConfigError("synth mode must be 'trace' or 'counts'");
  }
}

/// Parses arguments and runs one subcommand.
inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Block I/O workload mining and cache preloading with sparse Poisson mixtures"};
  app.set_config("--config", "", "Read options from a TOML/INI file");
  app.require_subcommand(1);

  IngestOptions ingest;
  FitOptions fit;
  SimOptions sim;
  std::string out_path;
  std::vector<std::string> models;
  std::string synth_mode = "trace", synth_config, truth_path;
  std::uint64_t synth_seed = 1;

  auto* agg = app.add_subcommand("aggregate", "Aggregate a trace into a count-vector artifact");
  detail::add_ingest(agg, ingest, false);
  agg->add_option("--out", out_path, "Artifact path")->required();

  auto* fitc = app.add_subcommand("fit", "Fit a model on the learning portion and export it");
  detail::add_ingest(fitc, ingest, true);
  fitc->add_option("--kind", fit.kind, "Model kind")
      ->capture_default_str()
      ->check(CLI::IsMember({"dp-mip", "dp-mmvp", "sparse-dp-mmvp", "hmm-dp-mip", "hmm-dp-mmvp",
                             "sparse-hmm-dp-mmvp"}));
  fitc->add_option("--iters", fit.iterations, "Total sweeps")->capture_default_str();
  fitc->add_option("--burn-in", fit.burn_in, "Burn-in sweeps")->capture_default_str();
  fitc->add_option("--thin", fit.thinning, "Keep every n-th post burn-in sweep")->capture_default_str();
  fitc->add_option("--wall-clock-secs", fit.wall_clock_secs, "Wall-clock cap in seconds")->capture_default_str();
  fitc->add_option("--mh-samples", fit.mh_samples, "MH draws for the new-cluster activity marginal")
      ->capture_default_str();
  fitc->add_option("--mh-flip", fit.mh_flip, "MH per-dimension flip probability")->capture_default_str();
  fitc->add_option("--seed", fit.seed, "Random seed")->capture_default_str();
  fitc->add_option("--chains", fit.chains, "Independent chains run in parallel")->capture_default_str();
  fitc->add_option("--a-bar", fit.hp.a_bar, "Gamma shape of active rates")->capture_default_str();
  fitc->add_option("--b-bar", fit.hp.b_bar, "Gamma rate of active rates")->capture_default_str();
  fitc->add_option("--a-hat", fit.hp.a_hat, "Gamma shape of noise rates")->capture_default_str();
  fitc->add_option("--b-hat", fit.hp.b_hat, "Gamma rate of noise rates")->capture_default_str();
  fitc->add_option("--a-prime", fit.hp.a_prime, "Beta prior on activity")->capture_default_str();
  fitc->add_option("--b-prime", fit.hp.b_prime, "Beta prior on inactivity")->capture_default_str();
  fitc->add_option("--alpha", fit.hp.alpha, "DP concentration")->capture_default_str();
  fitc->add_option("--gamma", fit.hp.gamma, "Top-level concentration")->capture_default_str();
  fitc->add_option("--model", fit.model_out, "Output model file")->capture_default_str();
  fitc->add_option("--diagnostics", fit.diagnostics_out, "Per-sweep diagnostics CSV");
  fitc->add_option("--checkpoint", fit.checkpoint_out, "Write the final sampler state");
  fitc->add_option("--resume", fit.resume, "Continue from a checkpoint up to --iters sweeps");

  auto* evalc = app.add_subcommand("eval", "Held-out log-likelihood of fitted models");
  detail::add_ingest(evalc, ingest, true);
  evalc->add_option("--model", models, "Model file (repeatable)")->required();

  auto* simc = app.add_subcommand("simulate", "Replay the operating phase with and without preloading");
  detail::add_ingest(simc, ingest, false);
  simc->add_option("--model", sim.model, "Model file")->required();
  simc->add_option("--cache-frac", sim.cache_frac, "Cache size as a fraction of distinct blocks")
      ->capture_default_str();
  simc->add_option("--preload-log", sim.preload_log, "Per-slice preload CSV");
  simc->add_option("--report", sim.report_out, "Comparison CSV");
  simc->add_flag("--empty-map", sim.empty_map, "Disable preloading by clearing the access map");

  auto* sync = app.add_subcommand("synth", "Generate synthetic traces or count sequences");
  sync->add_option("--mode", synth_mode, "trace or counts")->capture_default_str();
  sync->add_option("--spec", synth_config, "JSON generator spec (defaults when omitted)");
  sync->add_option("--seed", synth_seed, "Random seed")->capture_default_str();
  sync->add_option("--out", out_path, "Output path")->required();
  sync->add_option("--truth", truth_path, "Ground-truth labels CSV");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp& e) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kExitConfig;
  }

  try {
    if (*agg) cmd_aggregate(ingest, out_path, out);
    else if (*fitc) cmd_fit(ingest, fit, out);
    else if (*evalc) cmd_eval(ingest, models, out);
    else if (*simc) cmd_simulate(ingest, sim, out);
    else if (*sync) cmd_synth(synth_mode, synth_config, synth_seed, out_path, truth_path, out);
  } catch (const ConfigError& e) {
    err << "configuration error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const ParseError& e) {
    err << "parse error: " << e.what() << "\n";
    return kExitParse;
  } catch (const EmptyInputError& e) {
    err << "parse error: " << e.what() << "\n";
    return kExitParse;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitOk;
}

}  // namespace mvpcache::cli

#endif  // MVPCACHE_TOOLS_CLI_HPP
