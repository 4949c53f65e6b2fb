#include <gtest/gtest.h>

#include <filesystem>
#include <sstream>

#include "mvpcache/serialize.hpp"
#include "mvpcache/synth.hpp"

using namespace mvpcache;

namespace {

std::vector<CountVector> data(std::size_t T) {
  Rng rng(12);
  return gen_count_sequence(SequenceSpec::default_recovery(T), rng).counts;
}

TrainedPredictor fitted_predictor() {
  FitConfig cfg;
  cfg.iterations = 10;
  cfg.burn_in = 5;
  const auto r = run_gibbs(data(40), ModelKind::SparseHmmDpMmvp, Hyperparams{}, cfg);
  TrainedPredictor p;
  p.model = estimate_params(std::span<const GibbsState>(&r.samples.back(), 1));
  p.binning.lba_hi = 1 << 20;
  std::vector<std::vector<std::uint64_t>> acc(40);
  for (std::size_t t = 0; t < 40; ++t) acc[t] = {t, t + 100};
  p.access_map = build_access_map(r.samples.back().z, acc);
  return p;
}

}  // namespace

TEST(Artifacts, SequenceRoundTrip) {
  CountVectorSequence seq;
  seq.config.bins = 3;
  seq.config.lba_hi = 999;
  seq.config.count_mode = CountMode::PerBlock;
  seq.first_slice = 7;
  seq.counts = {{1, 0, 2}, {0, 0, 0}};
  seq.accesses = {{3, 9}, {}};
  std::stringstream io;
  write_sequence(io, seq);
  EXPECT_EQ(read_sequence(io), seq);
}

TEST(Artifacts, PredictorRoundTrip) {
  const auto p = fitted_predictor();
  std::stringstream io;
  write_predictor(io, p);
  const auto q = read_predictor(io);
  EXPECT_TRUE(q == p);
  std::stringstream again;
  write_predictor(again, q);
  std::stringstream first;
  write_predictor(first, p);
  EXPECT_EQ(again.str(), first.str());
}

TEST(Artifacts, CheckpointRoundTrip) {
  FitConfig cfg;
  cfg.iterations = 5;
  cfg.burn_in = 1;
  Rng rng(0);
  const auto r = run_gibbs(data(30), ModelKind::SparseHmmDpMmvp, Hyperparams{}, cfg, &rng);
  const auto c = Checkpoint::capture(r.samples.back(), r.sweeps, rng);
  std::stringstream io;
  write_checkpoint(io, c);
  const auto back = read_checkpoint(io);
  EXPECT_TRUE(back.state == c.state);
  EXPECT_EQ(back.sweeps, 5u);
  Rng restored = back.restore_rng();
  EXPECT_EQ(restored(), rng());
}

TEST(Artifacts, ResumedRunMatchesUninterrupted) {
  for (auto kind : {ModelKind::DpMip, ModelKind::HmmDpMmvp, ModelKind::SparseHmmDpMmvp}) {
    FitConfig cfg;
    cfg.iterations = 8;
    cfg.burn_in = 2;
    const auto whole = run_gibbs(data(30), kind, Hyperparams{}, cfg);
    FitConfig head = cfg;
    head.iterations = 3;
    Rng rng(0);
    const auto part = run_gibbs(data(30), kind, Hyperparams{}, head, &rng);
    std::stringstream io;
    write_checkpoint(io, Checkpoint::capture(part.samples.back(), part.sweeps, rng));
    const auto c = read_checkpoint(io);
    Rng resumed = c.restore_rng();
    const auto tail = continue_gibbs(c.state, resumed, cfg, c.sweeps);
    EXPECT_TRUE(tail.samples.back() == whole.samples.back()) << kind_name(kind);
  }
}

TEST(Artifacts, RejectsForeignOrCorruptInput) {
  std::stringstream seq;
  write_sequence(seq, CountVectorSequence{});
  const std::string bytes = seq.str();

  std::stringstream wrong_magic(bytes);
  EXPECT_THROW(read_predictor(wrong_magic), ParseError);

  std::string bumped = bytes;
  bumped[8] = static_cast<char>(bumped[8] + 1);
  std::stringstream wrong_version(bumped);
  EXPECT_THROW(read_sequence(wrong_version), ParseError);

  std::stringstream truncated(bytes.substr(0, bytes.size() - 3));
  EXPECT_THROW(read_sequence(truncated), ParseError);

  std::stringstream empty;
  EXPECT_THROW(read_checkpoint(empty), ParseError);
}

TEST(Artifacts, MissingFileNamesPath) {
  const std::string path = (std::filesystem::temp_directory_path() / "mvpcache-no-such-model.bin").string();
  try {
    load_predictor(path);
    FAIL() << "expected an error";
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find(path), std::string::npos);
  }
}

TEST(Artifacts, FileRoundTrip) {
  const auto dir = std::filesystem::temp_directory_path() / "mvpcache-serialize-test";
  std::filesystem::create_directories(dir);
  const auto p = fitted_predictor();
  const std::string path = (dir / "model.bin").string();
  save_predictor(path, p);
  EXPECT_TRUE(load_predictor(path) == p);
  std::filesystem::remove_all(dir);
}
