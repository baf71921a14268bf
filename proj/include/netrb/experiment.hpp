#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "netrb/config.hpp"
#include "netrb/reduction.hpp"

namespace netrb {

/// Assembled objects shared by all subcommands.
struct Experiment {
  ExperimentConfig config;
  std::shared_ptr<const NetworkGraph> graph;
  std::shared_ptr<const TruthModel> model;
  ReductionProblem problem;
};

/// `homogeneous` drops boundary data and sources (zero-forcing runs).
Experiment build_experiment(ExperimentConfig config, bool homogeneous = false);

/// 64-bit FNV-1a fingerprints, as 16 hex digits.
std::string graph_hash(const NetworkGraph& g);
std::string coefficient_hash(const EdgeCoefficients& c);
/// Everything a truth trajectory depends on except the parameter.
std::string truth_hash(const Experiment& e);

struct BasisFile {
  ReducedBasis basis;
  std::string graph_hash;
  std::string coefficient_hash;
  int cells_per_edge = 0;
  std::vector<double> training_set;
  std::vector<GreedyRecord> history;
  double tolerance = 0.0;
  Eigen::Index n_max = 0;
  bool converged = false;
  std::string stop_reason;
};

void save_basis(const std::filesystem::path& path, const BasisFile& b);
BasisFile load_basis(const std::filesystem::path& path);

/// Throws ConfigError unless the basis was trained on this network,
/// discretization and coefficient set.
void check_basis_matches(const Experiment& e, const BasisFile& b);

/// Shortest round-trip decimal form, used for CSV cells and file names.
std::string format_number(double v);

struct TruthOutput {
  std::filesystem::path energy_csv;
  std::filesystem::path states_csv;  // empty when states are not written
  std::size_t records = 0;
};

TruthOutput run_truth(const Experiment& e, double mu, std::ostream& log);

struct TrainOutput {
  GreedyState state;
  bool stagnated = false;
  std::string message;
  std::filesystem::path basis_path;
  std::filesystem::path history_csv;
};

TrainOutput run_train(const Experiment& e, std::ostream& log);

struct TestOutput {
  std::size_t violations = 0;  // time steps with a bound below the error
  std::size_t tightness_flags = 0;
  std::vector<double> sample;
  std::vector<Eigen::Index> sizes;  // N of every evaluated prefix
};

/// Certifies every prefix in the N-grid over the test sample and the probe
/// parameters. Writes report_N.csv, report_mu.csv, compatibility.csv,
/// tightness.csv, one timeseries CSV per (probe, N) and run_info.json.
TestOutput run_test(const Experiment& e, const std::filesystem::path& basis_path,
                    std::uint64_t seed, std::ostream& log);

/// Figure files from the reports in `dir`: fig2_*.csv from the time series,
/// fig3.csv and fig4.csv from report_N.csv, plus SVG plots when requested.
std::vector<std::filesystem::path> run_plotdata(const std::filesystem::path& dir, bool svg);

/// Stability constants per parameter, written to constants.json; returns the
/// JSON text.
std::string run_constants(const Experiment& e, const std::vector<double>& mus);

}  // namespace netrb
