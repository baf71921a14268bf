#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "netrb/certification.hpp"
#include "netrb/expression.hpp"
#include "netrb/network.hpp"
#include "netrb/reduction.hpp"
#include "netrb/time_integration.hpp"
#include "netrb/truth_fem.hpp"

namespace netrb {

struct ParameterSampling {
  double min = 0.01;
  double max = 10.0;
  int train_count = 12;
  bool log_spacing = true;
  int test_count = 20;
  std::uint64_t seed = 42;
  std::vector<double> probe{2.3};  // parameters with per-time output
};

/// Initial data as functions of the edge-local coordinate, one per edge id
/// (edges without an entry use `fallback`).
struct InitialField {
  Expression fallback;
  std::map<std::string, Expression> per_edge;
};

struct ExperimentConfig {
  std::filesystem::path source;
  TopologySpec topology;
  EdgeCoefficients coefficients;
  int cells_per_edge = 100;

  SourceAndBoundaryData data;
  InitialField initial_pressure;
  InitialField initial_flux;
  std::string data_fingerprint;  // canonical text of the data and initial blocks

  ParameterSampling parameters;
  SolverSettings solver;
  GreedySettings greedy;
  ConstantsSettings bound;

  std::vector<Eigen::Index> n_grid;  // empty: every enrichment prefix
  bool write_truth_states = true;
  std::filesystem::path output_dir = "out";
  std::filesystem::path truth_cache_dir;  // empty: no disk cache
};

/// Parse a YAML experiment description. Relative paths resolve against
/// `base_dir`. Errors carry `name:line:column`.
ExperimentConfig parse_config(const std::string& text, const std::filesystem::path& base_dir,
                              const std::string& name = "<config>");
ExperimentConfig load_config(const std::filesystem::path& path);

/// Log- or linearly spaced training parameters, endpoints included.
std::vector<double> training_set(const ParameterSampling& s);

/// `test_count` parameters drawn log-uniformly from [min, max].
std::vector<double> test_sample(const ParameterSampling& s, std::uint64_t seed);

}  // namespace netrb
