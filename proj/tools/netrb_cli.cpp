// Experiment driver: truth runs, greedy training, certified testing,
// figure data and stability constants.
#include <cstdint>
#include <iostream>
#include <optional>

#include <CLI11.hpp>

#include "netrb/config.hpp"
#include "netrb/error.hpp"
#include "netrb/experiment.hpp"

namespace {

constexpr int kConfigFailure = 1;
constexpr int kNumericalFailure = 2;
constexpr int kRigorViolation = 3;

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Certified reduced basis experiments for damped waves on networks"};
  app.require_subcommand(1);

  std::string config_path;
  std::optional<double> mu;
  std::string basis_path;
  std::optional<std::uint64_t> seed;
  bool svg = false;
  bool zero_boundary = false;

  auto* truth = app.add_subcommand("truth", "integrate the truth model at one parameter");
  truth->add_option("--config", config_path, "experiment file")->required();
  truth->add_option("--mu", mu, "damping parameter")->required();
  truth->add_flag("--zero-boundary", zero_boundary, "drop boundary data and sources");

  auto* train = app.add_subcommand("train", "run the greedy training and store the basis");
  train->add_option("--config", config_path, "experiment file")->required();

  auto* test = app.add_subcommand("test", "certify stored basis prefixes over the test sample");
  test->add_option("--config", config_path, "experiment file")->required();
  test->add_option("--basis", basis_path, "basis file (default: <output_dir>/basis.json)");
  test->add_option("--seed", seed, "test sample seed (default: from the experiment file)");

  auto* plot = app.add_subcommand("plotdata", "write figure files from the test reports");
  plot->add_option("--config", config_path, "experiment file")->required();
  plot->add_flag("--svg", svg, "also write SVG line plots");

  auto* constants = app.add_subcommand("constants", "print stability constants");
  constants->add_option("--config", config_path, "experiment file")->required();
  constants->add_option("--mu", mu, "single parameter (default: training set and probes)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kConfigFailure;
  }

  try {
    netrb::ExperimentConfig cfg = netrb::load_config(config_path);
    if (*truth) {
      const netrb::Experiment e = netrb::build_experiment(std::move(cfg), zero_boundary);
      const auto out = netrb::run_truth(e, *mu, std::cerr);
      std::cout << out.energy_csv.string() << '\n';
      if (!out.states_csv.empty()) std::cout << out.states_csv.string() << '\n';
    } else if (*train) {
      const netrb::Experiment e = netrb::build_experiment(std::move(cfg));
      const auto out = netrb::run_train(e, std::cerr);
      std::cout << out.basis_path.string() << '\n' << out.history_csv.string() << '\n';
      if (out.stagnated) {
        std::cerr << "error: " << out.message << '\n';
        return kNumericalFailure;
      }
    } else if (*test) {
      const netrb::Experiment e = netrb::build_experiment(std::move(cfg));
      const auto path = basis_path.empty() ? e.config.output_dir / "basis.json" : std::filesystem::path(basis_path);
      const auto out = netrb::run_test(e, path, seed.value_or(e.config.parameters.seed), std::cerr);
      if (out.violations > 0) {
        std::cerr << "error: " << out.violations << " time steps with a bound below the true error\n";
        return kRigorViolation;
      }
    } else if (*plot) {
      for (const auto& p : netrb::run_plotdata(cfg.output_dir, svg)) std::cout << p.string() << '\n';
    } else if (*constants) {
      const netrb::Experiment e = netrb::build_experiment(std::move(cfg));
      std::vector<double> mus;
      if (mu) {
        mus.push_back(*mu);
      } else {
        mus = netrb::training_set(e.config.parameters);
        mus.insert(mus.end(), e.config.parameters.probe.begin(), e.config.parameters.probe.end());
      }
      std::cout << netrb::run_constants(e, mus) << '\n';
    }
  } catch (const netrb::ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kConfigFailure;
  } catch (const netrb::IoError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kConfigFailure;
  } catch (const netrb::NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return kNumericalFailure;
  }
  return 0;
}
