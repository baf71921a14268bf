#include <algorithm>
#include <cmath>
#include <filesystem>
#include <set>

#include "cli_support.hpp"
#include "doctest.h"
#include "netrb/config.hpp"
#include "netrb/error.hpp"
#include "netrb/experiment.hpp"

using namespace netrb;
using namespace netrb::testing;
namespace fs = std::filesystem;

namespace {

std::vector<std::string> lines(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  for (std::string l; std::getline(ss, l);) out.push_back(l);
  return out;
}

std::set<std::string> files_with_extension(const fs::path& dir, const std::string& ext) {
  std::set<std::string> out;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.path().extension() == ext) out.insert(e.path().filename().string());
  return out;
}

}  // namespace

TEST_CASE("shipped experiment file parses with the documented defaults") {
  const ExperimentConfig c = load_config(source_dir() / "configs" / "diamond.yaml");
  CHECK(c.topology.edges.size() == 7);
  CHECK(c.cells_per_edge == 100);
  CHECK(c.coefficients.a(2) == 1.0);
  CHECK(c.coefficients.d_base(0) == 0.5);
  CHECK(c.parameters.train_count == 12);
  CHECK(c.parameters.test_count == 20);
  CHECK(c.parameters.probe == std::vector<double>{2.3});
  CHECK(c.solver.step == 0.02);
  CHECK(c.solver.steps() == 1000);
  CHECK(c.greedy.tolerance == 1e-2);
  CHECK(c.greedy.pca.max_modes == 10);
  CHECK(c.greedy.pca.energy_cutoff == 1e-7);
  CHECK(c.bound.convention == PoincareConvention::SquareRoot);
  CHECK(c.bound.mode == ConstantsMode::PerParameter);
  CHECK(c.data.boundary_pressure.count("v1") == 1);

  const Experiment e = build_experiment(c);
  CHECK(e.model->size() == 1403);
}

TEST_CASE("training and test samples") {
  ParameterSampling s;
  const std::vector<double> t = training_set(s);
  REQUIRE(t.size() == 12);
  CHECK(t.front() == 0.01);
  CHECK(t.back() == 10.0);
  for (std::size_t i = 1; i + 1 < t.size(); ++i)
    CHECK(std::log(t[i + 1] / t[i]) == doctest::Approx(std::log(t[1] / t[0])));
  s.log_spacing = false;
  CHECK(training_set(s)[1] == doctest::Approx(0.01 + 9.99 / 11));

  const std::vector<double> a = test_sample(s, 7), b = test_sample(s, 7), c = test_sample(s, 8);
  CHECK(a == b);
  CHECK(a != c);
  CHECK(a.size() == 20);
  for (double mu : a) CHECK((mu >= 0.01 && mu <= 10.0));
  s.test_count = 2000;
  const std::vector<double> many = test_sample(s, 1);
  const auto below = std::count_if(many.begin(), many.end(), [](double mu) { return mu < std::sqrt(0.1); });
  CHECK(below == doctest::Approx(1000).epsilon(0.1));  // log-uniform median at sqrt(0.01 * 10)
}

TEST_CASE("configuration errors carry line numbers") {
  const fs::path base = source_dir() / "configs";
  const std::string good = slurp(base / "diamond.yaml");
  CHECK_NOTHROW(parse_config(good, base, "x.yaml"));

  auto message = [&](const std::string& text) {
    try {
      parse_config(text, base, "x.yaml");
    } catch (const ConfigError& e) {
      return std::string(e.what());
    }
    return std::string("no error");
  };
  std::string bad = good;
  bad.replace(bad.find("  step: 0.02"), 12, "  stepp: 0.02");
  const int step_line = static_cast<int>(std::count(good.begin(), good.begin() + good.find("  step: 0.02"), '\n')) + 1;
  CHECK(message(bad) == "x.yaml:" + std::to_string(step_line) + ":3: unknown key 'stepp'");

  std::string neg = good;
  neg.replace(neg.find("min: 0.01"), 9, "min: -1");
  CHECK(message(neg).find("0 < min < max") != std::string::npos);

  std::string expr = good;
  expr.replace(expr.find("\"1 - cos(t)\""), 12, "\"1 - cos(t\"");
  const int v1_line = static_cast<int>(std::count(good.begin(), good.begin() + good.find("\"1 - cos(t)\""), '\n')) + 1;
  CHECK(message(expr).rfind("x.yaml:" + std::to_string(v1_line) + ":", 0) == 0);

  std::string node = good;
  node.replace(node.find("    v2: 0"), 9, "    j1: 0");
  CHECK(message(node).find("'j1' is not a boundary node") != std::string::npos);

  std::string space = good;
  space.replace(space.find("\"1 - cos(t)\""), 12, "\"x * t\"");
  CHECK(message(space).find("may depend on t only") != std::string::npos);

  std::string step = good;
  step.replace(step.find("step: 0.02"), 10, "step: 0.03");
  CHECK(message(step).find("solver") == std::string::npos);
  CHECK(message(step) != "no error");

  CHECK(message("network: [\n").rfind("x.yaml:", 0) == 0);  // parse error
  CHECK(message("network:\n  file: missing.yaml\ncoefficients: {}\n").find("cannot open") != std::string::npos);
  CHECK(message(good + "extra: 1\n").find("unknown key 'extra'") != std::string::npos);
}

TEST_CASE("inline topology and per-edge coefficients") {
  const std::string text =
      "network:\n"
      "  nodes: [a, m, b]\n"
      "  edges:\n"
      "    - {id: e1, tail: a, head: m, length: 2}\n"
      "    - {id: e2, tail: m, head: b}\n"
      "coefficients:\n"
      "  default: {a: 1, b: 1, d: 1}\n"
      "  e2: {a: 2, b: 3, d: 0}\n"
      "cells_per_edge: 4\n"
      "data:\n"
      "  boundary_pressure: {a: {table: [[0, 0], [1, 1]]}}\n"
      "  pressure_sources: [{amplitude: \"sin(t)\", profile: \"x\", edges: [e1]}]\n"
      "initial:\n"
      "  pressure: {e1: \"x\", default: 1}\n";
  const ExperimentConfig c = parse_config(text, ".", "inline.yaml");
  CHECK(c.topology.edges[0].length == 2.0);
  CHECK(c.topology.edges[1].length == 1.0);
  CHECK(c.coefficients.b(1) == 3.0);
  CHECK(c.coefficients.d_base(0) == 1.0);
  CHECK(c.data.f.size() == 1);
  const Experiment e = build_experiment(c);
  CHECK(e.problem.loads.pressure_vectors.cols() >= 1);
  // Cell averages of x on e1 (h = 0.5) and the constant 1 on e2.
  CHECK(e.problem.p0(0) == doctest::Approx(0.25));
  CHECK(e.problem.p0(7) == doctest::Approx(1.0));
  const std::string disconnected =
      "network:\n  nodes: [a, b, c]\n  edges:\n    - {id: e1, tail: a, head: b}\n"
      "coefficients:\n  default: {a: 1, b: 1, d: 1}\n";
  CHECK_THROWS_AS(parse_config(disconnected, ".", "d.yaml"), ConfigError);
}

TEST_CASE("truth subcommand") {
  const fs::path dir = scratch_dir("truth");
  const fs::path cfg = write_config(dir, "c.yaml", diamond_config({}, dir / "out"));
  const CliResult r = run_cli("truth --config " + cfg.string() + " --mu 1", dir);
  REQUIRE(r.code == 0);
  const auto energy = lines(slurp(dir / "out" / "truth_mu1_energy.csv"));
  REQUIRE(energy.size() == 1002);
  CHECK(energy[0] == "t,energy");
  CHECK(energy[1] == "0,0");
  CHECK(energy.back().rfind("20,", 0) == 0);
  const auto states = lines(slurp(dir / "out" / "truth_mu1_states.csv"));
  CHECK(states.size() == 1002);
  CHECK(std::count(states[0].begin(), states[0].end(), ',') == 1403);

  const CliResult bad = run_cli("truth --config " + cfg.string() + " --mu 20", dir);
  CHECK(bad.code == 1);
  CHECK(bad.err.find("outside the admissible range") != std::string::npos);
  CHECK(run_cli("truth --config " + cfg.string() + " --mu 0.001", dir).code == 1);
  CHECK(run_cli("truth --config " + (dir / "missing.yaml").string() + " --mu 1", dir).code == 1);
  CHECK(run_cli("truth --config " + cfg.string(), dir).code == 1);  // --mu required

  const CliResult zero = run_cli("truth --config " + cfg.string() + " --mu 3 --zero-boundary", dir);
  REQUIRE(zero.code == 0);
  const auto zs = lines(slurp(dir / "out" / "truth_mu3_states.csv"));
  REQUIRE(zs.size() == 1002);
  for (std::size_t i = 1; i < zs.size(); ++i) {
    std::stringstream ss(zs[i]);
    std::string cell;
    std::getline(ss, cell, ',');  // time
    bool all_zero = true;
    while (std::getline(ss, cell, ',')) all_zero = all_zero && cell == "0";
    CHECK(all_zero);
  }
  fs::remove_all(dir);
}

TEST_CASE("kernel-only basis is persisted and reloadable") {
  const fs::path dir = scratch_dir("kernel");
  ConfigOptions o;
  o.cells = 10;
  o.n_max = 3;
  o.test_count = 3;
  const fs::path cfg = write_config(dir, "c.yaml", diamond_config(o, dir / "out"));
  const CliResult train = run_cli("train --config " + cfg.string(), dir);
  REQUIRE(train.code == 0);
  const auto hist = lines(slurp(dir / "out" / "greedy_history.csv"));
  REQUIRE(hist.size() == 2);
  CHECK(hist[0] == "iter,mu,indicator,dimQ,dimV,N");
  CHECK(hist[1].rfind("0,", 0) == 0);
  CHECK(hist[1].substr(hist[1].size() - 6) == ",0,3,3");

  const BasisFile b = load_basis(dir / "out" / "basis.json");
  CHECK(b.basis.dim() == 3);
  CHECK(b.basis.kernel_dim == 3);
  CHECK(b.stop_reason == "maximum basis size reached");
  const Experiment e = build_experiment(load_config(cfg));
  CHECK_NOTHROW(check_basis_matches(e, b));
  CHECK(check_compatibility(*e.model, e.problem.kernel_flux, b.basis).a2());

  const CliResult test = run_cli("test --config " + cfg.string(), dir);
  CHECK(test.code == 0);
  const auto report = lines(slurp(dir / "out" / "report_N.csv"));
  REQUIRE(report.size() == 2);
  CHECK(report[1].rfind("3,", 0) == 0);
  fs::remove_all(dir);
}

TEST_CASE("basis from another configuration is rejected") {
  const fs::path dir = scratch_dir("mismatch");
  ConfigOptions o;
  o.cells = 5;
  o.n_max = 3;
  const fs::path cfg = write_config(dir, "a.yaml", diamond_config(o, dir / "out"));
  REQUIRE(run_cli("train --config " + cfg.string(), dir).code == 0);
  ConfigOptions other = o;
  other.coefficient_e3 = "{a: 2, b: 1, d: 4}";
  const fs::path cfg2 = write_config(dir, "b.yaml", diamond_config(other, dir / "out2"));
  const CliResult r = run_cli("test --config " + cfg2.string() + " --basis " + (dir / "out" / "basis.json").string(), dir);
  CHECK(r.code == 1);
  CHECK(r.err.find("different coefficients") != std::string::npos);
  other = o;
  other.cells = 6;
  const fs::path cfg3 = write_config(dir, "c.yaml", diamond_config(other, dir / "out3"));
  CHECK(run_cli("test --config " + cfg3.string() + " --basis " + (dir / "out" / "basis.json").string(), dir).code == 1);
  fs::remove_all(dir);
}

TEST_CASE("empty test sample and figure files") {
  const fs::path dir = scratch_dir("empty");
  ConfigOptions o;
  o.cells = 5;
  o.test_count = 0;
  o.probe = "[]";
  o.n_max = 30;
  const fs::path cfg = write_config(dir, "c.yaml", diamond_config(o, dir / "out"));
  REQUIRE(run_cli("train --config " + cfg.string(), dir).code == 0);
  const CliResult test = run_cli("test --config " + cfg.string(), dir);
  CHECK(test.code == 0);
  CHECK(lines(slurp(dir / "out" / "report_N.csv")).size() == 1);
  CHECK(lines(slurp(dir / "out" / "report_mu.csv")).size() == 1);

  REQUIRE(run_cli("plotdata --config " + cfg.string(), dir).code == 0);
  const auto fig3 = lines(slurp(dir / "out" / "fig3.csv"));
  REQUIRE(fig3.size() == 1);
  CHECK(fig3[0] == "N,max_err_sq,max_delta,max_delta_tilde");
  CHECK(files_with_extension(dir / "out", ".svg").empty());
  fs::remove_all(dir);
}

TEST_CASE("test reports, figure files and SVG flag") {
  const fs::path dir = scratch_dir("report");
  ConfigOptions o;
  o.cells = 10;
  o.test_count = 4;
  o.n_grid = "[3, 30, 1000]";
  const fs::path cfg = write_config(dir, "c.yaml", diamond_config(o, dir / "out"));
  REQUIRE(run_cli("train --config " + cfg.string(), dir).code == 0);
  const CliResult test = run_cli("test --config " + cfg.string(), dir);
  REQUIRE(test.code == 0);
  const auto report = lines(slurp(dir / "out" / "report_N.csv"));
  CHECK(report[0] == "N,max_err_sq,max_delta,max_delta_tilde,max_eta,max_eta_tilde");
  REQUIRE(report.size() == 4);  // N = 3, the largest prefix <= 30, the full basis
  CHECK(report[1].rfind("3,", 0) == 0);
  std::vector<long> sizes;
  for (std::size_t i = 1; i < report.size(); ++i) sizes.push_back(std::stol(report[i]));
  CHECK(std::is_sorted(sizes.begin(), sizes.end()));
  CHECK(sizes[1] <= 30);

  const BasisFile b = load_basis(dir / "out" / "basis.json");
  const Experiment e = build_experiment(load_config(cfg));
  for (std::size_t i = 0; i <= b.basis.enrichments(); ++i) {
    const CompatibilityReport r = check_compatibility(*e.model, e.problem.kernel_flux, b.basis.prefix(i));
    CHECK(r.a1());
    CHECK(r.a2());
  }
  const auto compat = lines(slurp(dir / "out" / "compatibility.csv"));
  for (std::size_t i = 1; i < compat.size(); ++i) CHECK(compat[i].substr(compat[i].size() - 4) == ",1,1");

  const auto ts = lines(slurp(dir / "out" / ("timeseries_mu2.3_N" + std::to_string(sizes.back()) + ".csv")));
  REQUIRE(ts.size() == 1002);
  CHECK(ts[0] == "t,err_sq,delta,delta_tilde,eta,eta_tilde,rp_norm_sq,ru_norm_sq");
  CHECK(ts[1].rfind("0,0,0,0,nan,nan,", 0) == 0);

  REQUIRE(run_cli("plotdata --config " + cfg.string(), dir).code == 0);
  CHECK(files_with_extension(dir / "out", ".svg").empty());
  CHECK(lines(slurp(dir / "out" / "fig3.csv")).size() == report.size());
  CHECK(lines(slurp(dir / "out" / "fig4.csv"))[0] == "N,max_eta,max_eta_tilde");
  CHECK(fs::exists(dir / "out" / ("fig2_mu2.3_N" + std::to_string(sizes.back()) + ".csv")));
  REQUIRE(run_cli("plotdata --config " + cfg.string() + " --svg", dir).code == 0);
  CHECK(files_with_extension(dir / "out", ".svg").size() == 2 + 3);
  CHECK(slurp(dir / "out" / "fig3.svg").find("<polyline") != std::string::npos);

  std::ofstream(dir / "out" / "report_N.csv", std::ios::app) << "5,abc,1,1,1,1\n";
  const CliResult broken = run_cli("plotdata --config " + cfg.string(), dir);
  CHECK(broken.code == 1);
  CHECK(broken.err.find("malformed value") != std::string::npos);

  const CliResult k = run_cli("constants --config " + cfg.string() + " --mu 1", dir);
  CHECK(k.code == 0);
  CHECK(k.out.find("\"Cprime\": 12.0") != std::string::npos);
  fs::remove_all(dir);
}

TEST_CASE("repeated runs are byte-identical") {
  const fs::path dir = scratch_dir("determinism");
  ConfigOptions o;
  o.cells = 8;
  o.test_count = 5;
  o.seed = 99;
  std::vector<fs::path> outs{dir / "run1", dir / "run2"};
  for (const auto& out : outs) {
    const fs::path cfg = write_config(dir, out.filename().string() + ".yaml", diamond_config(o, out));
    REQUIRE(run_cli("train --config " + cfg.string(), dir).code == 0);
    REQUIRE(run_cli("test --config " + cfg.string(), dir).code == 0);
  }
  const auto csvs = files_with_extension(outs[0], ".csv");
  CHECK(csvs.size() >= 6);
  CHECK(csvs == files_with_extension(outs[1], ".csv"));
  for (const auto& name : csvs) {
    INFO(name);
    CHECK(slurp(outs[0] / name) == slurp(outs[1] / name));
  }
  CHECK(slurp(outs[0] / "basis.json") == slurp(outs[1] / "basis.json"));

  // A different seed changes the sample.
  const fs::path cfg = dir / "run1.yaml";
  REQUIRE(run_cli("test --config " + cfg.string() + " --seed 100", dir).code == 0);
  CHECK(slurp(outs[0] / "report_mu.csv") != slurp(outs[1] / "report_mu.csv"));
  fs::remove_all(dir);
}
