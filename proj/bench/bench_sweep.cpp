// Serial versus OpenMP parameter sweep of reduced solves plus certification.
#include <cmath>
#include <memory>

#include <benchmark/benchmark.h>

#include "netrb/network.hpp"
#include "netrb/reduction.hpp"

namespace {

struct Fixture {
  netrb::ReductionProblem problem;
  netrb::ReducedBasis basis;
  std::vector<double> mus;
  std::vector<netrb::BoundConstants> constants;

  Fixture() {
    netrb::TopologySpec s;
    s.nodes = {"v1", "j1", "j2", "j3", "j4", "v2"};
    s.edges = {{"e1", "v1", "j1", 1.0}, {"e2", "j1", "j2", 1.0}, {"e3", "j1", "j3", 1.0},
               {"e4", "j2", "j3", 1.0}, {"e5", "j2", "j4", 1.0}, {"e6", "j3", "j4", 1.0},
               {"e7", "j4", "v2", 1.0}};
    auto graph = std::make_shared<const netrb::NetworkGraph>(netrb::build_graph(s));
    netrb::EdgeCoefficients c;
    c.a.resize(7);
    c.b.resize(7);
    c.d_base.resize(7);
    c.a << 4, 4, 1, 1, 1, 4, 4;
    c.b << 0.25, 0.25, 1, 1, 1, 0.25, 0.25;
    c.d_base << 0.5, 0.5, 4, 4, 4, 0.5, 0.5;
    problem.model = std::make_shared<const netrb::TruthModel>(netrb::assemble_truth(graph, c, 100));
    const netrb::TruthModel& m = *problem.model;
    netrb::SourceAndBoundaryData data;
    data.boundary_pressure["v1"] = netrb::TimeFunction(netrb::Expression::parse("1 - cos(t)"));
    problem.loads = netrb::assemble_loads(m, data);
    problem.p0 = Eigen::VectorXd::Zero(m.n_p());
    problem.u0 = Eigen::VectorXd::Zero(m.n_u());
    problem.kernel_flux = m.kernel_flux(netrb::kernel_space(m.graph()));
    problem.solver = {20.0, 0.02, 1};

    Eigen::VectorXd x0 = Eigen::VectorXd::Zero(m.size());
    const netrb::Trajectory seed = netrb::integrate(netrb::truth_system(m, problem.loads), 1.0, x0, problem.solver);
    netrb::PcaSettings pca;
    pca.max_modes = 20;
    basis = netrb::constrained_pca(m, problem.kernel_flux, {&seed}, pca, netrb::MinimumNormRightInverse(m));
    for (int i = 0; i < 12; ++i) mus.push_back(0.01 * std::pow(1000.0, i / 11.0));
    for (double mu : mus) constants.push_back(netrb::stability_constants(m, mu, {}));
  }
};

Fixture& fixture() {
  static Fixture f;
  return f;
}

void sweep(benchmark::State& state, netrb::Execution exec) {
  Fixture& f = fixture();
  for (auto _ : state) {
    auto r = netrb::evaluate_parameters(f.problem, f.basis, f.mus, f.constants, exec);
    benchmark::DoNotOptimize(r.data());
  }
  state.counters["N"] = static_cast<double>(f.basis.dim());
  state.counters["mu_per_s"] =
      benchmark::Counter(static_cast<double>(f.mus.size()), benchmark::Counter::kIsIterationInvariantRate);
}

void BM_SweepSerial(benchmark::State& s) { sweep(s, netrb::Execution::Serial); }
void BM_SweepParallel(benchmark::State& s) { sweep(s, netrb::Execution::Parallel); }

}  // namespace

BENCHMARK(BM_SweepSerial)->Unit(benchmark::kMillisecond)->UseRealTime();
BENCHMARK(BM_SweepParallel)->Unit(benchmark::kMillisecond)->UseRealTime();

BENCHMARK_MAIN();
