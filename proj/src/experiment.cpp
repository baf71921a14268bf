#include "netrb/experiment.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstring>
#include <exception>
#include <fstream>
#include <iomanip>
#include <limits>
#include <ostream>
#include <sstream>

#include <json.hpp>

#include "netrb/error.hpp"

namespace netrb {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

class Fnv1a {
 public:
  void add(const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      h_ ^= p[i];
      h_ *= 0x100000001b3ULL;
    }
  }
  void add(const std::string& s) {
    add(s.data(), s.size());
    add("\0", 1);
  }
  void add(double v) { add(&v, sizeof v); }
  void add(const Eigen::VectorXd& v) {
    for (Eigen::Index i = 0; i < v.size(); ++i) add(v(i));
  }
  std::string hex() const {
    std::ostringstream os;
    os << std::hex << std::setw(16) << std::setfill('0') << h_;
    return os.str();
  }

 private:
  std::uint64_t h_ = 0xcbf29ce484222325ULL;
};

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory '" + dir.string() + "': " + ec.message());
}

std::ofstream open_out(const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  return out;
}

class Csv {
 public:
  Csv(const fs::path& path, const std::vector<std::string>& header) : path_(path), out_(open_out(path)) {
    for (std::size_t i = 0; i < header.size(); ++i) out_ << (i ? "," : "") << header[i];
    out_ << '\n';
  }
  void row(const std::vector<double>& values) {
    for (std::size_t i = 0; i < values.size(); ++i) out_ << (i ? "," : "") << format_number(values[i]);
    out_ << '\n';
  }
  ~Csv() { out_.flush(); }

 private:
  fs::path path_;
  std::ofstream out_;
};

std::string mu_tag(double mu) { return format_number(mu); }

double series_max(const std::vector<double>& v) {
  double m = -std::numeric_limits<double>::infinity();
  bool any = false;
  for (double x : v)
    if (!std::isnan(x)) {
      m = std::max(m, x);
      any = true;
    }
  return any ? m : std::numeric_limits<double>::quiet_NaN();
}

double nan_max(double a, double b) {
  if (std::isnan(a)) return b;
  if (std::isnan(b)) return a;
  return std::max(a, b);
}

Eigen::VectorXd initial_vector(const TruthModel& m, TargetSpace space, const InitialField& f) {
  std::vector<const Expression*> per_edge;
  for (const auto& e : m.graph().edges()) {
    auto it = f.per_edge.find(e.id);
    per_edge.push_back(it == f.per_edge.end() ? &f.fallback : &it->second);
  }
  return l2_projection(m, space, [&](std::size_t e, double x) { return (*per_edge[e])(0.0, x); });
}

json matrix_to_json(const Eigen::MatrixXd& a) {
  json cols = json::array();
  for (Eigen::Index j = 0; j < a.cols(); ++j) {
    std::vector<double> c(a.col(j).data(), a.col(j).data() + a.rows());
    cols.push_back(c);
  }
  return json{{"rows", a.rows()}, {"cols", a.cols()}, {"columns", cols}};
}

Eigen::MatrixXd matrix_from_json(const json& j) {
  const auto rows = j.at("rows").get<Eigen::Index>();
  const auto cols = j.at("cols").get<Eigen::Index>();
  const json& data = j.at("columns");
  if (static_cast<Eigen::Index>(data.size()) != cols) throw ConfigError("basis matrix column count mismatch");
  Eigen::MatrixXd a(rows, cols);
  for (Eigen::Index c = 0; c < cols; ++c) {
    const auto v = data[static_cast<std::size_t>(c)].get<std::vector<double>>();
    if (static_cast<Eigen::Index>(v.size()) != rows) throw ConfigError("basis matrix row count mismatch");
    for (Eigen::Index r = 0; r < rows; ++r) a(r, c) = v[static_cast<std::size_t>(r)];
  }
  return a;
}

// ---- truth trajectories on disk ----

fs::path cache_file(const Experiment& e, double mu) {
  std::uint64_t bits;
  std::memcpy(&bits, &mu, sizeof bits);
  std::ostringstream os;
  os << "truth_" << truth_hash(e) << '_' << std::hex << std::setw(16) << std::setfill('0') << bits << ".bin";
  return e.config.truth_cache_dir / os.str();
}

bool read_cached(const fs::path& path, Eigen::Index size, Trajectory& t) {
  std::ifstream in(path, std::ios::binary);
  if (!in) return false;
  std::uint64_t n = 0, dim = 0;
  in.read(reinterpret_cast<char*>(&n), sizeof n);
  in.read(reinterpret_cast<char*>(&dim), sizeof dim);
  if (!in || static_cast<Eigen::Index>(dim) != size) return false;
  t.times.resize(n);
  t.energies.resize(n);
  t.states.assign(n, Eigen::VectorXd(size));
  in.read(reinterpret_cast<char*>(t.times.data()), static_cast<std::streamsize>(n * sizeof(double)));
  in.read(reinterpret_cast<char*>(t.energies.data()), static_cast<std::streamsize>(n * sizeof(double)));
  for (auto& x : t.states) in.read(reinterpret_cast<char*>(x.data()), static_cast<std::streamsize>(size * sizeof(double)));
  return static_cast<bool>(in);
}

void write_cached(const fs::path& path, const Trajectory& t) {
  ensure_dir(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out = open_out(tmp);
    const std::uint64_t n = t.times.size(), dim = t.states.empty() ? 0 : t.states[0].size();
    out.write(reinterpret_cast<const char*>(&n), sizeof n);
    out.write(reinterpret_cast<const char*>(&dim), sizeof dim);
    out.write(reinterpret_cast<const char*>(t.times.data()), static_cast<std::streamsize>(n * sizeof(double)));
    out.write(reinterpret_cast<const char*>(t.energies.data()), static_cast<std::streamsize>(n * sizeof(double)));
    for (const auto& x : t.states)
      out.write(reinterpret_cast<const char*>(x.data()), static_cast<std::streamsize>(dim * sizeof(double)));
    if (!out) throw IoError("cannot write '" + tmp.string() + "'");
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move truth cache file into place: " + ec.message());
}

Trajectory truth_trajectory(const Experiment& e, const TruthSystem& system, double mu) {
  const ReductionProblem& p = e.problem;
  Trajectory t;
  const bool cached = !e.config.truth_cache_dir.empty();
  if (cached && read_cached(cache_file(e, mu), p.model->size(), t)) return t;
  Eigen::VectorXd x0(p.model->size());
  x0 << p.p0, p.u0;
  t = integrate(system, mu, x0, p.solver);
  if (cached) write_cached(cache_file(e, mu), t);
  return t;
}

// ---- SVG ----

struct Series {
  std::string label;
  std::vector<double> x, y;
};

void write_svg(const fs::path& path, const std::string& title, const std::string& xlabel,
               const std::vector<Series>& series) {
  const double w = 640, h = 420, left = 70, right = 20, top = 40, bottom = 50;
  double xmin = 1e300, xmax = -1e300, ymin = 1e300, ymax = -1e300;
  for (const auto& s : series)
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (!(s.y[i] > 0.0) || !std::isfinite(s.y[i])) continue;
      xmin = std::min(xmin, s.x[i]);
      xmax = std::max(xmax, s.x[i]);
      ymin = std::min(ymin, std::log10(s.y[i]));
      ymax = std::max(ymax, std::log10(s.y[i]));
    }
  const bool empty = xmin > xmax;
  if (empty) xmin = 0, xmax = 1, ymin = 0, ymax = 1;
  if (xmax == xmin) xmax = xmin + 1;
  ymin = std::floor(ymin);
  ymax = std::ceil(ymax);
  if (ymax == ymin) ymax = ymin + 1;
  auto px = [&](double x) { return left + (x - xmin) / (xmax - xmin) * (w - left - right); };
  auto py = [&](double ly) { return h - bottom - (ly - ymin) / (ymax - ymin) * (h - top - bottom); };

  std::ofstream out = open_out(path);
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h << "\">\n";
  out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  out << "<text x=\"" << w / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" << title << "</text>\n";
  out << "<text x=\"" << w / 2 << "\" y=\"" << h - 10 << "\" text-anchor=\"middle\" font-size=\"13\">" << xlabel
      << "</text>\n";
  out << "<line x1=\"" << left << "\" y1=\"" << h - bottom << "\" x2=\"" << w - right << "\" y2=\"" << h - bottom
      << "\" stroke=\"black\"/>\n";
  out << "<line x1=\"" << left << "\" y1=\"" << top << "\" x2=\"" << left << "\" y2=\"" << h - bottom
      << "\" stroke=\"black\"/>\n";
  const int step = std::max(1, static_cast<int>((ymax - ymin) / 8));
  for (int d = static_cast<int>(ymin); d <= static_cast<int>(ymax); d += step) {
    out << "<text x=\"" << left - 6 << "\" y=\"" << py(d) + 4 << "\" text-anchor=\"end\" font-size=\"11\">1e" << d
        << "</text>\n";
    out << "<line x1=\"" << left << "\" y1=\"" << py(d) << "\" x2=\"" << w - right << "\" y2=\"" << py(d)
        << "\" stroke=\"#ddd\"/>\n";
  }
  out << "<text x=\"" << left << "\" y=\"" << h - bottom + 16 << "\" font-size=\"11\">" << format_number(xmin)
      << "</text>\n";
  out << "<text x=\"" << w - right << "\" y=\"" << h - bottom + 16 << "\" text-anchor=\"end\" font-size=\"11\">"
      << format_number(xmax) << "</text>\n";
  const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"};
  for (std::size_t k = 0; k < series.size(); ++k) {
    const auto& s = series[k];
    out << "<polyline fill=\"none\" stroke=\"" << colors[k % 5] << "\" stroke-width=\"1.5\" points=\"";
    for (std::size_t i = 0; i < s.x.size(); ++i)
      if (s.y[i] > 0.0 && std::isfinite(s.y[i])) out << px(s.x[i]) << ',' << py(std::log10(s.y[i])) << ' ';
    out << "\"/>\n";
    out << "<text x=\"" << w - right - 150 << "\" y=\"" << top + 16 * (k + 1) << "\" font-size=\"12\" fill=\""
        << colors[k % 5] << "\">" << s.label << "</text>\n";
  }
  out << "</svg>\n";
}

// ---- report reading ----

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<double>> rows;
};

Table read_table(const fs::path& path, const std::vector<std::string>& expected) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  Table t;
  std::string line;
  if (!std::getline(in, line)) throw ConfigError(path.string() + ": missing header");
  std::stringstream hs(line);
  for (std::string cell; std::getline(hs, cell, ',');) t.header.push_back(cell);
  if (t.header != expected) throw ConfigError(path.string() + ": unexpected columns");
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<double> row;
    std::stringstream ls(line);
    for (std::string cell; std::getline(ls, cell, ',');) {
      if (cell == "nan") {
        row.push_back(std::numeric_limits<double>::quiet_NaN());
        continue;
      }
      double v = 0.0;
      const auto res = std::from_chars(cell.data(), cell.data() + cell.size(), v);
      if (res.ec != std::errc() || res.ptr != cell.data() + cell.size())
        throw ConfigError(path.string() + ":" + std::to_string(lineno) + ": malformed value '" + cell + "'");
      row.push_back(v);
    }
    if (row.size() != expected.size())
      throw ConfigError(path.string() + ":" + std::to_string(lineno) + ": expected " +
                        std::to_string(expected.size()) + " columns");
    t.rows.push_back(std::move(row));
  }
  return t;
}

std::vector<double> column(const Table& t, std::size_t c) {
  std::vector<double> out;
  for (const auto& r : t.rows) out.push_back(r[c]);
  return out;
}

const std::vector<std::string> kTimeSeriesHeader{"t", "err_sq", "delta", "delta_tilde", "eta", "eta_tilde",
                                                 "rp_norm_sq", "ru_norm_sq"};
const std::vector<std::string> kReportHeader{"N", "max_err_sq", "max_delta", "max_delta_tilde", "max_eta",
                                             "max_eta_tilde"};

}  // namespace

std::string format_number(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  if (v == 0.0) return "0";  // no signed zeros in the tables
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::string graph_hash(const NetworkGraph& g) {
  Fnv1a h;
  h.add(g.canonical_string());
  return h.hex();
}

std::string coefficient_hash(const EdgeCoefficients& c) {
  Fnv1a h;
  h.add(c.a);
  h.add(c.b);
  h.add(c.d_base);
  return h.hex();
}

std::string truth_hash(const Experiment& e) {
  Fnv1a h;
  h.add(e.graph->canonical_string());
  h.add(coefficient_hash(e.config.coefficients));
  h.add(std::to_string(e.config.cells_per_edge));
  h.add(e.config.data_fingerprint);
  h.add(e.problem.loads.pressure_vectors.cols() == 0 && e.problem.loads.flux_vectors.cols() == 0 ? "homogeneous"
                                                                                                  : "forced");
  h.add(e.config.solver.t_end);
  h.add(e.config.solver.step);
  return h.hex();
}

Experiment build_experiment(ExperimentConfig config, bool homogeneous) {
  Experiment e;
  e.config = std::move(config);
  e.graph = std::make_shared<const NetworkGraph>(build_graph(e.config.topology));
  e.model = std::make_shared<const TruthModel>(assemble_truth(e.graph, e.config.coefficients, e.config.cells_per_edge));
  const TruthModel& m = *e.model;
  SourceAndBoundaryData data = e.config.data;
  if (homogeneous) data = SourceAndBoundaryData{};
  e.problem.model = e.model;
  e.problem.loads = assemble_loads(m, data);
  e.problem.p0 = initial_vector(m, TargetSpace::Q, e.config.initial_pressure);
  e.problem.u0 = initial_vector(m, TargetSpace::V, e.config.initial_flux);
  e.problem.kernel_flux = m.kernel_flux(kernel_space(m.graph()));
  e.problem.solver = e.config.solver;
  return e;
}

void save_basis(const fs::path& path, const BasisFile& b) {
  json j;
  j["format"] = "netrb-basis";
  j["version"] = 1;
  j["graph_hash"] = b.graph_hash;
  j["coefficient_hash"] = b.coefficient_hash;
  j["cells_per_edge"] = b.cells_per_edge;
  j["kernel_dim"] = b.basis.kernel_dim;
  json blocks = json::array();
  for (const auto& [q, v] : b.basis.blocks) blocks.push_back({q, v});
  j["blocks"] = blocks;
  j["training_set"] = b.training_set;
  j["tolerance"] = b.tolerance;
  j["n_max"] = b.n_max;
  j["converged"] = b.converged;
  j["stop_reason"] = b.stop_reason;
  json hist = json::array();
  for (const auto& r : b.history)
    hist.push_back({{"iter", r.iteration}, {"mu", r.mu}, {"indicator", r.indicator}, {"dimQ", r.dim_q},
                    {"dimV", r.dim_v}, {"N", r.N}});
  j["history"] = hist;
  j["q_basis"] = matrix_to_json(b.basis.q_basis);
  j["v_basis"] = matrix_to_json(b.basis.v_basis);
  ensure_dir(path.parent_path().empty() ? fs::path(".") : path.parent_path());
  std::ofstream out = open_out(path);
  out << j.dump() << '\n';
  if (!out) throw IoError("cannot write '" + path.string() + "'");
}

BasisFile load_basis(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open basis file '" + path.string() + "'");
  BasisFile b;
  try {
    const json j = json::parse(in);
    if (j.at("format") != "netrb-basis") throw ConfigError("not a basis file");
    b.graph_hash = j.at("graph_hash").get<std::string>();
    b.coefficient_hash = j.at("coefficient_hash").get<std::string>();
    b.cells_per_edge = j.at("cells_per_edge").get<int>();
    b.basis.kernel_dim = j.at("kernel_dim").get<Eigen::Index>();
    for (const auto& blk : j.at("blocks")) b.basis.blocks.emplace_back(blk.at(0).get<Eigen::Index>(), blk.at(1).get<Eigen::Index>());
    b.training_set = j.at("training_set").get<std::vector<double>>();
    b.tolerance = j.at("tolerance").get<double>();
    b.n_max = j.at("n_max").get<Eigen::Index>();
    b.converged = j.at("converged").get<bool>();
    b.stop_reason = j.at("stop_reason").get<std::string>();
    for (const auto& r : j.at("history")) {
      GreedyRecord g;
      g.iteration = r.at("iter").get<int>();
      g.mu = r.at("mu").get<double>();
      g.indicator = r.at("indicator").get<double>();
      g.dim_q = r.at("dimQ").get<Eigen::Index>();
      g.dim_v = r.at("dimV").get<Eigen::Index>();
      g.N = r.at("N").get<Eigen::Index>();
      b.history.push_back(g);
    }
    b.basis.q_basis = matrix_from_json(j.at("q_basis"));
    b.basis.v_basis = matrix_from_json(j.at("v_basis"));
  } catch (const json::exception& e) {
    throw ConfigError("malformed basis file '" + path.string() + "': " + e.what());
  } catch (const ConfigError& e) {
    throw ConfigError("malformed basis file '" + path.string() + "': " + e.what());
  }
  if (b.basis.blocks.empty() || b.basis.blocks.back().first != b.basis.dim_q() ||
      b.basis.blocks.back().second != b.basis.dim_v())
    throw ConfigError("basis file '" + path.string() + "' has inconsistent block sizes");
  return b;
}

void check_basis_matches(const Experiment& e, const BasisFile& b) {
  if (b.graph_hash != graph_hash(*e.graph)) throw ConfigError("basis was trained on a different network");
  if (b.cells_per_edge != e.config.cells_per_edge)
    throw ConfigError("basis was trained with cells_per_edge = " + std::to_string(b.cells_per_edge));
  if (b.coefficient_hash != coefficient_hash(e.config.coefficients))
    throw ConfigError("basis was trained with different coefficients");
  if (b.basis.q_basis.rows() != e.model->n_p() || b.basis.v_basis.rows() != e.model->n_u())
    throw ConfigError("basis dimensions do not match the truth model");
}

TruthOutput run_truth(const Experiment& e, double mu, std::ostream& log) {
  const ExperimentConfig& c = e.config;
  if (!(mu >= c.parameters.min && mu <= c.parameters.max))
    throw ConfigError("mu = " + format_number(mu) + " outside the admissible range [" +
                      format_number(c.parameters.min) + ", " + format_number(c.parameters.max) + "]");
  const TruthModel& m = *e.model;
  const auto start = std::chrono::steady_clock::now();
  const Trajectory t = truth_trajectory(e, truth_system(m, e.problem.loads), mu);
  log << "truth: " << t.times.size() << " records, size " << m.size() << ", "
      << std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count() << " s\n";

  ensure_dir(c.output_dir);
  TruthOutput out;
  out.records = t.times.size();
  out.energy_csv = c.output_dir / ("truth_mu" + mu_tag(mu) + "_energy.csv");
  {
    Csv csv(out.energy_csv, {"t", "energy"});
    for (std::size_t n = 0; n < t.times.size(); ++n) csv.row({t.times[n], t.energies[n]});
  }
  if (c.write_truth_states) {
    out.states_csv = c.output_dir / ("truth_mu" + mu_tag(mu) + "_states.csv");
    std::vector<std::string> header{"t"};
    for (Eigen::Index i = 0; i < m.n_p(); ++i) header.push_back("p" + std::to_string(i));
    for (Eigen::Index i = 0; i < m.n_u(); ++i) header.push_back("u" + std::to_string(i));
    Csv csv(out.states_csv, header);
    std::vector<double> row(static_cast<std::size_t>(m.size()) + 1);
    for (std::size_t n = 0; n < t.times.size(); ++n) {
      row[0] = t.times[n];
      std::copy(t.states[n].data(), t.states[n].data() + m.size(), row.begin() + 1);
      csv.row(row);
    }
  }
  return out;
}

TrainOutput run_train(const Experiment& e, std::ostream& log) {
  const ExperimentConfig& c = e.config;
  const TruthModel& m = *e.model;
  const std::vector<double> train = training_set(c.parameters);
  std::vector<BoundConstants> constants;
  for (double mu : train) constants.push_back(stability_constants(m, mu, c.bound));

  TrainOutput out;
  auto observer = [&](const ReducedBasis&, const GreedyRecord& r) {
    log << "greedy " << r.iteration << ": N = " << r.N << ", max indicator " << r.indicator << " at mu = " << r.mu
        << '\n';
  };
  const auto start = std::chrono::steady_clock::now();
  try {
    out.state = greedy_train(e.problem, train, constants, c.greedy, MinimumNormRightInverse(m), observer);
  } catch (const GreedyStagnation& s) {
    out.state = s.state();
    out.stagnated = true;
    out.message = s.what();
  }
  log << "greedy: " << out.state.stop_reason << ", N = " << out.state.basis.dim() << ", "
      << std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count() << " s\n";

  ensure_dir(c.output_dir);
  BasisFile b;
  b.basis = out.state.basis;
  b.graph_hash = graph_hash(*e.graph);
  b.coefficient_hash = coefficient_hash(c.coefficients);
  b.cells_per_edge = c.cells_per_edge;
  b.training_set = train;
  b.history = out.state.history;
  b.tolerance = out.state.tolerance;
  b.n_max = out.state.n_max;
  b.converged = out.state.converged;
  b.stop_reason = out.state.stop_reason;
  out.basis_path = c.output_dir / "basis.json";
  save_basis(out.basis_path, b);

  out.history_csv = c.output_dir / "greedy_history.csv";
  Csv csv(out.history_csv, {"iter", "mu", "indicator", "dimQ", "dimV", "N"});
  for (const auto& r : out.state.history)
    csv.row({double(r.iteration), r.mu, r.indicator, double(r.dim_q), double(r.dim_v), double(r.N)});
  return out;
}

TestOutput run_test(const Experiment& e, const fs::path& basis_path, std::uint64_t seed, std::ostream& log) {
  const ExperimentConfig& c = e.config;
  const TruthModel& m = *e.model;
  const BasisFile file = load_basis(basis_path);
  check_basis_matches(e, file);
  const auto start = std::chrono::steady_clock::now();

  // N-grid entries map to the largest whole-iteration prefix not above N.
  std::vector<std::size_t> prefixes;
  const std::size_t last = file.basis.enrichments();
  if (c.n_grid.empty()) {
    for (std::size_t i = 0; i <= last; ++i) prefixes.push_back(i);
  } else {
    for (Eigen::Index n : c.n_grid) {
      std::size_t pick = 0;
      for (std::size_t i = 0; i <= last; ++i)
        if (file.basis.blocks[i].first + file.basis.blocks[i].second <= n) pick = i;
      prefixes.push_back(pick);
    }
    std::sort(prefixes.begin(), prefixes.end());
    prefixes.erase(std::unique(prefixes.begin(), prefixes.end()), prefixes.end());
  }

  struct Level {
    ReducedBasis rb;
    std::unique_ptr<ResidualEstimator> estimator;
    CompatibilityReport compat;
  };
  std::vector<Level> levels;
  for (std::size_t i : prefixes) {
    Level l;
    l.rb = file.basis.prefix(i);
    l.estimator = std::make_unique<ResidualEstimator>(m, e.problem.loads, l.rb);
    l.compat = check_compatibility(m, e.problem.kernel_flux, l.rb);
    levels.push_back(std::move(l));
  }

  TestOutput out;
  out.sample = test_sample(c.parameters, seed);
  for (const auto& l : levels) out.sizes.push_back(l.rb.dim());
  std::vector<double> mus = out.sample;
  const std::size_t n_sample = mus.size();
  mus.insert(mus.end(), c.parameters.probe.begin(), c.parameters.probe.end());

  ConstantsSettings alt = c.bound;
  alt.convention = c.bound.convention == PoincareConvention::SquareRoot ? PoincareConvention::Eigenvalue
                                                                        : PoincareConvention::SquareRoot;
  struct Cell {
    double max_err = 0, max_delta = 0, max_dt = 0;
    double max_eta = std::numeric_limits<double>::quiet_NaN(), max_eta_t = std::numeric_limits<double>::quiet_NaN();
    std::size_t violations = 0;
    double delta_T = 0, delta_tilde_T = 0, delta_T_alt = 0;
    CertifiedTrajectory series;  // probe parameters only
  };
  const std::size_t nl = levels.size();
  std::vector<Cell> cells(mus.size() * nl);
  std::vector<std::exception_ptr> errors(mus.size());
  const TruthSystem system = truth_system(m, e.problem.loads);

#pragma omp parallel for schedule(dynamic)
  for (long i = 0; i < static_cast<long>(mus.size()); ++i) {
    const auto k = static_cast<std::size_t>(i);
    try {
      const double mu = mus[k];
      const BoundConstants constants = stability_constants(m, mu, c.bound);
      const bool probe = k >= n_sample;
      const BoundConstants alt_constants = probe ? stability_constants(m, mu, alt) : constants;
      const Trajectory truth = truth_trajectory(e, system, mu);
      for (std::size_t l = 0; l < nl; ++l) {
        const ParameterEvaluation ev =
            evaluate_parameter(e.problem, levels[l].rb, *levels[l].estimator, constants, mu, &truth);
        const CertifiedTrajectory& ct = ev.certified;
        Cell& cell = cells[k * nl + l];
        cell.max_err = series_max(ct.err_sq);
        cell.max_delta = series_max(ct.delta);
        cell.max_dt = series_max(ct.delta_tilde);
        cell.max_eta = series_max(ct.eta);
        cell.max_eta_t = series_max(ct.eta_tilde);
        for (std::size_t n = 0; n < ct.times.size(); ++n)
          if (ct.err_sq[n] > ct.delta[n] || ct.err_sq[n] > ct.delta_tilde[n]) ++cell.violations;
        cell.delta_T = ct.delta.back();
        cell.delta_tilde_T = ct.delta_tilde.back();
        if (probe) {
          const ResidualNorms r{ct.rp_norm_sq, ct.ru_norm_sq};
          const ReducedInitial init = project_initial(m, levels[l].rb, e.problem.p0, e.problem.u0);
          cell.delta_T_alt = certify(r, alt_constants, ct.times, init.error, e.problem.solver).delta.back();
          cell.series = ct;
        }
      }
    } catch (...) {
      errors[k] = std::current_exception();
    }
  }
  for (const auto& err : errors)
    if (err) std::rethrow_exception(err);

  ensure_dir(c.output_dir);
  {
    Csv compat(c.output_dir / "compatibility.csv",
               {"N", "dimQ", "dimV", "derivative_residual", "derivative_rank", "kernel_residual", "a1", "a2"});
    for (const auto& l : levels)
      compat.row({double(l.rb.dim()), double(l.rb.dim_q()), double(l.rb.dim_v()), l.compat.derivative_residual,
                  double(l.compat.derivative_rank), l.compat.kernel_residual, l.compat.a1() ? 1.0 : 0.0,
                  l.compat.a2() ? 1.0 : 0.0});
  }
  {
    Csv per_mu(c.output_dir / "report_mu.csv", {"N", "mu", "max_err_sq", "max_delta", "max_delta_tilde", "max_eta",
                                                "max_eta_tilde", "violations"});
    Csv per_n(c.output_dir / "report_N.csv", kReportHeader);
    for (std::size_t l = 0; l < nl; ++l) {
      if (n_sample == 0) continue;
      double me = 0, md = 0, mt = 0, eta = std::nan(""), etat = std::nan("");
      for (std::size_t k = 0; k < n_sample; ++k) {
        const Cell& cell = cells[k * nl + l];
        per_mu.row({double(levels[l].rb.dim()), mus[k], cell.max_err, cell.max_delta, cell.max_dt, cell.max_eta,
                    cell.max_eta_t, double(cell.violations)});
        me = std::max(me, cell.max_err);
        md = std::max(md, cell.max_delta);
        mt = std::max(mt, cell.max_dt);
        eta = nan_max(eta, cell.max_eta);
        etat = nan_max(etat, cell.max_eta_t);
      }
      per_n.row({double(levels[l].rb.dim()), me, md, mt, eta, etat});
    }
  }
  {
    Csv tight(c.output_dir / "tightness.csv",
              {"N", "mu", "delta_T", "delta_tilde_T", "ratio", "ratio_other_convention", "flagged"});
    for (std::size_t k = n_sample; k < mus.size(); ++k)
      for (std::size_t l = 0; l < nl; ++l) {
        const Cell& cell = cells[k * nl + l];
        const CertifiedTrajectory& ct = cell.series;
        Csv ts(c.output_dir / ("timeseries_mu" + mu_tag(mus[k]) + "_N" + std::to_string(levels[l].rb.dim()) + ".csv"),
               kTimeSeriesHeader);
        for (std::size_t n = 0; n < ct.times.size(); ++n)
          ts.row({ct.times[n], ct.err_sq[n], ct.delta[n], ct.delta_tilde[n], ct.eta[n], ct.eta_tilde[n],
                  ct.rp_norm_sq[n], ct.ru_norm_sq[n]});
        const double ratio = cell.delta_T / cell.delta_tilde_T;
        const double ratio_alt = cell.delta_T_alt / cell.delta_tilde_T;
        const bool flagged = ratio > 0.3 && ratio_alt > 0.3;
        if (flagged) {
          ++out.tightness_flags;
          log << "warning: Delta(T)/DeltaTilde(T) above 0.3 under both Poincare conventions at mu = "
              << format_number(mus[k]) << ", N = " << levels[l].rb.dim() << '\n';
        }
        tight.row({double(levels[l].rb.dim()), mus[k], cell.delta_T, cell.delta_tilde_T, ratio, ratio_alt,
                   flagged ? 1.0 : 0.0});
      }
  }
  for (const Cell& cell : cells) out.violations += cell.violations;

  json info;
  info["basis"] = basis_path.string();
  info["seed"] = seed;
  info["test_sample"] = out.sample;
  info["probe"] = c.parameters.probe;
  info["sizes"] = out.sizes;
  info["violations"] = out.violations;
  info["tightness_flags"] = out.tightness_flags;
  info["seconds"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  std::ofstream(c.output_dir / "run_info.json") << info.dump(2) << '\n';
  log << "test: " << n_sample << " parameters, " << nl << " basis sizes, " << out.violations << " violations, "
      << info["seconds"].get<double>() << " s\n";
  return out;
}

std::vector<fs::path> run_plotdata(const fs::path& dir, bool svg) {
  std::vector<fs::path> written;
  const Table report = read_table(dir / "report_N.csv", kReportHeader);
  {
    Csv fig3(dir / "fig3.csv", {"N", "max_err_sq", "max_delta", "max_delta_tilde"});
    for (const auto& r : report.rows) fig3.row({r[0], r[1], r[2], r[3]});
    written.push_back(dir / "fig3.csv");
    Csv fig4(dir / "fig4.csv", {"N", "max_eta", "max_eta_tilde"});
    for (const auto& r : report.rows) fig4.row({r[0], r[4], r[5]});
    written.push_back(dir / "fig4.csv");
  }
  if (svg) {
    const std::vector<double> n = column(report, 0);
    write_svg(dir / "fig3.svg", "maximal error and bounds", "N",
              {{"error^2", n, column(report, 1)}, {"Delta", n, column(report, 2)},
               {"DeltaTilde", n, column(report, 3)}});
    write_svg(dir / "fig4.svg", "maximal effectivities", "N",
              {{"eta", n, column(report, 4)}, {"eta tilde", n, column(report, 5)}});
    written.push_back(dir / "fig3.svg");
    written.push_back(dir / "fig4.svg");
  }

  std::vector<fs::path> series;
  for (const auto& entry : fs::directory_iterator(dir)) {
    const std::string name = entry.path().filename().string();
    if (name.rfind("timeseries_", 0) == 0 && entry.path().extension() == ".csv") series.push_back(entry.path());
  }
  std::sort(series.begin(), series.end());
  for (const auto& path : series) {
    const Table t = read_table(path, kTimeSeriesHeader);
    const std::string stem = path.stem().string().substr(std::strlen("timeseries_"));
    const fs::path out = dir / ("fig2_" + stem + ".csv");
    Csv fig2(out, {"t", "err_sq", "delta", "delta_tilde"});
    for (const auto& r : t.rows) fig2.row({r[0], r[1], r[2], r[3]});
    written.push_back(out);
    if (svg) {
      const std::vector<double> x = column(t, 0);
      write_svg(dir / ("fig2_" + stem + ".svg"), "error and bounds, " + stem, "t",
                {{"error^2", x, column(t, 1)}, {"Delta", x, column(t, 2)}, {"DeltaTilde", x, column(t, 3)}});
      written.push_back(dir / ("fig2_" + stem + ".svg"));
    }
  }
  return written;
}

std::string run_constants(const Experiment& e, const std::vector<double>& mus) {
  json list = json::array();
  for (double mu : mus) {
    const BoundConstants k = stability_constants(*e.model, mu, e.config.bound);
    list.push_back({{"mu", mu}, {"C0", k.C0}, {"C1", k.C1}, {"C_P", k.C_P}, {"gamma", k.gamma},
                    {"Cprime", k.Cprime}, {"Cdprime", k.Cdprime}, {"Ctilde", k.Ctilde}});
  }
  const json doc{{"poincare_convention", e.config.bound.convention == PoincareConvention::SquareRoot ? "sqrt"
                                                                                                       : "eigenvalue"},
                 {"constants_mode", e.config.bound.mode == ConstantsMode::PerParameter ? "per_parameter"
                                                                                         : "worst_case"},
                 {"constants", list}};
  const std::string text = doc.dump(2);
  ensure_dir(e.config.output_dir);
  std::ofstream out = open_out(e.config.output_dir / "constants.json");
  out << text << '\n';
  return text;
}

}  // namespace netrb
