#include "netrb/config.hpp"

#include <cmath>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

#include <yaml-cpp/yaml.h>

#include "netrb/error.hpp"

namespace netrb {

namespace {

// Accessors that remember which keys were read so leftovers can be
// reported as typos, with positions from the YAML marks.
class Reader {
 public:
  Reader(std::string name, YAML::Node node, YAML::Mark fallback)
      : name_(std::move(name)), node_(std::move(node)), fallback_(fallback) {}

  [[noreturn]] void fail(const YAML::Node& n, const std::string& msg) const {
    YAML::Mark m = n.IsDefined() ? n.Mark() : fallback_;
    if (m.line < 0) m = fallback_;
    std::ostringstream os;
    os << name_ << ':' << m.line + 1 << ':' << m.column + 1 << ": " << msg;
    throw ConfigError(os.str());
  }

  const YAML::Node& node() const { return node_; }
  const std::string& name() const { return name_; }

  YAML::Node get(const std::string& key) {
    used_.insert(key);
    return node_[key];
  }
  bool has(const std::string& key) const { return node_[key].IsDefined() && !node_[key].IsNull(); }

  Reader section(const std::string& key) {
    YAML::Node n = get(key);
    if (n.IsDefined() && !n.IsNull() && !n.IsMap()) fail(n, "'" + key + "' must be a mapping");
    return Reader(name_, n.IsDefined() ? n : YAML::Node(YAML::NodeType::Map), mark());
  }

  void finish() const {
    if (!node_.IsMap()) return;
    for (const auto& kv : node_) {
      const std::string key = kv.first.as<std::string>();
      if (!used_.count(key)) fail(kv.first, "unknown key '" + key + "'");
    }
  }

  YAML::Mark mark() const { return node_.IsDefined() && node_.Mark().line >= 0 ? node_.Mark() : fallback_; }

  double real(const YAML::Node& n, const std::string& what) const {
    try {
      return n.as<double>();
    } catch (const YAML::Exception&) {
      fail(n, what + " must be a number");
    }
  }
  long integer(const YAML::Node& n, const std::string& what) const {
    try {
      return n.as<long>();
    } catch (const YAML::Exception&) {
      fail(n, what + " must be an integer");
    }
  }
  bool boolean(const YAML::Node& n, const std::string& what) const {
    try {
      return n.as<bool>();
    } catch (const YAML::Exception&) {
      fail(n, what + " must be true or false");
    }
  }
  std::string text(const YAML::Node& n, const std::string& what) const {
    if (!n.IsScalar()) fail(n, what + " must be a scalar");
    return n.as<std::string>();
  }

  double real(const std::string& key, double fallback) {
    YAML::Node n = get(key);
    return n.IsDefined() ? real(n, "'" + key + "'") : fallback;
  }
  long integer(const std::string& key, long fallback) {
    YAML::Node n = get(key);
    return n.IsDefined() ? integer(n, "'" + key + "'") : fallback;
  }
  bool boolean(const std::string& key, bool fallback) {
    YAML::Node n = get(key);
    return n.IsDefined() ? boolean(n, "'" + key + "'") : fallback;
  }
  std::string text(const std::string& key, const std::string& fallback) {
    YAML::Node n = get(key);
    return n.IsDefined() ? text(n, "'" + key + "'") : fallback;
  }

  Expression expression(const YAML::Node& n, const std::string& what) const {
    const std::string s = text(n, what);
    try {
      return Expression::parse(s);
    } catch (const ConfigError& e) {
      fail(n, what + ": " + e.what());
    }
  }

  TimeFunction time_function(const YAML::Node& n, const std::string& what) const {
    if (n.IsMap()) {
      Reader r(name_, n, mark());
      const YAML::Node table = r.get("table");
      if (!table.IsSequence() || table.size() == 0) fail(n, what + ": 'table' must be a list of [t, value] pairs");
      std::vector<double> t, v;
      for (const auto& row : table) {
        if (!row.IsSequence() || row.size() != 2) fail(row, what + ": table rows are [t, value]");
        t.push_back(real(row[0], "time"));
        v.push_back(real(row[1], "value"));
      }
      r.finish();
      try {
        return TimeFunction(TimeSeries(t, v));
      } catch (const ConfigError& e) {
        fail(n, what + ": " + e.what());
      }
    }
    const Expression e = expression(n, what);
    if (e.depends_on_x()) fail(n, what + " may depend on t only");
    return TimeFunction(e);
  }

  Expression space_function(const YAML::Node& n, const std::string& what) const {
    const Expression e = expression(n, what);
    if (e.depends_on_t()) fail(n, what + " may depend on x only");
    return e;
  }

 private:
  std::string name_;
  YAML::Node node_;
  YAML::Mark fallback_;
  std::set<std::string> used_;
};

YAML::Node load_yaml(const std::string& text, const std::string& name) {
  try {
    return YAML::Load(text);
  } catch (const YAML::ParserException& e) {
    std::ostringstream os;
    os << name << ':' << e.mark.line + 1 << ':' << e.mark.column + 1 << ": " << e.msg;
    throw ConfigError(os.str());
  }
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

std::vector<std::string> string_list(const Reader& r, const YAML::Node& n, const std::string& what) {
  if (!n.IsSequence()) r.fail(n, what + " must be a list");
  std::vector<std::string> out;
  for (const auto& item : n) out.push_back(r.text(item, what + " entry"));
  return out;
}

TopologySpec read_topology(Reader& r) {
  TopologySpec spec;
  YAML::Node nodes = r.get("nodes");
  if (!nodes.IsDefined()) r.fail(r.node(), "network needs 'nodes'");
  spec.nodes = string_list(r, nodes, "'nodes'");
  YAML::Node edges = r.get("edges");
  if (!edges.IsDefined() || !edges.IsSequence()) r.fail(r.node(), "network needs a list of 'edges'");
  for (const auto& e : edges) {
    if (!e.IsMap()) r.fail(e, "edges are mappings with id, tail, head, length");
    Reader er(r.name(), e, r.mark());
    Edge edge;
    edge.id = er.text("id", "");
    edge.tail = er.text("tail", "");
    edge.head = er.text("head", "");
    edge.length = er.real("length", 1.0);
    if (edge.id.empty() || edge.tail.empty() || edge.head.empty()) er.fail(e, "edge needs id, tail and head");
    er.finish();
    spec.edges.push_back(edge);
  }
  if (r.has("boundary")) spec.declared_boundary = string_list(r, r.get("boundary"), "'boundary'");
  if (r.has("interior")) spec.declared_interior = string_list(r, r.get("interior"), "'interior'");
  r.get("boundary");
  r.get("interior");
  r.finish();
  return spec;
}

void read_network(Reader& top, const std::filesystem::path& base_dir, ExperimentConfig& cfg) {
  YAML::Node node = top.get("network");
  if (!node.IsDefined() || !node.IsMap()) top.fail(top.node(), "missing 'network' mapping");
  Reader net(top.name(), node, top.mark());
  if (net.has("file")) {
    const YAML::Node file_node = net.get("file");
    const std::filesystem::path file = base_dir / net.text(file_node, "'file'");
    net.finish();
    std::string text;
    try {
      text = read_file(file);
    } catch (const IoError& e) {
      net.fail(file_node, e.what());
    }
    const YAML::Node doc = load_yaml(text, file.string());
    if (!doc.IsMap()) throw ConfigError(file.string() + ":1:1: network file must be a mapping");
    Reader fr(file.string(), doc, doc.Mark());
    cfg.topology = read_topology(fr);
    try {
      (void)build_graph(cfg.topology);
    } catch (const ConfigError& e) {
      fr.fail(doc, e.what());
    }
  } else {
    cfg.topology = read_topology(net);
    try {
      (void)build_graph(cfg.topology);
    } catch (const ConfigError& e) {
      net.fail(node, e.what());
    }
  }
}

void read_coefficients(Reader& top, ExperimentConfig& cfg) {
  YAML::Node node = top.get("coefficients");
  if (!node.IsDefined() || !node.IsMap()) top.fail(top.node(), "missing 'coefficients' mapping");
  Reader r(top.name(), node, top.mark());
  const auto n = static_cast<Eigen::Index>(cfg.topology.edges.size());
  cfg.coefficients.a = Eigen::VectorXd::Constant(n, std::nan(""));
  cfg.coefficients.b = cfg.coefficients.a;
  cfg.coefficients.d_base = cfg.coefficients.a;

  auto read_triple = [&](const YAML::Node& v, Eigen::Index e) {
    if (!v.IsMap()) r.fail(v, "coefficients are mappings with a, b, d");
    Reader cr(r.name(), v, r.mark());
    const double a = cr.real(cr.get("a"), "'a'");
    const double b = cr.real(cr.get("b"), "'b'");
    const double d = cr.real(cr.get("d"), "'d'");
    if (!(a > 0.0) || !(b > 0.0)) cr.fail(v, "a and b must be positive");
    if (!(d >= 0.0)) cr.fail(v, "d must be nonnegative");
    cr.finish();
    cfg.coefficients.a(e) = a;
    cfg.coefficients.b(e) = b;
    cfg.coefficients.d_base(e) = d;
  };

  if (r.has("default")) {
    for (Eigen::Index e = 0; e < n; ++e) read_triple(r.get("default"), e);
  }
  r.get("default");
  for (Eigen::Index e = 0; e < n; ++e) {
    const std::string& id = cfg.topology.edges[static_cast<std::size_t>(e)].id;
    if (r.has(id)) read_triple(r.get(id), e);
    if (std::isnan(cfg.coefficients.a(e))) r.fail(node, "no coefficients for edge '" + id + "'");
  }
  r.finish();
}

std::vector<SourceTerm> read_sources(Reader& r, const std::string& key, const std::set<std::string>& edges) {
  std::vector<SourceTerm> out;
  YAML::Node list = r.get(key);
  if (!list.IsDefined() || list.IsNull()) return out;
  if (!list.IsSequence()) r.fail(list, "'" + key + "' must be a list");
  for (const auto& item : list) {
    if (!item.IsMap()) r.fail(item, "source terms are mappings with amplitude, profile, edges");
    Reader sr(r.name(), item, r.mark());
    SourceTerm s;
    const YAML::Node amp = sr.get("amplitude");
    s.amplitude = amp.IsDefined() ? sr.time_function(amp, "'amplitude'") : TimeFunction::constant(1.0);
    const YAML::Node prof = sr.get("profile");
    s.profile = prof.IsDefined() ? sr.space_function(prof, "'profile'") : Expression::constant(1.0);
    const YAML::Node on = sr.get("edges");
    if (on.IsDefined()) {
      s.edges = string_list(sr, on, "'edges'");
      for (const auto& e : s.edges)
        if (!edges.count(e)) sr.fail(on, "unknown edge '" + e + "'");
    }
    sr.finish();
    out.push_back(std::move(s));
  }
  return out;
}

InitialField read_initial(Reader& r, const std::string& key, const std::set<std::string>& edges) {
  InitialField f;
  YAML::Node n = r.get(key);
  if (!n.IsDefined() || n.IsNull()) return f;
  if (n.IsMap()) {
    Reader er(r.name(), n, r.mark());
    for (const auto& kv : n) {
      const std::string id = kv.first.as<std::string>();
      if (id == "default") {
        f.fallback = er.space_function(er.get(id), "initial " + key);
      } else {
        if (!edges.count(id)) er.fail(kv.first, "unknown edge '" + id + "'");
        f.per_edge[id] = er.space_function(er.get(id), "initial " + key);
      }
    }
    return f;
  }
  f.fallback = r.space_function(n, "initial " + key);
  return f;
}

void read_data(Reader& top, ExperimentConfig& cfg) {
  const NetworkGraph g = build_graph(cfg.topology);
  std::set<std::string> edges, boundary;
  for (const auto& e : g.edges()) edges.insert(e.id);
  for (std::size_t v : g.boundary_nodes()) boundary.insert(g.nodes()[v]);

  Reader data = top.section("data");
  Reader init = top.section("initial");
  YAML::Node bp = data.get("boundary_pressure");
  if (bp.IsDefined() && !bp.IsNull()) {
    if (!bp.IsMap()) data.fail(bp, "'boundary_pressure' maps boundary nodes to functions of t");
    for (const auto& kv : bp) {
      const std::string id = kv.first.as<std::string>();
      if (!boundary.count(id)) data.fail(kv.first, "'" + id + "' is not a boundary node");
      cfg.data.boundary_pressure[id] = data.time_function(kv.second, "boundary pressure at " + id);
    }
  }
  cfg.data.f = read_sources(data, "pressure_sources", edges);
  cfg.data.g = read_sources(data, "flux_sources", edges);
  data.finish();
  cfg.initial_pressure = read_initial(init, "pressure", edges);
  cfg.initial_flux = read_initial(init, "flux", edges);
  init.finish();

  YAML::Emitter em;
  em << YAML::BeginMap << YAML::Key << "data" << YAML::Value << data.node() << YAML::Key << "initial"
     << YAML::Value << init.node() << YAML::EndMap;
  cfg.data_fingerprint = em.c_str();
}

void read_parameters(Reader& top, ExperimentConfig& cfg) {
  Reader r = top.section("parameters");
  ParameterSampling& p = cfg.parameters;
  p.min = r.real("min", p.min);
  p.max = r.real("max", p.max);
  if (!(p.min > 0.0) || !(p.min < p.max)) r.fail(r.node(), "parameter domain needs 0 < min < max");
  p.train_count = static_cast<int>(r.integer("train_count", p.train_count));
  if (p.train_count < 1) r.fail(r.get("train_count"), "train_count must be at least 1");
  const std::string spacing = r.text("spacing", "log");
  if (spacing != "log" && spacing != "linear") r.fail(r.get("spacing"), "spacing is 'log' or 'linear'");
  p.log_spacing = spacing == "log";
  p.test_count = static_cast<int>(r.integer("test_count", p.test_count));
  if (p.test_count < 0) r.fail(r.get("test_count"), "test_count must be nonnegative");
  const long seed = r.integer("seed", static_cast<long>(p.seed));
  if (seed < 0) r.fail(r.get("seed"), "seed must be nonnegative");
  p.seed = static_cast<std::uint64_t>(seed);
  YAML::Node probe = r.get("probe");
  if (probe.IsDefined()) {
    p.probe.clear();
    if (probe.IsScalar()) {
      p.probe.push_back(r.real(probe, "'probe'"));
    } else if (probe.IsSequence()) {
      for (const auto& v : probe) p.probe.push_back(r.real(v, "'probe' entry"));
    } else if (!probe.IsNull()) {
      r.fail(probe, "'probe' is a number or a list of numbers");
    }
    for (double mu : p.probe)
      if (mu < p.min || mu > p.max) r.fail(probe, "probe parameter outside [min, max]");
  }
  r.finish();
  cfg.bound.mu_min = p.min;
  cfg.bound.mu_max = p.max;
}

void read_solver(Reader& top, ExperimentConfig& cfg) {
  Reader r = top.section("solver");
  cfg.solver.t_end = r.real("t_end", 20.0);
  cfg.solver.step = r.real("step", 0.02);
  cfg.solver.record_every = 1;
  try {
    (void)cfg.solver.steps();
  } catch (const ConfigError& e) {
    r.fail(r.node(), e.what());
  }
  r.finish();
}

void read_greedy(Reader& top, ExperimentConfig& cfg) {
  Reader r = top.section("greedy");
  GreedySettings& g = cfg.greedy;
  g.tolerance = r.real("tolerance", g.tolerance);
  if (!(g.tolerance >= 0.0)) r.fail(r.get("tolerance"), "tolerance must be nonnegative");
  g.n_max = r.integer("n_max", g.n_max);
  if (g.n_max < 1) r.fail(r.get("n_max"), "n_max must be positive");
  g.pca.max_modes = static_cast<int>(r.integer("max_modes", g.pca.max_modes));
  if (g.pca.max_modes < 1) r.fail(r.get("max_modes"), "max_modes must be positive");
  g.pca.energy_cutoff = r.real("energy_cutoff", g.pca.energy_cutoff);
  if (!(g.pca.energy_cutoff >= 0.0 && g.pca.energy_cutoff < 1.0))
    r.fail(r.get("energy_cutoff"), "energy_cutoff must lie in [0, 1)");
  const std::string ind = r.text("indicator", "delta");
  if (ind == "delta") {
    g.indicator = Indicator::Delta;
  } else if (ind == "delta_tilde") {
    g.indicator = Indicator::DeltaTilde;
  } else {
    r.fail(r.get("indicator"), "indicator is 'delta' or 'delta_tilde'");
  }
  const std::string exec = r.text("execution", "parallel");
  if (exec != "parallel" && exec != "serial") r.fail(r.get("execution"), "execution is 'parallel' or 'serial'");
  g.execution = exec == "parallel" ? Execution::Parallel : Execution::Serial;
  r.finish();
}

void read_bound(Reader& top, ExperimentConfig& cfg) {
  Reader r = top.section("bound");
  const std::string conv = r.text("poincare_convention", "sqrt");
  if (conv == "sqrt") {
    cfg.bound.convention = PoincareConvention::SquareRoot;
  } else if (conv == "eigenvalue") {
    cfg.bound.convention = PoincareConvention::Eigenvalue;
  } else {
    r.fail(r.get("poincare_convention"), "poincare_convention is 'sqrt' or 'eigenvalue'");
  }
  const std::string mode = r.text("constants_mode", "per_parameter");
  if (mode == "per_parameter") {
    cfg.bound.mode = ConstantsMode::PerParameter;
  } else if (mode == "worst_case") {
    cfg.bound.mode = ConstantsMode::WorstCase;
  } else {
    r.fail(r.get("constants_mode"), "constants_mode is 'per_parameter' or 'worst_case'");
  }
  r.finish();
}

}  // namespace

ExperimentConfig parse_config(const std::string& text, const std::filesystem::path& base_dir,
                              const std::string& name) {
  const YAML::Node doc = load_yaml(text, name);
  if (!doc.IsMap()) throw ConfigError(name + ":1:1: configuration must be a mapping");
  Reader top(name, doc, doc.Mark());
  ExperimentConfig cfg;
  cfg.source = name;

  read_network(top, base_dir, cfg);
  read_coefficients(top, cfg);
  cfg.cells_per_edge = static_cast<int>(top.integer("cells_per_edge", cfg.cells_per_edge));
  if (cfg.cells_per_edge < 1) top.fail(top.get("cells_per_edge"), "cells_per_edge must be positive");
  read_data(top, cfg);
  read_parameters(top, cfg);
  read_solver(top, cfg);
  read_greedy(top, cfg);
  read_bound(top, cfg);

  Reader test = top.section("test");
  YAML::Node grid = test.get("n_grid");
  if (grid.IsDefined() && !grid.IsNull()) {
    if (!grid.IsSequence()) test.fail(grid, "'n_grid' must be a list of basis sizes");
    for (const auto& v : grid) {
      const long n = test.integer(v, "'n_grid' entry");
      if (n < 0) test.fail(v, "basis sizes are nonnegative");
      cfg.n_grid.push_back(n);
    }
  }
  test.finish();
  Reader truth = top.section("truth");
  cfg.write_truth_states = truth.boolean("write_states", true);
  truth.finish();

  const std::string out = top.text("output_dir", "out");
  cfg.output_dir = (base_dir / out).lexically_normal();
  if (top.has("truth_cache_dir")) cfg.truth_cache_dir = (base_dir / top.text("truth_cache_dir", "")).lexically_normal();
  top.get("truth_cache_dir");
  top.finish();
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  const std::string text = read_file(path);
  std::filesystem::path base = path.parent_path();
  if (base.empty()) base = ".";
  return parse_config(text, base, path.string());
}

std::vector<double> training_set(const ParameterSampling& s) {
  std::vector<double> mus;
  if (s.train_count == 1) return {s.min};
  for (int i = 0; i < s.train_count; ++i) {
    const double r = static_cast<double>(i) / (s.train_count - 1);
    mus.push_back(s.log_spacing ? s.min * std::pow(s.max / s.min, r) : s.min + r * (s.max - s.min));
  }
  mus.back() = s.max;
  return mus;
}

std::vector<double> test_sample(const ParameterSampling& s, std::uint64_t seed) {
  // Uniform doubles built from the top 53 bits keep the draw independent of
  // the standard library's distribution implementation.
  std::mt19937_64 rng(seed);
  const double lo = std::log(s.min), hi = std::log(s.max);
  std::vector<double> mus;
  for (int i = 0; i < s.test_count; ++i) {
    const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
    mus.push_back(std::min(s.max, std::max(s.min, std::exp(lo + u * (hi - lo)))));
  }
  return mus;
}

}  // namespace netrb
