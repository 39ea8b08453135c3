#include "mvb/scenario.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include "json.hpp"
#include "mvb/bismut.hpp"
#include "mvb/oracle.hpp"
#include "mvb/parallel.hpp"
#include "mvb/simulate.hpp"
#include "mvb/stats.hpp"

namespace mvb {

using ordered_json = nlohmann::ordered_json;

namespace {

[[noreturn]] void bad(const std::string& msg) { throw std::invalid_argument("config: " + msg); }

void check_keys(const ordered_json& j, const std::string& where,
                std::initializer_list<const char*> allowed) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (const char* k : allowed)
      if (it.key() == k) ok = true;
    if (!ok) bad(where + ": unknown field '" + it.key() + "'");
  }
}

double get_num(const ordered_json& j, const std::string& where, const char* key, double dflt) {
  if (!j.contains(key)) return dflt;
  if (!j.at(key).is_number()) bad(where + "." + key + " must be a number");
  return j.at(key).get<double>();
}

std::size_t get_size(const ordered_json& j, const std::string& where, const char* key,
                     std::size_t dflt) {
  if (!j.contains(key)) return dflt;
  const auto& v = j.at(key);
  if (!v.is_number_integer() && !v.is_number_unsigned())
    bad(where + "." + key + " must be an integer");
  if (v.is_number_integer() && v.get<long long>() < 0)
    bad(where + "." + key + " must be >= 0");
  return v.get<std::size_t>();
}

std::string get_str(const ordered_json& j, const std::string& where, const char* key,
                    const std::string& dflt) {
  if (!j.contains(key)) return dflt;
  if (!j.at(key).is_string()) bad(where + "." + key + " must be a string");
  return j.at(key).get<std::string>();
}

std::vector<double> get_vec(const ordered_json& j, const std::string& where, const char* key) {
  if (!j.contains(key)) return {};
  const auto& v = j.at(key);
  if (v.is_number()) return {v.get<double>()};
  if (!v.is_array()) bad(where + "." + key + " must be a number or an array of numbers");
  std::vector<double> out;
  for (const auto& e : v) {
    if (!e.is_number()) bad(where + "." + key + " must contain only numbers");
    out.push_back(e.get<double>());
  }
  return out;
}

InitialSpec parse_initial(const ordered_json& j, const std::string& where) {
  if (!j.is_object()) bad(where + " must be an object");
  check_keys(j, where, {"type", "mean", "std", "value"});
  InitialSpec s;
  s.type = get_str(j, where, "type", "gaussian");
  s.mean = get_vec(j, where, "mean");
  s.std_dev = get_vec(j, where, "std");
  s.value = get_vec(j, where, "value");
  return s;
}

ordered_json initial_json(const InitialSpec& s) {
  ordered_json j;
  j["type"] = s.type;
  if (s.type == "point") {
    j["value"] = s.value;
  } else {
    j["mean"] = s.mean;
    j["std"] = s.std_dev;
  }
  return j;
}

const std::set<std::string>& known_methods() {
  static const std::set<std::string> s = {"simulate",  "bismut",      "bismut_raw",
                                          "pathwise",  "finite_diff", "degenerate"};
  return s;
}

std::string fmt17(double v) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

// terminal-only pass; same increments and step kernel as the full simulator
std::vector<double> terminal_f_samples(const Model& m, const TestFunction& f,
                                       const InitialSampler& init, const TimeGrid& grid,
                                       std::size_t n, std::uint64_t seed) {
  std::size_t d = m.dim(), nd = m.noise_dim();
  std::vector<double> X(n * d), Xn(n * d), dwk;
  parallel_chunks(n, [&](std::size_t i0, std::size_t i1) {
    init.sample(seed, i0, i1, X.data() + i0 * d);
  });
  check_finite({X.data(), n, d}, "terminal pass: initial ensemble");
  detail::NoiseBuffer nb(seed, n, nd);
  double root_dt = std::sqrt(grid.dt);
  for (std::size_t k = 0; k < grid.n_steps; ++k) {
    double t = grid.t(k);
    Measure mu({X.data(), n, d});
    nb.fetch(k, root_dt, dwk);
    parallel_chunks(n, [&](std::size_t i0, std::size_t i1) {
      detail::sde_step_range(m, t, grid.dt, mu, X.data(), dwk.data(), Xn.data(), i0, i1);
    });
    detail::throw_if_exploded(Xn.data(), n, d, t);
    X.swap(Xn);
  }
  std::vector<double> fx(n);
  parallel_chunks(n, [&](std::size_t i0, std::size_t i1) {
    for (std::size_t i = i0; i < i1; ++i) fx[i] = f.f(X.data() + i * d);
  });
  return fx;
}

EstimatorResult terminal_mean(const Model& m, const TestFunction& f, const InitialSampler& init,
                              const TimeGrid& grid, std::size_t n, std::uint64_t seed) {
  auto t0 = std::chrono::steady_clock::now();
  std::vector<double> fx = terminal_f_samples(m, f, init, grid, n, seed);
  MeanVar mv = mean_var(fx.data(), n);
  EstimatorResult r;
  r.method = "simulate_mean";
  r.value = mv.mean;
  r.std_error = mv.std_error();
  r.n_samples = n;
  r.dt = grid.dt;
  r.n_particles = n;
  r.seed = seed;
  r.extra["f_variance"] = mv.var;
  r.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

bool monotone(const std::vector<double>& v) {
  bool inc = true, dec = true;
  for (std::size_t i = 1; i < v.size(); ++i) {
    if (!(v[i] > v[i - 1])) inc = false;
    if (!(v[i] < v[i - 1])) dec = false;
  }
  return inc || dec;
}

}  // namespace

ScenarioConfig parse_config(const std::string& text) {
  ordered_json j;
  try {
    j = ordered_json::parse(text);
  } catch (const std::exception& e) {
    bad(std::string("invalid json: ") + e.what());
  }
  if (!j.is_object()) bad("top level must be an object");
  check_keys(j, "top level",
             {"version", "scenario", "model", "grid", "particles", "seed", "initial",
              "initial_b", "phi", "f", "methods", "epsilon", "g", "tv_bins", "output"});
  if (!j.contains("version")) bad("missing 'version'");
  if (!j.at("version").is_number_integer() && !j.at("version").is_number_unsigned())
    bad("'version' must be an integer");

  ScenarioConfig c;
  c.version = j.at("version").get<int>();
  if (c.version != 1) bad("unsupported version " + std::to_string(c.version));
  c.name = get_str(j, "top level", "scenario", c.name);

  if (j.contains("model")) {
    const auto& m = j.at("model");
    if (!m.is_object()) bad("'model' must be an object");
    check_keys(m, "model", {"id", "params"});
    c.model.id = get_str(m, "model", "id", c.model.id);
    if (m.contains("params")) {
      const auto& p = m.at("params");
      if (!p.is_object()) bad("model.params must be an object");
      for (auto it = p.begin(); it != p.end(); ++it) {
        if (!it.value().is_number()) bad("model.params." + it.key() + " must be a number");
        c.model.params[it.key()] = it.value().get<double>();
      }
    }
  }

  if (j.contains("grid")) {
    const auto& g = j.at("grid");
    if (!g.is_object()) bad("'grid' must be an object");
    check_keys(g, "grid", {"T", "n_steps"});
    c.horizon = get_num(g, "grid", "T", c.horizon);
    c.n_steps = get_size(g, "grid", "n_steps", c.n_steps);
  }

  c.particles = get_size(j, "top level", "particles", c.particles);
  if (j.contains("seed")) {
    const auto& s = j.at("seed");
    if (!s.is_number_unsigned() && !(s.is_number_integer() && s.get<long long>() >= 0))
      bad("'seed' must be a nonnegative integer");
    c.seed = s.get<std::uint64_t>();
  }

  if (j.contains("initial")) c.initial = parse_initial(j.at("initial"), "initial");
  if (j.contains("initial_b")) c.initial_b = parse_initial(j.at("initial_b"), "initial_b");

  if (j.contains("phi")) {
    const auto& p = j.at("phi");
    if (!p.is_object()) bad("'phi' must be an object");
    check_keys(p, "phi", {"type", "value", "matrix"});
    c.phi.type = get_str(p, "phi", "type", c.phi.type);
    c.phi.value = get_vec(p, "phi", "value");
    c.phi.matrix = get_vec(p, "phi", "matrix");
  }

  if (j.contains("f")) {
    const auto& p = j.at("f");
    if (!p.is_object()) bad("'f' must be an object");
    check_keys(p, "f", {"type", "index", "coeffs", "threshold", "value"});
    c.f.type = get_str(p, "f", "type", c.f.type);
    c.f.index = get_size(p, "f", "index", 0);
    c.f.coeffs = get_vec(p, "f", "coeffs");
    c.f.threshold = get_num(p, "f", "threshold", 0.0);
    c.f.value = get_num(p, "f", "value", 0.0);
  }

  if (j.contains("methods")) {
    const auto& ms = j.at("methods");
    if (!ms.is_array()) bad("'methods' must be an array of strings");
    for (const auto& e : ms) {
      if (!e.is_string()) bad("'methods' must contain only strings");
      c.methods.push_back(e.get<std::string>());
    }
  }

  c.epsilon = get_num(j, "top level", "epsilon", c.epsilon);
  c.g = get_str(j, "top level", "g", c.g);
  c.tv_bins = get_size(j, "top level", "tv_bins", 0);
  c.output = get_str(j, "top level", "output", "");
  return c;
}

ScenarioConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read config: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string serialize_config(const ScenarioConfig& c) {
  ordered_json j;
  j["version"] = c.version;
  j["scenario"] = c.name;
  j["model"]["id"] = c.model.id;
  j["model"]["params"] = ordered_json::object();
  for (const auto& kv : c.model.params) j["model"]["params"][kv.first] = kv.second;
  j["grid"]["T"] = c.horizon;
  j["grid"]["n_steps"] = c.n_steps;
  j["particles"] = c.particles;
  j["seed"] = c.seed;
  j["initial"] = initial_json(c.initial);
  if (c.initial_b.set()) j["initial_b"] = initial_json(c.initial_b);
  j["phi"]["type"] = c.phi.type;
  if (c.phi.type == "linear")
    j["phi"]["matrix"] = c.phi.matrix;
  else
    j["phi"]["value"] = c.phi.value;
  j["f"]["type"] = c.f.type;
  if (c.f.type == "constant") {
    j["f"]["value"] = c.f.value;
  } else {
    j["f"]["index"] = c.f.index;
    if (c.f.type == "polynomial") j["f"]["coeffs"] = c.f.coeffs;
    if (c.f.type == "indicator") j["f"]["threshold"] = c.f.threshold;
  }
  j["methods"] = c.methods;
  j["epsilon"] = c.epsilon;
  j["g"] = c.g;
  if (c.tv_bins) j["tv_bins"] = c.tv_bins;
  if (!c.output.empty()) j["output"] = c.output;
  return j.dump(2);
}

std::vector<std::string> model_registry() {
  return {"mean_field_ou", "nonlinear_mv", "kinetic_langevin", "example21_linear"};
}

BuiltModel make_model(const ModelSpec& spec) {
  BuiltModel out;
  std::set<std::string> used;
  auto p = [&](const char* k, double dflt) {
    used.insert(k);
    auto it = spec.params.find(k);
    return it == spec.params.end() ? dflt : it->second;
  };
  if (spec.id == "mean_field_ou") {
    out.model = make_mean_field_ou(p("a", -1.0), p("c", 0.5), p("sigma", 1.0));
  } else if (spec.id == "nonlinear_mv") {
    out.model = make_nonlinear_mv(p("sigma", 1.0));
  } else if (spec.id == "kinetic_langevin") {
    out.hamiltonian = make_kinetic_langevin();
    out.model = hamiltonian_as_model(out.hamiltonian, 1.0, 1.0);
  } else if (spec.id == "example21_linear") {
    out.hamiltonian = make_example21_linear();
    out.model = hamiltonian_as_model(out.hamiltonian, 1.5, 1.0);
  } else {
    throw std::invalid_argument("unknown model id: " + spec.id);
  }
  for (const auto& kv : spec.params)
    if (!used.count(kv.first))
      bad("model " + spec.id + ": unknown parameter '" + kv.first + "'");
  return out;
}

std::shared_ptr<InitialSampler> make_initial(const InitialSpec& spec, std::size_t dim) {
  auto broadcast = [&](const std::vector<double>& v, const char* what,
                       double dflt) -> std::vector<double> {
    if (v.empty()) return std::vector<double>(dim, dflt);
    if (v.size() == 1) return std::vector<double>(dim, v[0]);
    if (v.size() != dim) bad(std::string("initial.") + what + " length must be 1 or the model dimension");
    return v;
  };
  if (spec.type == "gaussian") {
    std::vector<double> mean = broadcast(spec.mean, "mean", 0.0);
    std::vector<double> sd = broadcast(spec.std_dev, "std", 1.0);
    for (double s : sd)
      if (!(s > 0.0)) bad("initial.std must be > 0");
    return std::make_shared<GaussianInitial>(std::move(mean), std::move(sd));
  }
  if (spec.type == "point") {
    return std::make_shared<PointInitial>(broadcast(spec.value, "value", 0.0));
  }
  bad("initial.type must be 'gaussian' or 'point'");
}

std::shared_ptr<Direction> make_direction(const PhiSpec& spec, std::size_t dim) {
  if (spec.type == "constant") {
    std::vector<double> v = spec.value;
    if (v.empty()) v.assign(dim, 1.0);
    if (v.size() == 1 && dim > 1) v.assign(dim, spec.value[0]);
    if (v.size() != dim) bad("phi.value length must be 1 or the model dimension");
    return std::make_shared<ConstantDirection>(std::move(v));
  }
  if (spec.type == "linear") {
    std::vector<double> a = spec.matrix;
    if (a.empty()) {
      a.assign(dim * dim, 0.0);
      for (std::size_t i = 0; i < dim; ++i) a[i * dim + i] = 1.0;
    } else if (a.size() == 1) {
      double s = a[0];
      a.assign(dim * dim, 0.0);
      for (std::size_t i = 0; i < dim; ++i) a[i * dim + i] = s;
    } else if (a.size() != dim * dim) {
      bad("phi.matrix length must be 1 or dim*dim");
    }
    return std::make_shared<LinearDirection>(dim, std::move(a));
  }
  bad("phi.type must be 'constant' or 'linear'");
}

TestFunction make_test_function(const FSpec& spec, std::size_t dim) {
  if (spec.type != "constant" && spec.index >= dim) bad("f.index out of range");
  if (spec.type == "coordinate") return coordinate_f(dim, spec.index);
  if (spec.type == "polynomial") {
    if (spec.coeffs.empty()) bad("f.coeffs must be nonempty");
    return polynomial_f(dim, spec.index, spec.coeffs);
  }
  if (spec.type == "indicator") return indicator_f(dim, spec.index, spec.threshold);
  if (spec.type == "constant") return constant_f(dim, spec.value);
  bad("f.type must be 'coordinate', 'polynomial', 'indicator' or 'constant'");
}

void validate_config(const ScenarioConfig& c) {
  if (c.version != 1) bad("unsupported version " + std::to_string(c.version));
  if (c.name.empty()) bad("scenario name must be nonempty");
  for (char ch : c.name)
    if (ch == ',' || ch == '"' || ch == '\n' || ch == '\r')
      bad("scenario name must not contain commas, quotes or newlines");
  if (!(c.horizon > 0.0)) bad("grid.T must be > 0");
  if (c.n_steps == 0) bad("grid.n_steps must be >= 1");
  if (c.particles < 2) bad("particles must be >= 2");
  if (!(c.epsilon > 0.0)) bad("epsilon must be > 0");
  if (c.g != "linear" && c.g != "smoothstep") bad("g must be 'linear' or 'smoothstep'");
  if (c.tv_bins == 1) bad("tv_bins must be 0 (auto) or >= 2");

  BuiltModel bm = make_model(c.model);
  std::size_t dim = bm.model->dim();
  make_initial(c.initial, dim);
  if (c.initial_b.set()) make_initial(c.initial_b, dim);
  make_direction(c.phi, dim);
  TestFunction f = make_test_function(c.f, dim);

  bool square = bm.model->noise_dim() == dim;
  for (const auto& m : c.methods) {
    if (!known_methods().count(m)) bad("unknown method '" + m + "'");
    if (m == "degenerate" && !bm.degenerate())
      bad("method 'degenerate' needs a degenerate model");
    if ((m == "bismut" || m == "bismut_raw" || m == "pathwise") && !square)
      bad("method '" + m + "' needs square invertible diffusion; use 'degenerate'");
    if (m == "pathwise" && !f.has_grad()) bad("method 'pathwise' needs a differentiable f");
  }
}

ResultRow to_row(const std::string& scenario, const EstimatorResult& er) {
  ResultRow r;
  r.scenario = scenario;
  r.method = er.method;
  r.value = er.value;
  r.std_error = er.std_error;
  r.n_samples = er.n_samples;
  r.dt = er.dt;
  r.n_particles = er.n_particles;
  r.seed = er.seed;
  r.wall_time_seconds = er.wall_seconds;
  return r;
}

std::string csv_header() {
  return "scenario,method,value,std_error,n_samples,dt,N,seed,wall_time_seconds";
}

std::string to_csv(const std::vector<ResultRow>& rows) {
  std::string out = csv_header();
  out += '\n';
  for (const auto& r : rows) {
    out += r.scenario;
    out += ',';
    out += r.method;
    out += ',';
    out += fmt17(r.value);
    out += ',';
    out += fmt17(r.std_error);
    out += ',';
    out += std::to_string(r.n_samples);
    out += ',';
    out += fmt17(r.dt);
    out += ',';
    out += std::to_string(r.n_particles);
    out += ',';
    out += std::to_string(r.seed);
    out += ',';
    out += fmt17(r.wall_time_seconds);
    out += '\n';
  }
  return out;
}

void write_csv(const std::string& path, const std::vector<ResultRow>& rows) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write csv: " + path);
  out << to_csv(rows);
  if (!out) throw std::runtime_error("cannot write csv: " + path);
}

ScenarioRun run_scenario(const ScenarioConfig& cfg) {
  validate_config(cfg);
  BuiltModel bm = make_model(cfg.model);
  const Model& m = *bm.model;
  std::size_t dim = m.dim();
  auto init = make_initial(cfg.initial, dim);
  auto phi = make_direction(cfg.phi, dim);
  TestFunction f = make_test_function(cfg.f, dim);
  TimeGrid grid = cfg.grid();

  std::vector<std::string> methods = cfg.methods;
  if (methods.empty()) {
    if (bm.degenerate())
      methods = {"degenerate", "finite_diff"};
    else if (f.has_grad())
      methods = {"bismut", "pathwise", "finite_diff"};
    else
      methods = {"bismut", "finite_diff"};
  }

  ScenarioRun out;
  for (const auto& method : methods) {
    EstimatorResult er;
    if (method == "simulate") {
      er = terminal_mean(m, f, *init, grid, cfg.particles, cfg.seed);
    } else if (method == "bismut" || method == "bismut_raw") {
      GFunction g = cfg.g == "smoothstep" ? smoothstep_g(grid.T) : linear_g(grid.T);
      BismutOptions opt;
      opt.centered = (method == "bismut");
      er = estimate_lions_derivative(m, f, *init, *phi, grid, cfg.particles, cfg.seed, g, opt);
    } else if (method == "pathwise") {
      er = pathwise_lions(m, f, *init, *phi, grid, cfg.particles, cfg.seed);
    } else if (method == "finite_diff") {
      er = finite_diff_lions(m, f, *init, *phi, cfg.epsilon, grid, cfg.particles, cfg.seed);
    } else {  // degenerate
      er = estimate_lions_derivative_degenerate(*bm.hamiltonian, f, *init, *phi, grid,
                                                cfg.particles, cfg.seed);
    }
    out.rows.push_back(to_row(cfg.name, er));
  }

  double slack = cfg.epsilon + grid.dt;
  for (std::size_t i = 0; i < out.rows.size(); ++i) {
    if (out.rows[i].method == "simulate_mean") continue;
    for (std::size_t k = i + 1; k < out.rows.size(); ++k) {
      if (out.rows[k].method == "simulate_mean") continue;
      double gap = std::fabs(out.rows[i].value - out.rows[k].value);
      double tol = 3.0 * (out.rows[i].std_error + out.rows[k].std_error) + slack;
      if (gap > tol) out.agreement = false;
    }
  }

  if (!cfg.output.empty()) write_csv(cfg.output, out.rows);
  return out;
}

std::vector<ResultRow> run_tv_comparison(const ScenarioConfig& cfg) {
  validate_config(cfg);
  if (!cfg.initial_b.set()) bad("tv comparison needs 'initial_b'");
  BuiltModel bm = make_model(cfg.model);
  const Model& m = *bm.model;
  std::size_t dim = m.dim();
  auto ia = make_initial(cfg.initial, dim);
  auto ib = make_initial(cfg.initial_b, dim);
  TestFunction f = make_test_function(cfg.f, dim);
  TimeGrid grid = cfg.grid();
  std::size_t n = cfg.particles;

  auto t0 = std::chrono::steady_clock::now();
  std::vector<double> fa = terminal_f_samples(m, f, *ia, grid, n, cfg.seed);
  std::vector<double> fb = terminal_f_samples(m, f, *ib, grid, n, cfg.seed + 1);
  std::size_t bins = cfg.tv_bins
                         ? cfg.tv_bins
                         : std::max<std::size_t>(2, (std::size_t)std::llround(std::cbrt((double)n)));
  TvEstimate tv = empirical_tv_detail(fa, fb, bins);
  double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  // initial-law distance feeding the bound, from the same draws the runs saw
  std::vector<double> xa(n * dim), xb(n * dim);
  parallel_chunks(n, [&](std::size_t i0, std::size_t i1) {
    ia->sample(cfg.seed, i0, i1, xa.data() + i0 * dim);
    ib->sample(cfg.seed + 1, i0, i1, xb.data() + i0 * dim);
  });
  double w2 = wasserstein2({xa.data(), n, dim}, {xb.data(), n, dim});
  double bound = tv_bound([&](double t) { return m.K_bound(t); },
                          [&](double t) { return m.lambda_bound(t); }, grid, w2);

  std::vector<ResultRow> rows;
  ResultRow r;
  r.scenario = cfg.name;
  r.method = "empirical_tv";
  r.value = tv.value;
  r.std_error = tv.std_error;
  r.n_samples = n;
  r.dt = grid.dt;
  r.n_particles = n;
  r.seed = cfg.seed;
  r.wall_time_seconds = wall;
  rows.push_back(r);
  r.method = "tv_bound";
  r.value = bound;
  r.std_error = 0.0;
  r.wall_time_seconds = 0.0;
  rows.push_back(r);
  if (!cfg.output.empty()) write_csv(cfg.output, rows);
  return rows;
}

SweepResult convergence_sweep(const ScenarioConfig& cfg0, const std::string& axis,
                              const std::vector<double>& values, double reference) {
  if (axis != "dt" && axis != "N" && axis != "epsilon")
    throw std::invalid_argument("convergence_sweep: axis must be 'dt', 'N' or 'epsilon'");
  if (values.size() < 3) throw std::invalid_argument("convergence_sweep: need at least 3 values");
  if (!monotone(values)) throw std::invalid_argument("convergence_sweep: values must be monotone");
  for (double v : values)
    if (!(v > 0.0)) throw std::invalid_argument("convergence_sweep: values must be > 0");

  ScenarioConfig cfg = cfg0;
  cfg.output.clear();
  BuiltModel bm = make_model(cfg.model);
  std::string method = cfg.methods.empty() ? (bm.degenerate() ? "degenerate" : "bismut")
                                           : cfg.methods.front();

  SweepResult out;
  out.axis = axis;
  out.values = values;
  std::vector<double> lx, ly;

  if (axis == "dt") {
    if (!std::isfinite(reference))
      throw std::invalid_argument("convergence_sweep: dt axis needs a finite reference value");
    out.reference = reference;
    for (double v : values) {
      ScenarioConfig c = cfg;
      c.methods = {method};
      c.n_steps = std::max<std::size_t>(1, (std::size_t)std::llround(cfg.horizon / v));
      ResultRow row = run_scenario(c).rows.at(0);
      out.rows.push_back(row);
      double gap = std::fabs(row.value - reference);
      out.gaps.push_back(gap);
      if (gap > 0.0) {
        lx.push_back(std::log(row.dt));
        ly.push_back(std::log(gap));
      }
    }
  } else if (axis == "N") {
    for (double v : values) {
      ScenarioConfig c = cfg;
      c.methods = {method};
      c.particles = (std::size_t)std::llround(v);
      ResultRow row = run_scenario(c).rows.at(0);
      out.rows.push_back(row);
      out.gaps.push_back(row.std_error);
      if (row.std_error > 0.0) {
        lx.push_back(std::log((double)c.particles));
        ly.push_back(std::log(row.std_error));
      }
    }
  } else {
    ScenarioConfig c = cfg;
    c.methods = {"pathwise"};
    ResultRow ref = run_scenario(c).rows.at(0);
    out.reference = ref.value;
    out.rows.push_back(ref);
    for (double v : values) {
      ScenarioConfig ce = cfg;
      ce.methods = {"finite_diff"};
      ce.epsilon = v;
      ResultRow row = run_scenario(ce).rows.at(0);
      out.rows.push_back(row);
      double gap = std::fabs(row.value - ref.value);
      out.gaps.push_back(gap);
      if (gap > 0.0) {
        lx.push_back(std::log(v));
        ly.push_back(std::log(gap));
      }
    }
  }

  if (lx.size() < 2) throw std::runtime_error("convergence_sweep: too few nonzero gaps to fit");
  out.slope = fit_slope(lx.data(), ly.data(), lx.size());
  return out;
}

}  // namespace mvb
