#pragma once
#include <cstdint>
#include <limits>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "mvb/grid.hpp"
#include "mvb/hamiltonian.hpp"
#include "mvb/model.hpp"
#include "mvb/result.hpp"

namespace mvb {

struct ModelSpec {
  std::string id = "mean_field_ou";
  std::map<std::string, double> params;
};

// type: "gaussian" (mean, std per coordinate) or "point" (value); empty type
// means unset (only meaningful for the optional second law of a tv run)
struct InitialSpec {
  std::string type;
  std::vector<double> mean;
  std::vector<double> std_dev;
  std::vector<double> value;
  bool set() const { return !type.empty(); }
};

// type: "constant" (value, scalar broadcasts) or "linear" (row-major matrix)
struct PhiSpec {
  std::string type = "constant";
  std::vector<double> value;
  std::vector<double> matrix;
};

// type: "coordinate" | "polynomial" | "indicator" | "constant"
struct FSpec {
  std::string type = "coordinate";
  std::size_t index = 0;
  std::vector<double> coeffs;
  double threshold = 0.0;
  double value = 0.0;
};

struct ScenarioConfig {
  int version = 1;
  std::string name = "scenario";
  ModelSpec model;
  double horizon = 1.0;
  std::size_t n_steps = 100;
  std::size_t particles = 10000;
  std::uint64_t seed = 1;
  InitialSpec initial{"gaussian", {}, {}, {}};
  InitialSpec initial_b;  // second law for tv comparisons; unset by default
  PhiSpec phi;
  FSpec f;
  std::vector<std::string> methods;  // empty resolves to the model's defaults
  double epsilon = 1e-3;
  std::string g = "linear";
  std::size_t tv_bins = 0;  // 0 picks round(cbrt(n)) at run time
  std::string output;       // csv path; empty keeps results in memory

  TimeGrid grid() const { return {horizon, n_steps}; }
};

// json round trip; parse errors and schema violations throw with field names
ScenarioConfig parse_config(const std::string& text);
ScenarioConfig load_config(const std::string& path);
std::string serialize_config(const ScenarioConfig& cfg);
void validate_config(const ScenarioConfig& cfg);

struct ResultRow {
  std::string scenario;
  std::string method;
  double value = 0.0;
  double std_error = 0.0;
  std::size_t n_samples = 0;
  double dt = 0.0;
  std::size_t n_particles = 0;
  std::uint64_t seed = 0;
  double wall_time_seconds = 0.0;
};

ResultRow to_row(const std::string& scenario, const EstimatorResult& er);
std::string csv_header();
std::string to_csv(const std::vector<ResultRow>& rows);  // header + rows, %.17g
void write_csv(const std::string& path, const std::vector<ResultRow>& rows);

struct BuiltModel {
  std::shared_ptr<Model> model;
  std::shared_ptr<HamiltonianModel> hamiltonian;  // null for nondegenerate models
  bool degenerate() const { return static_cast<bool>(hamiltonian); }
};

std::vector<std::string> model_registry();
BuiltModel make_model(const ModelSpec& spec);

std::shared_ptr<InitialSampler> make_initial(const InitialSpec& spec, std::size_t dim);
std::shared_ptr<Direction> make_direction(const PhiSpec& spec, std::size_t dim);
TestFunction make_test_function(const FSpec& spec, std::size_t dim);

struct ScenarioRun {
  std::vector<ResultRow> rows;
  // pairwise |a - b| <= 3 (se_a + se_b) + (epsilon + dt) across the derivative
  // estimates (simulate rows excluded)
  bool agreement = true;
};

ScenarioRun run_scenario(const ScenarioConfig& cfg);

// histogram tv between the f-marginals of the terminal laws started from
// initial and initial_b, next to the closed-form bound fed with the initial
// Wasserstein distance; rows: empirical_tv then tv_bound
std::vector<ResultRow> run_tv_comparison(const ScenarioConfig& cfg);

struct SweepResult {
  std::string axis;
  std::vector<double> values;
  std::vector<ResultRow> rows;
  std::vector<double> gaps;  // per value: |value - reference| (dt, epsilon) or std error (N)
  double slope = 0.0;
  double reference = 0.0;
};

// axis "dt" (values are step sizes, slope of the bias against a supplied
// reference), "N" (particle counts, slope of the std error) or "epsilon"
// (finite-difference widths, slope of the gap to the pathwise value at shared
// seeds); needs at least 3 monotone values
SweepResult convergence_sweep(const ScenarioConfig& cfg, const std::string& axis,
                              const std::vector<double>& values,
                              double reference = std::numeric_limits<double>::quiet_NaN());

}  // namespace mvb
