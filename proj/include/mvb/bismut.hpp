#pragma once
#include <functional>
#include <string>
#include <vector>

#include "mvb/grid.hpp"
#include "mvb/model.hpp"
#include "mvb/result.hpp"
#include "mvb/simulate.hpp"
#include "mvb/variational.hpp"

namespace mvb {

// time weight with g(0) = 0 and g(T) = 1; any C^1 choice gives the same
// expectation, only the variance changes
struct GFunction {
  std::string name;
  std::function<double(double)> g;
  std::function<double(double)> gp;
};

GFunction linear_g(double T);      // t / T
GFunction smoothstep_g(double T);  // 3 (t/T)^2 - 2 (t/T)^3

// endpoint identities exactly (1e-9) and g' vs central differences at the
// interior grid points (tolerance 1e-6)
void validate_g(const GFunction& g, const TimeGrid& grid);

// integrand per particle and step: sigma^{-1}(t_k, X^i_k) applied to
// g'(t_k) v^i_k + g(t_k) * (mean-field kernel term acting on v at step k)
std::vector<std::vector<double>> zeta(const Model& m, const Trajectory& traj,
                                      const VariationalPath& v, const GFunction& g);

// left-point Ito sum per particle: sum_k <zeta^i_k, dW^i_k>
std::vector<double> ito_weight(const Trajectory& traj,
                               const std::vector<std::vector<double>>& zeta);

struct BismutOptions {
  bool centered = true;  // subtract the sample mean of f(X_T) before weighting
};

// assembles value and standard error from terminal states and weights;
// shared by the staged path above and the one-pass driver below
EstimatorResult estimate_from_parts(const TestFunction& f, const EnsembleView& terminal,
                                    const std::vector<double>& weights,
                                    const BismutOptions& opt = {});

// one-pass driver: advances state, flow and weight together so the memory
// footprint stays O(N) regardless of the step count; bit-identical to the
// staged pipeline simulate + propagate_v + zeta + ito_weight
EstimatorResult estimate_lions_derivative(const Model& m, const TestFunction& f,
                                          const InitialSampler& init, const Direction& phi,
                                          const TimeGrid& grid, std::size_t n_particles,
                                          std::uint64_t seed, const GFunction& g,
                                          const BismutOptions& opt = {});

// closed-form bounds; integrand (1/T + K(t))^2 lambda(t)^2 e^{8 K(t) t} by the
// composite trapezoid rule on the grid
double gradient_norm_bound(const std::function<double(double)>& K,
                           const std::function<double(double)>& lambda, const TimeGrid& grid,
                           double variance_proxy);
double tv_bound(const std::function<double(double)>& K,
                const std::function<double(double)>& lambda, const TimeGrid& grid, double w2);

namespace detail {
// zeta for one step over a particle range; mf precomputed for the step
void zeta_range(const Model& m, double t, double gt, double gpt, const double* x,
                const double* v, const double* mf, double* zeta_out, std::size_t i0,
                std::size_t i1);
}  // namespace detail

}  // namespace mvb
