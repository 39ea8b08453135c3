#pragma once
#include <vector>

#include "mvb/model.hpp"
#include "mvb/simulate.hpp"

namespace mvb {

// linearized flow along a stored trajectory, same grid and increments
struct VariationalPath {
  enum class Kind { initial_direction, malliavin_direction };

  TimeGrid grid;
  Kind kind = Kind::initial_direction;
  std::size_t n = 0;
  std::size_t dim = 0;
  std::vector<std::vector<double>> values;  // n_steps + 1 arrays, n * dim each

  EnsembleView at(std::size_t k) const { return {values[k].data(), n, dim}; }
};

// derivative with respect to the initial condition: v_0 = phi(X_0), then
// dv = {grad_b v + mean-field kernel term} dt + {grad_v sigma} dW.  The
// mean-field term for particle i averages the kernel over peers j acting on v_j.
VariationalPath propagate_v(const Model& m, const Trajectory& traj, const Direction& phi);

// response to a Cameron-Martin shift with the law held fixed: w_0 = 0,
// dw = {grad_w sigma} dW + {grad_b w + sigma h'} dt, no measure-derivative terms.
// h_prime[k] holds either noise_dim values shared by all particles or
// n * noise_dim per-particle values.  Directions built from future information
// need adapted=false, which is only allowed for state-free diffusion.
VariationalPath propagate_w(const Model& m, const Trajectory& traj,
                            const std::vector<std::vector<double>>& h_prime,
                            bool adapted = true);

// consistency of w against an actual shifted simulation with frozen law:
// returns max over grid times of mean_i |(Y - X)/eps - w|; O(eps) for smooth
// coefficients, zero to rounding when the dynamics are linear in the state
double malliavin_shift_check(const Model& m, const Trajectory& traj,
                             const std::vector<std::vector<double>>& h_prime, double eps,
                             bool adapted = true);

// mean |v_{t_k}|^2 at every grid time, used by the second-moment growth check
std::vector<double> mean_square_norms(const VariationalPath& path);

namespace detail {
// one Euler step of the v flow over a particle range; mf holds the
// precomputed mean-field term per particle, smf the optional sigma kernel
// term as dim x noise_dim blocks (null when absent)
void v_step_range(const Model& m, double t, double dt, const Measure& mu, const double* x,
                  const double* v_in, const double* mf, const double* smf, const double* dw,
                  double* v_out, std::size_t i0, std::size_t i1);
// one Euler step of the w flow; hk is shared (noise_dim) or per-particle
void w_step_range(const Model& m, double t, double dt, const Measure& mu, const double* x,
                  const double* w_in, const double* hk, bool h_shared, const double* dw,
                  double* w_out, std::size_t i0, std::size_t i1);
}  // namespace detail

}  // namespace mvb
