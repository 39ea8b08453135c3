#pragma once
#include <cstdint>
#include <string>
#include <vector>

#include "mvb/ensemble.hpp"
#include "mvb/grid.hpp"
#include "mvb/model.hpp"

namespace mvb {

// full path of the interacting particle system plus the driving increments
struct Trajectory {
  TimeGrid grid;
  std::size_t n = 0;
  std::size_t dim = 0;
  std::size_t noise_dim = 0;
  std::uint64_t seed = 0;
  std::string model_id;
  std::vector<std::vector<double>> states;  // n_steps + 1 arrays, n * dim each
  std::vector<std::vector<double>> dw;      // n_steps arrays, n * noise_dim each

  EnsembleView at(std::size_t k) const { return {states[k].data(), n, dim}; }
};

// one Euler step: X <- X + b(t, X, mu) dt + sigma(t, X) dW, with mu the
// empirical measure of the incoming ensemble frozen across all particles
Ensemble euler_step(const Model& m, const Ensemble& ens, double t, double dt,
                    const std::vector<double>& noise);

Trajectory simulate(const Model& m, const InitialSampler& init, const TimeGrid& grid,
                    std::size_t n_particles, std::uint64_t seed);

// common-random-numbers clone: initial states shifted to x + eps*phi(x),
// same Brownian increments, the clone's own empirical law evolves freely
Trajectory clone_shifted(const Model& m, const Trajectory& traj, const Direction& phi,
                         double eps);

// Cameron-Martin shift with the law frozen to the base path: increments become
// dW + eps*h' dt while every measure argument is taken from base
Trajectory simulate_shifted_frozen_law(const Model& m, const Trajectory& base,
                                       const std::vector<std::vector<double>>& h_prime,
                                       double eps);

namespace detail {
// shared step kernel over a particle range (drivers precompute mu per step)
void sde_step_range(const Model& m, double t, double dt, const Measure& mu,
                    const double* x_in, const double* dw, double* x_out,
                    std::size_t i0, std::size_t i1);
void throw_if_exploded(const double* x, std::size_t n, std::size_t dim, double t);

// step-by-step access to the same increments a stored Trajectory would carry,
// without holding the whole path; used by the one-pass estimator drivers
class NoiseBuffer {
 public:
  NoiseBuffer(std::uint64_t seed, std::size_t n, std::size_t nd);
  // writes the step-k increments (already scaled by root_dt) into dwk, n * nd
  void fetch(std::size_t k, double root_dt, std::vector<double>& dwk);

 private:
  std::uint64_t seed_;
  std::size_t n_, nd_, group_;
  std::size_t loaded_ = static_cast<std::size_t>(-1);
  std::vector<double> z_;
};
}  // namespace detail

}  // namespace mvb
