#pragma once
#include <cstdint>
#include <vector>

#include "mvb/grid.hpp"
#include "mvb/model.hpp"
#include "mvb/result.hpp"
#include "mvb/simulate.hpp"

namespace mvb {

// paired-path finite difference of the measure shift mu -> mu o (Id + eps phi)^{-1}:
// both ensembles share initial draws and Brownian increments, each evolves its
// own empirical law.  extra carries a half-step Richardson companion.
EstimatorResult finite_diff_lions(const Model& m, const TestFunction& f,
                                  const InitialSampler& init, const Direction& phi, double eps,
                                  const TimeGrid& grid, std::size_t n_particles,
                                  std::uint64_t seed);

// smooth-f estimator mean <grad f(X_T), v_T>; needs the gradient of f
EstimatorResult pathwise_lions(const Model& m, const TestFunction& f, const InitialSampler& init,
                               const Direction& phi, const TimeGrid& grid,
                               std::size_t n_particles, std::uint64_t seed);

// histogram total variation between two scalar sample sets on a shared
// equal-width binning; a lower-bound estimate of the true distance
struct TvEstimate {
  double value = 0.0;
  double std_error = 0.0;
  std::size_t n_bins = 0;
};

TvEstimate empirical_tv_detail(const std::vector<double>& a, const std::vector<double>& b,
                               std::size_t n_bins);
double empirical_tv(const std::vector<double>& a, const std::vector<double>& b,
                    std::size_t n_bins);

// piecewise-constant regression of the weight against the terminal state
// (scalar states only); empty bins keep count 0 and a NaN estimate
struct PsiRegression {
  double lo = 0.0;
  double hi = 0.0;
  std::vector<double> edges;       // n_bins + 1
  std::vector<double> psi;         // n_bins, NaN where empty
  std::vector<std::size_t> counts; // n_bins
};

PsiRegression conditional_weight_regression(const EnsembleView& terminal,
                                            const std::vector<double>& weights,
                                            std::size_t n_bins);

}  // namespace mvb
