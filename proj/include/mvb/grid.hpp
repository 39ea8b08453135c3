#pragma once
#include <cstddef>
#include <stdexcept>

namespace mvb {

// uniform grid on [0, T]; t_k = k*dt, dt = T/n_steps
struct TimeGrid {
  double T = 1.0;
  std::size_t n_steps = 1;
  double dt = 1.0;

  TimeGrid() = default;
  TimeGrid(double horizon, std::size_t steps)
      : T(horizon), n_steps(steps), dt(horizon / static_cast<double>(steps)) {
    if (!(horizon > 0.0)) throw std::invalid_argument("time grid: horizon must be > 0");
    if (steps == 0) throw std::invalid_argument("time grid: n_steps must be >= 1");
  }

  double t(std::size_t k) const { return dt * static_cast<double>(k); }
};

}  // namespace mvb
