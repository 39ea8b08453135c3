#pragma once
#include <cstdint>
#include <map>
#include <string>

namespace mvb {

struct EstimatorResult {
  std::string method;
  double value = 0.0;
  double std_error = 0.0;  // sample std / sqrt(n_samples)
  std::size_t n_samples = 0;
  double dt = 0.0;
  std::size_t n_particles = 0;
  std::uint64_t seed = 0;
  double wall_seconds = 0.0;
  std::map<std::string, double> extra;
};

}  // namespace mvb
