#include "mvb/stats.hpp"

#include <cmath>
#include <stdexcept>
#include <vector>

namespace mvb {

double pairwise_sum(const double* x, std::size_t n, std::size_t stride) {
  if (n <= 32) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += x[i * stride];
    return s;
  }
  std::size_t half = n / 2;
  return pairwise_sum(x, half, stride) + pairwise_sum(x + half * stride, n - half, stride);
}

void column_mean(const double* x, std::size_t n, std::size_t d, double* out) {
  if (n == 0) throw std::invalid_argument("empty ensemble");
  for (std::size_t j = 0; j < d; ++j)
    out[j] = pairwise_sum(x + j, n, d) / static_cast<double>(n);
}

double MeanVar::std_error() const {
  return n > 0 ? std::sqrt(var / static_cast<double>(n)) : 0.0;
}

MeanVar mean_var(const double* x, std::size_t n) {
  MeanVar r;
  r.n = n;
  if (n == 0) return r;
  r.mean = pairwise_sum(x, n) / static_cast<double>(n);
  if (n < 2) return r;
  std::vector<double> sq(n);
  for (std::size_t i = 0; i < n; ++i) {
    double c = x[i] - r.mean;
    sq[i] = c * c;
  }
  r.var = pairwise_sum(sq.data(), n) / static_cast<double>(n - 1);
  return r;
}

double fit_slope(const double* x, const double* y, std::size_t n) {
  if (n < 2) throw std::invalid_argument("slope fit needs at least 2 points");
  double mx = pairwise_sum(x, n) / n, my = pairwise_sum(y, n) / n;
  double sxx = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
  }
  if (sxx == 0.0) throw std::invalid_argument("slope fit: degenerate x values");
  return sxy / sxx;
}

}  // namespace mvb
