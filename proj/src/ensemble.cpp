#include "mvb/ensemble.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "mvb/stats.hpp"

namespace mvb {

Measure::Measure(EnsembleView v) : view_(v), mean_(v.dim, 0.0) {
  if (v.n == 0) throw std::invalid_argument("empty ensemble");
  column_mean(v.x, v.n, v.dim, mean_.data());
  std::vector<double> sq(v.n);
  for (std::size_t i = 0; i < v.n; ++i) {
    double s = 0.0;
    const double* xi = v.state(i);
    for (std::size_t j = 0; j < v.dim; ++j) s += xi[j] * xi[j];
    sq[i] = s;
  }
  m2_ = pairwise_sum(sq.data(), v.n) / static_cast<double>(v.n);
}

std::vector<double> empirical_mean(const EnsembleView& e) {
  if (e.n == 0) throw std::invalid_argument("empty ensemble");
  std::vector<double> out(e.dim);
  column_mean(e.x, e.n, e.dim, out.data());
  return out;
}

void check_finite(const EnsembleView& e, const char* what) {
  for (std::size_t i = 0; i < e.n * e.dim; ++i)
    if (!std::isfinite(e.x[i]))
      throw std::runtime_error(std::string(what) + ": non-finite state at particle " +
                               std::to_string(i / e.dim));
}

double wasserstein2(const EnsembleView& a, const EnsembleView& b) {
  if (a.n != b.n) throw std::invalid_argument("wasserstein2: particle counts differ");
  if (a.dim != b.dim) throw std::invalid_argument("wasserstein2: dimensions differ");
  if (a.n == 0) throw std::invalid_argument("empty ensemble");
  check_finite(a, "wasserstein2");
  check_finite(b, "wasserstein2");

  // sorted coupling per coordinate; the quantile coupling is the exact
  // optimal transport for d = 1
  std::vector<double> xa(a.n), xb(b.n), sq(a.n);
  double total = 0.0;
  for (std::size_t j = 0; j < a.dim; ++j) {
    for (std::size_t i = 0; i < a.n; ++i) {
      xa[i] = a.x[i * a.dim + j];
      xb[i] = b.x[i * b.dim + j];
    }
    std::sort(xa.begin(), xa.end());
    std::sort(xb.begin(), xb.end());
    for (std::size_t i = 0; i < a.n; ++i) {
      double dfc = xa[i] - xb[i];
      sq[i] = dfc * dfc;
    }
    total += pairwise_sum(sq.data(), a.n) / static_cast<double>(a.n);
  }
  return std::sqrt(total);
}

}  // namespace mvb
