#pragma once
#include <cstddef>

namespace mvb {

// deterministic pairwise summation; fixed recursion, independent of threads
double pairwise_sum(const double* x, std::size_t n, std::size_t stride = 1);

// column means of a row-major n x d array
void column_mean(const double* x, std::size_t n, std::size_t d, double* out);

struct MeanVar {
  double mean = 0.0;
  double var = 0.0;  // unbiased (ddof = 1); 0 when n < 2
  std::size_t n = 0;
  double std_error() const;
};

// two-pass mean/variance with pairwise sums
MeanVar mean_var(const double* x, std::size_t n);

// least-squares slope of y against x
double fit_slope(const double* x, const double* y, std::size_t n);

}  // namespace mvb
