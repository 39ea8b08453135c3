#pragma once
#include <cstddef>
#include <vector>

namespace mvb {

// N particle states in R^d, row-major
struct Ensemble {
  std::size_t n = 0;
  std::size_t dim = 0;
  std::vector<double> x;

  Ensemble() = default;
  Ensemble(std::size_t n_, std::size_t dim_) : n(n_), dim(dim_), x(n_ * dim_, 0.0) {}

  double* state(std::size_t i) { return x.data() + i * dim; }
  const double* state(std::size_t i) const { return x.data() + i * dim; }
};

struct EnsembleView {
  const double* x = nullptr;
  std::size_t n = 0;
  std::size_t dim = 0;

  EnsembleView() = default;
  EnsembleView(const double* x_, std::size_t n_, std::size_t dim_) : x(x_), n(n_), dim(dim_) {}
  EnsembleView(const Ensemble& e) : x(e.x.data()), n(e.n), dim(e.dim) {}
  const double* state(std::size_t i) const { return x + i * dim; }
};

// empirical measure view with eagerly cached moments (safe to share across threads)
class Measure {
 public:
  explicit Measure(EnsembleView v);

  const EnsembleView& view() const { return view_; }
  std::size_t size() const { return view_.n; }
  std::size_t dim() const { return view_.dim; }
  const double* mean() const { return mean_.data(); }
  double second_moment() const { return m2_; }  // mean |x|^2

 private:
  EnsembleView view_;
  std::vector<double> mean_;
  double m2_ = 0.0;
};

std::vector<double> empirical_mean(const EnsembleView& e);

// exact for d = 1 (sorted coupling); for d > 1 a sorted-per-coordinate
// surrogate (exact only in d = 1; see docs)
double wasserstein2(const EnsembleView& a, const EnsembleView& b);

void check_finite(const EnsembleView& e, const char* what);

}  // namespace mvb
