#pragma once
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "mvb/ensemble.hpp"

namespace mvb {

// Coefficients of dX = b(t, X, mu) dt + sigma(t, X) dW.
// All callables must be deterministic pure functions of their arguments.
// Matrix outputs are row-major; drift_lions returns the measure-derivative
// kernel of b: row i is the derivative of b_i(x, .) at mu, evaluated at z.
class Model {
 public:
  virtual ~Model() = default;

  virtual std::size_t dim() const = 0;
  virtual std::size_t noise_dim() const { return dim(); }
  virtual std::string id() const = 0;

  virtual void drift(double t, const double* x, const Measure& mu, double* out) const = 0;
  virtual void drift_grad(double t, const double* x, const Measure& mu, double* out) const = 0;
  virtual void drift_lions(double t, const double* x, const Measure& mu, const double* z,
                           double* out) const = 0;

  virtual void diffusion(double t, const double* x, double* out) const = 0;  // dim x noise_dim
  // directional derivative (grad_u sigma)(t, x): dim x noise_dim; zero for state-free sigma
  virtual void diffusion_grad_apply(double t, const double* x, const double* u, double* out) const;
  virtual void diffusion_inv(double t, const double* x, double* out) const;  // square models only
  virtual bool constant_diffusion() const { return false; }

  // declared coefficient bounds: K dominates the operator norms of drift_grad and
  // drift_lions; lambda dominates the norm of diffusion_inv
  virtual double K_bound(double t) const = 0;
  virtual double lambda_bound(double t) const = 0;

  // mean-field action of the drift kernel on a field u over the ensemble:
  // out_i = (1/N) sum_j drift_lions(t, x_i, mu)(x_j) . u_j
  // default is the faithful O(N^2) double loop; separable models override
  virtual void drift_lions_apply(double t, const Measure& mu, const double* u, double* out) const;

  // measure-derivative kernel of sigma (general variational equation hook);
  // out_i = (1/N) sum_j D^L sigma(t, x_i, .)(mu)(x_j) . u_j as dim x noise_dim blocks.
  // Zero for every model with sigma(t, x); kept for the full flow equation.
  virtual bool has_sigma_lions() const { return false; }
  virtual void sigma_lions_apply(double t, const Measure& mu, const double* u, double* out) const;
};

// direction field phi: R^d -> R^d
class Direction {
 public:
  virtual ~Direction() = default;
  virtual std::size_t dim() const = 0;
  virtual void eval(const double* x, double* out) const = 0;
};

class ConstantDirection : public Direction {
 public:
  explicit ConstantDirection(std::vector<double> v) : v_(std::move(v)) {}
  std::size_t dim() const override { return v_.size(); }
  void eval(const double*, double* out) const override {
    for (std::size_t j = 0; j < v_.size(); ++j) out[j] = v_[j];
  }

 private:
  std::vector<double> v_;
};

class LinearDirection : public Direction {  // phi(x) = A x
 public:
  LinearDirection(std::size_t d, std::vector<double> a) : d_(d), a_(std::move(a)) {}
  std::size_t dim() const override { return d_; }
  void eval(const double* x, double* out) const override {
    for (std::size_t i = 0; i < d_; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < d_; ++j) s += a_[i * d_ + j] * x[j];
      out[i] = s;
    }
  }

 private:
  std::size_t d_;
  std::vector<double> a_;
};

// scalar test function with optional gradient
struct TestFunction {
  std::string name;
  std::function<double(const double*)> f;
  std::function<void(const double*, double*)> grad;  // null when not differentiable
  bool has_grad() const { return static_cast<bool>(grad); }
};

TestFunction coordinate_f(std::size_t d, std::size_t index);
TestFunction polynomial_f(std::size_t d, std::size_t index, std::vector<double> coeffs);
TestFunction indicator_f(std::size_t d, std::size_t index, double threshold);
TestFunction constant_f(std::size_t d, double value);

// i.i.d. initial draws; pure function of (seed, particle)
class InitialSampler {
 public:
  virtual ~InitialSampler() = default;
  virtual std::size_t dim() const = 0;
  virtual void sample(std::uint64_t seed, std::size_t i0, std::size_t i1, double* out) const = 0;
};

class GaussianInitial : public InitialSampler {
 public:
  GaussianInitial(std::vector<double> mean, std::vector<double> std);
  std::size_t dim() const override { return mean_.size(); }
  void sample(std::uint64_t seed, std::size_t i0, std::size_t i1, double* out) const override;

 private:
  std::vector<double> mean_, std_;
};

class PointInitial : public InitialSampler {
 public:
  explicit PointInitial(std::vector<double> v) : v_(std::move(v)) {}
  std::size_t dim() const override { return v_.size(); }
  void sample(std::uint64_t, std::size_t i0, std::size_t i1, double* out) const override {
    for (std::size_t i = i0; i < i1; ++i)
      for (std::size_t j = 0; j < v_.size(); ++j) out[(i - i0) * v_.size() + j] = v_[j];
  }

 private:
  std::vector<double> v_;
};

// built-in nondegenerate models
std::shared_ptr<Model> make_mean_field_ou(double a, double c, double sigma);
std::shared_ptr<Model> make_nonlinear_mv(double sigma);

// model sanity: finite differences of b in x match drift_grad at sampled points
void check_model_consistency(const Model& m, const Measure& mu, double t,
                             std::size_t n_points, double rel_tol);

}  // namespace mvb
