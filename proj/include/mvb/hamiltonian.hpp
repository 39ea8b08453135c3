#pragma once
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "mvb/grid.hpp"
#include "mvb/model.hpp"
#include "mvb/result.hpp"
#include "mvb/simulate.hpp"

namespace mvb {

// two-block system: dX1 = b1(t, X) dt (no noise, distribution-free),
// dX2 = b2(t, X, mu) dt + sigma(t) dW.  States are laid out as (x1, x2)
// in R^{m+d}; the noise is d-dimensional.
class HamiltonianModel {
 public:
  virtual ~HamiltonianModel() = default;

  virtual std::size_t dim_degenerate() const = 0;  // m, may be zero
  virtual std::size_t dim_driven() const = 0;      // d
  virtual std::string id() const = 0;
  std::size_t dim() const { return dim_degenerate() + dim_driven(); }

  virtual void b1(double t, const double* x, double* out) const = 0;        // m
  virtual void b1_grad1(double t, const double* x, double* out) const = 0;  // m x m
  virtual void b1_grad2(double t, const double* x, double* out) const = 0;  // m x d

  virtual void b2(double t, const double* x, const Measure& mu, double* out) const = 0;  // d
  virtual void b2_grad(double t, const double* x, const Measure& mu,
                       double* out) const = 0;  // d x (m+d)
  virtual void b2_lions(double t, const double* x, const Measure& mu, const double* z,
                        double* out) const = 0;  // d x (m+d) kernel
  // peer average of the kernel acting on a field u over the ensemble,
  // out_i = (1/N) sum_j b2_lions(t, x_i, mu)(x_j) . u_j; O(N^2) default
  virtual void b2_lions_apply(double t, const Measure& mu, const double* u, double* out) const;

  virtual void sigma(double t, double* out) const = 0;  // d x d, deterministic, invertible
  virtual void sigma_inv(double t, double* out) const;  // default: dense inverse of sigma
  virtual void control_matrix(double t, double* out) const = 0;  // B(t), m x d

  virtual double epsilon() const = 0;  // drift-alignment defect in [0, 1)
  // declared lower bound function for the controllability Gramian on horizon T
  virtual double theta(double t, double T) const = 0;
  // true when the constructed control is adapted (b1 linear in the state so
  // the Gramian machinery is deterministic); required by the estimator
  virtual bool adapted() const = 0;
};

// view of the full system as a plain SDE model (drift (b1, b2), block
// diffusion with zero rows on the degenerate block)
std::shared_ptr<Model> hamiltonian_as_model(std::shared_ptr<const HamiltonianModel> hm,
                                            double declared_K, double declared_lambda);

// built-ins
std::shared_ptr<HamiltonianModel> make_kinetic_langevin();   // m=d=1, b1=x2, b2=0, sigma=1
std::shared_ptr<HamiltonianModel> make_example21_linear();   // m=2, d=1, nilpotent drift block
// m=0 wrapper: no degenerate block, delegates everything to the base model;
// requires state-free diffusion
std::shared_ptr<HamiltonianModel> make_driven_only(std::shared_ptr<const Model> base);

struct KalmanResult {
  std::size_t rank = 0;
  bool satisfied = false;
};
// rank of [B, AB, ..., A^k B] with tolerance 1e-10 * largest singular value
KalmanResult kalman_rank(const std::vector<double>& A, std::size_t m,
                         const std::vector<double>& B, std::size_t d, std::size_t k_max);

// per-particle linearized flow of the degenerate block along the path:
// mats[k - s_index] holds n blocks of m x m for grid index k in [s_index, n]
struct KFlow {
  std::size_t s_index = 0;
  std::size_t n = 0;
  std::size_t m = 0;
  std::vector<std::vector<double>> mats;

  const double* at(std::size_t k, std::size_t i) const {
    return mats[k - s_index].data() + i * m * m;
  }
};

KFlow propagate_K(const HamiltonianModel& hm, const Trajectory& traj, std::size_t s_index);

// family K_{T, t_k} for every grid index k (backward products along the path);
// mats[k] holds the blocks taking time t_k to the horizon
KFlow terminal_flow(const HamiltonianModel& hm, const Trajectory& traj);

struct QResult {
  std::size_t n = 0;
  std::size_t m = 0;
  std::vector<std::vector<double>> q;  // (n_steps+1) arrays, n * m * m
  std::size_t violations = 0;          // grid points where the Gramian bound failed
  double worst_ratio = 1.0;            // min over checks of sigma_min(Q) * (1-eps) * theta slack ratio

  const double* at(std::size_t k, std::size_t i) const { return q[k].data() + i * m * m; }
};

// trapezoid Gramian along each particle path, checked against the declared
// theta with slack (1 + 10 dt); ill-conditioned terminal Gramian is fatal
QResult compute_Q(const HamiltonianModel& hm, const Trajectory& traj, const KFlow& terminal);

// per-particle control paths alpha = (alpha1, alpha2) built from the Gramian
// representation; alpha_0 = phi(X_0) and the driven block vanishes at T by
// construction
struct AlphaPaths {
  std::size_t n = 0;
  std::size_t m = 0;
  std::size_t d = 0;
  std::vector<std::vector<double>> values;  // (n_steps+1) arrays, n * (m+d)
};

AlphaPaths build_alpha(const HamiltonianModel& hm, const Trajectory& traj, const Direction& phi,
                       const KFlow& terminal, const QResult& qr);

// coupled forward system for the shift rate h' and the response w; the
// driven-block derivative of alpha is taken by forward differences of the
// supplied paths
struct HWPaths {
  std::size_t n = 0;
  std::size_t d = 0;
  std::size_t full = 0;                      // m + d
  std::vector<std::vector<double>> h_prime;  // n_steps arrays, n * d
  std::vector<std::vector<double>> w;        // (n_steps+1) arrays, n * (m+d)
};

HWPaths solve_h_w(const HamiltonianModel& hm, const Trajectory& traj, const AlphaPaths& alpha);

// left-point Ito sum per particle; only for adapted constructions
std::vector<double> divergence_adapted(const HamiltonianModel& hm, const Trajectory& traj,
                                       const std::vector<std::vector<double>>& h_prime);

// deterministic control pipeline for the adapted (linear degenerate block)
// class: grid-level matrix paths such that alpha^i_k = [paths](k) . phi(X^i_0),
// so the estimator never stores per-particle control paths
struct DegenerateControl {
  TimeGrid grid;
  std::size_t m = 0, d = 0;
  std::vector<std::vector<double>> k_terminal;          // K_{T,t_k}, m x m
  std::vector<std::vector<double>> q;                   // Gramian at t_k, m x m
  std::vector<std::vector<double>> m1a, m1b;            // alpha1 = m1a phi1 + m1b phi2
  std::vector<std::vector<double>> m2a, m2b;            // alpha2 = m2a phi2 + m2b phi1
  std::vector<std::vector<double>> m2ap, m2bp;          // time derivative of the above
  std::vector<double> theta_vals;                       // declared theta at grid times
  std::size_t violations = 0;
  double worst_ratio = 1.0;
};

DegenerateControl build_control(const HamiltonianModel& hm, const TimeGrid& grid);

// one-pass estimator for the degenerate system; adapted models only
EstimatorResult estimate_lions_derivative_degenerate(const HamiltonianModel& hm,
                                                     const TestFunction& f,
                                                     const InitialSampler& init,
                                                     const Direction& phi, const TimeGrid& grid,
                                                     std::size_t n_particles,
                                                     std::uint64_t seed);

// shape factor sqrt(T) (T^2 + theta(T)) / integral of theta^2 over [0, T]
double degenerate_bound_shape(double T, const std::function<double(double)>& theta,
                              std::size_t n_quad = 2000);

}  // namespace mvb
