#include <cmath>
#include <memory>
#include <vector>

#include "doctest.h"
#include "mvb/bismut.hpp"
#include "mvb/hamiltonian.hpp"
#include "mvb/model.hpp"
#include "mvb/oracle.hpp"
#include "mvb/parallel.hpp"
#include "mvb/rng.hpp"
#include "mvb/simulate.hpp"
#include "mvb/stats.hpp"
#include "mvb/variational.hpp"

using namespace mvb;

namespace {

// m = d = 1 with a contracting degenerate block, for flow decay checks
class ContractingBlock : public HamiltonianModel {
 public:
  std::size_t dim_degenerate() const override { return 1; }
  std::size_t dim_driven() const override { return 1; }
  std::string id() const override { return "contracting_block_test"; }
  void b1(double, const double* x, double* out) const override { out[0] = -x[0] + x[1]; }
  void b1_grad1(double, const double*, double* out) const override { out[0] = -1.0; }
  void b1_grad2(double, const double*, double* out) const override { out[0] = 1.0; }
  void b2(double, const double*, const Measure&, double* out) const override { out[0] = 0.0; }
  void b2_grad(double, const double*, const Measure&, double* out) const override {
    out[0] = out[1] = 0.0;
  }
  void b2_lions(double, const double*, const Measure&, const double*, double* out) const override {
    out[0] = out[1] = 0.0;
  }
  void sigma(double, double* out) const override { out[0] = 1.0; }
  void control_matrix(double, double* out) const override { out[0] = 1.0; }
  double epsilon() const override { return 0.0; }
  double theta(double t, double T) const override {
    // crude positive lower bound for the damped Gramian
    return std::exp(-2.0 * T) * (T * t * t / 2.0 - t * t * t / 3.0);
  }
  bool adapted() const override { return true; }
};

// wraps a model and withdraws the adaptedness declaration
class NotAdapted : public HamiltonianModel {
 public:
  NotAdapted() : base_(make_kinetic_langevin()) {}
  std::size_t dim_degenerate() const override { return base_->dim_degenerate(); }
  std::size_t dim_driven() const override { return base_->dim_driven(); }
  std::string id() const override { return "not_adapted_test"; }
  void b1(double t, const double* x, double* out) const override { base_->b1(t, x, out); }
  void b1_grad1(double t, const double* x, double* out) const override {
    base_->b1_grad1(t, x, out);
  }
  void b1_grad2(double t, const double* x, double* out) const override {
    base_->b1_grad2(t, x, out);
  }
  void b2(double t, const double* x, const Measure& mu, double* out) const override {
    base_->b2(t, x, mu, out);
  }
  void b2_grad(double t, const double* x, const Measure& mu, double* out) const override {
    base_->b2_grad(t, x, mu, out);
  }
  void b2_lions(double t, const double* x, const Measure& mu, const double* z,
                double* out) const override {
    base_->b2_lions(t, x, mu, z, out);
  }
  void sigma(double t, double* out) const override { base_->sigma(t, out); }
  void control_matrix(double t, double* out) const override { base_->control_matrix(t, out); }
  double epsilon() const override { return 0.0; }
  double theta(double t, double T) const override { return base_->theta(t, T); }
  bool adapted() const override { return false; }

 private:
  std::shared_ptr<HamiltonianModel> base_;
};

Trajectory ham_path(const std::shared_ptr<HamiltonianModel>& hm, std::size_t n,
                    std::size_t steps, std::uint64_t seed) {
  auto adapter = hamiltonian_as_model(hm, 1.0, 1.0);
  std::vector<double> mean(hm->dim(), 0.0), sd(hm->dim(), 1.0);
  GaussianInitial init(mean, sd);
  TimeGrid grid(1.0, steps);
  return simulate(*adapter, init, grid, n, seed);
}

}  // namespace

TEST_CASE("controllability rank of the builtin pairs") {
  // chain A = [[0,1],[0,0]], B = (0,1): [B, AB] spans the plane
  KalmanResult kr = kalman_rank({0.0, 1.0, 0.0, 0.0}, 2, {0.0, 1.0}, 1, 2);
  CHECK(kr.rank == 2);
  CHECK(kr.satisfied);

  // A = 0 cannot move the first coordinate
  KalmanResult zero = kalman_rank({0.0, 0.0, 0.0, 0.0}, 2, {0.0, 1.0}, 1, 2);
  CHECK(zero.rank == 1);
  CHECK(!zero.satisfied);

  // velocity coupling with a scalar degenerate block
  KalmanResult kl = kalman_rank({0.0}, 1, {1.0}, 1, 1);
  CHECK(kl.rank == 1);
  CHECK(kl.satisfied);

  // empty degenerate block is trivially controllable
  KalmanResult none = kalman_rank({}, 0, {}, 1, 1);
  CHECK(none.satisfied);

  CHECK_THROWS_AS(kalman_rank({0.0, 1.0}, 2, {0.0, 1.0}, 1, 2), std::invalid_argument);
}

TEST_CASE("flow matrices are exact for nilpotent and constant blocks") {
  auto ex = make_example21_linear();
  Trajectory traj = ham_path(ex, 50, 40, 71);
  KFlow term = terminal_flow(*ex, traj);
  double T = 1.0;
  // (I + dt A)^j = I + j dt A when A^2 = 0, so the products are exact
  for (std::size_t k = 0; k <= 40; ++k) {
    double tau = T - traj.grid.t(k);
    for (std::size_t i = 0; i < 5; ++i) {
      const double* kt = term.at(k, i);
      CHECK(kt[0] == doctest::Approx(1.0).epsilon(1e-14));
      CHECK(kt[1] == doctest::Approx(tau).epsilon(1e-12));
      CHECK(kt[2] == doctest::Approx(0.0).epsilon(1e-14));
      CHECK(kt[3] == doctest::Approx(1.0).epsilon(1e-14));
    }
  }

  KFlow fwd = propagate_K(*ex, traj, 0);
  for (std::size_t k = 0; k <= 40; ++k) {
    double t = traj.grid.t(k);
    const double* kk = fwd.at(k, 3);
    CHECK(kk[0] == doctest::Approx(1.0).epsilon(1e-14));
    CHECK(kk[1] == doctest::Approx(t).epsilon(1e-12));
  }

  // contracting scalar block: backward product is (1 - dt)^(n-k)
  auto cb = std::make_shared<ContractingBlock>();
  Trajectory tc = ham_path(cb, 10, 1000, 72);
  KFlow tf = terminal_flow(*cb, tc);
  double want = std::pow(1.0 - tc.grid.dt, 1000);
  CHECK(*tf.at(0, 0) == doctest::Approx(want).epsilon(1e-12));
  CHECK(*tf.at(0, 0) == doctest::Approx(std::exp(-1.0)).epsilon(2e-3));
  CHECK(*tf.at(1000, 0) == 1.0);
}

TEST_CASE("gramian of the velocity model matches the closed form") {
  auto kl = make_kinetic_langevin();
  Trajectory traj = ham_path(kl, 8, 1000, 73);
  KFlow term = terminal_flow(*kl, traj);
  QResult qr = compute_Q(*kl, traj, term);
  double T = 1.0;
  for (std::size_t k : {100UL, 250UL, 500UL, 750UL, 1000UL}) {
    double t = traj.grid.t(k);
    double want = T * t * t / 2.0 - t * t * t / 3.0;
    for (std::size_t i = 0; i < 8; ++i)
      CHECK(*qr.at(k, i) == doctest::Approx(want).epsilon(1e-4));
  }
  CHECK(*qr.at(1000, 0) == doctest::Approx(1.0 / 6.0).epsilon(1e-5));
  CHECK(qr.violations == 0);
  CHECK(qr.worst_ratio >= 1.0);
}

TEST_CASE("gramian entries of the chain model match their integrals") {
  auto ex = make_example21_linear();
  Trajectory traj = ham_path(ex, 4, 1000, 74);
  KFlow term = terminal_flow(*ex, traj);
  QResult qr = compute_Q(*ex, traj, term);
  double T = 1.0;
  for (std::size_t k : {200UL, 600UL, 1000UL}) {
    double t = traj.grid.t(k);
    double t2 = t * t, t3 = t2 * t, t4 = t3 * t, t5 = t4 * t;
    double q11 = T * T * T * t2 / 2.0 - T * T * t3 + 3.0 * T * t4 / 4.0 - t5 / 5.0;
    double q12 = T * T * t2 / 2.0 - 2.0 * T * t3 / 3.0 + t4 / 4.0;
    double q22 = T * t2 / 2.0 - t3 / 3.0;
    const double* q = qr.at(k, 2);
    CHECK(q[0] == doctest::Approx(q11).epsilon(2e-4));
    CHECK(q[1] == doctest::Approx(q12).epsilon(2e-4));
    CHECK(q[2] == doctest::Approx(q12).epsilon(2e-4));
    CHECK(q[3] == doctest::Approx(q22).epsilon(2e-4));
  }
  CHECK(qr.violations == 0);
}

TEST_CASE("control paths start at the direction and park the driven block") {
  for (int which = 0; which < 2; ++which) {
    std::shared_ptr<HamiltonianModel> hm =
        which == 0 ? make_kinetic_langevin() : make_example21_linear();
    std::size_t full = hm->dim(), m = hm->dim_degenerate();
    Trajectory traj = ham_path(hm, 30, 80, 75);
    KFlow term = terminal_flow(*hm, traj);
    QResult qr = compute_Q(*hm, traj, term);
    std::vector<double> pv(full);
    for (std::size_t j = 0; j < full; ++j) pv[j] = 0.3 + 0.4 * static_cast<double>(j);
    ConstantDirection phi(pv);
    AlphaPaths ap = build_alpha(*hm, traj, phi, term, qr);
    REQUIRE(ap.values.size() == 81);
    for (std::size_t i = 0; i < 30; ++i) {
      for (std::size_t j = 0; j < full; ++j)
        CHECK(ap.values[0][i * full + j] == doctest::Approx(pv[j]).epsilon(1e-9));
      for (std::size_t j = m; j < full; ++j)
        CHECK(std::fabs(ap.values[80][i * full + j]) < 1e-9);
    }
  }
}

TEST_CASE("control plus response reproduces the variational flow") {
  // alpha + w telescopes into the same Euler recursion as the linearized flow
  // of the assembled system, whatever the control path is
  for (int which = 0; which < 2; ++which) {
    std::shared_ptr<HamiltonianModel> hm =
        which == 0 ? make_kinetic_langevin() : make_example21_linear();
    std::size_t full = hm->dim();
    auto adapter = hamiltonian_as_model(hm, 1.0, 1.0);
    std::vector<double> mean(full, 0.0), sd(full, 1.0);
    GaussianInitial init(mean, sd);
    TimeGrid grid(1.0, 60);
    Trajectory traj = simulate(*adapter, init, grid, 400, 76);

    KFlow term = terminal_flow(*hm, traj);
    QResult qr = compute_Q(*hm, traj, term);
    std::vector<double> pv(full, 1.0);
    pv[0] = -0.5;
    ConstantDirection phi(pv);
    AlphaPaths ap = build_alpha(*hm, traj, phi, term, qr);
    HWPaths hw = solve_h_w(*hm, traj, ap);

    VariationalPath v = propagate_v(*adapter, traj, phi);
    for (std::size_t k = 0; k <= 60; ++k)
      for (std::size_t idx = 0; idx < 400 * full; ++idx) {
        double z = ap.values[k][idx] + hw.w[k][idx];
        CHECK(z == doctest::Approx(v.values[k][idx]).epsilon(5e-9));
      }
  }
}

TEST_CASE("divergence is the plain increment pairing") {
  auto kl = make_kinetic_langevin();
  Trajectory traj = ham_path(kl, 300, 20, 77);
  std::vector<std::vector<double>> hp(20, std::vector<double>(300));
  for (std::size_t k = 0; k < 20; ++k)
    for (std::size_t i = 0; i < 300; ++i)
      hp[k][i] = std::sin(static_cast<double>(k + 1) * 0.1) + 0.01 * static_cast<double>(i);
  std::vector<double> div = divergence_adapted(*kl, traj, hp);
  for (std::size_t i = 0; i < 300; ++i) {
    double acc = 0.0;
    for (std::size_t k = 0; k < 20; ++k) acc += hp[k][i] * traj.dw[k][i];
    CHECK(div[i] == doctest::Approx(acc).epsilon(1e-13));
  }

  std::vector<std::vector<double>> wrong(19, std::vector<double>(300, 0.0));
  CHECK_THROWS_AS(divergence_adapted(*kl, traj, wrong), std::invalid_argument);
}

TEST_CASE("anticipative constructions are refused") {
  auto na = std::make_shared<NotAdapted>();
  Trajectory traj = ham_path(na, 50, 10, 78);
  std::vector<std::vector<double>> hp(10, std::vector<double>(50, 0.0));
  CHECK_THROWS_WITH_AS(
      divergence_adapted(*na, traj, hp),
      "anticipative divergence not supported; needs a linear degenerate block so the control "
      "is adapted",
      std::runtime_error);
  GaussianInitial init({0.0, 0.0}, {1.0, 1.0});
  TestFunction f1 = coordinate_f(2, 0);
  ConstantDirection phi({1.0, 0.0});
  CHECK_THROWS_AS(
      estimate_lions_derivative_degenerate(*na, f1, init, phi, TimeGrid(1.0, 10), 100, 1),
      std::runtime_error);
}

TEST_CASE("grid-level control agrees with the per-particle construction") {
  // same paths by two quadratures; they share endpoints exactly and differ
  // by the panel rule inside
  auto ex = make_example21_linear();
  TimeGrid grid(1.0, 400);
  DegenerateControl ctl = build_control(*ex, grid);
  CHECK(ctl.violations == 0);
  CHECK(ctl.worst_ratio >= 1.0);

  Trajectory traj = ham_path(ex, 3, 400, 79);
  KFlow term = terminal_flow(*ex, traj);
  QResult qr = compute_Q(*ex, traj, term);
  std::vector<double> pv = {0.7, -0.4, 1.1};
  ConstantDirection phi(pv);
  AlphaPaths ap = build_alpha(*ex, traj, phi, term, qr);

  for (std::size_t k = 0; k <= 400; ++k) {
    // alpha1 = m1a phi1 + m1b phi2, alpha2 = m2a phi2 + m2b phi1
    double a1[2], a2;
    a1[0] = ctl.m1a[k][0] * pv[0] + ctl.m1a[k][1] * pv[1] + ctl.m1b[k][0] * pv[2];
    a1[1] = ctl.m1a[k][2] * pv[0] + ctl.m1a[k][3] * pv[1] + ctl.m1b[k][1] * pv[2];
    a2 = ctl.m2a[k][0] * pv[2] + ctl.m2b[k][0] * pv[0] + ctl.m2b[k][1] * pv[1];
    CHECK(ap.values[k][0] == doctest::Approx(a1[0]).epsilon(0.02));
    CHECK(ap.values[k][1] == doctest::Approx(a1[1]).epsilon(0.02));
    CHECK(std::fabs(ap.values[k][2] - a2) < 0.02);
  }

  // endpoints are structural, not quadrature dependent
  CHECK(ctl.m2a[0][0] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(std::fabs(ctl.m2b[0][0]) < 1e-12);
  CHECK(std::fabs(ctl.m2a[400][0]) < 1e-12);
  CHECK(std::fabs(ctl.m2b[400][0]) < 1e-12);
  CHECK(ctl.m1a[0][0] == 1.0);
  CHECK(ctl.m1a[0][1] == 0.0);

  // stored terminal flow is the nilpotent closed form
  for (std::size_t k = 0; k <= 400; ++k) {
    double tau = 1.0 - grid.t(k);
    CHECK(ctl.k_terminal[k][0] == doctest::Approx(1.0).epsilon(1e-13));
    CHECK(ctl.k_terminal[k][1] == doctest::Approx(tau).epsilon(1e-11));
  }

  // analytic derivative paths against central differences of the paths
  double dt = grid.dt;
  for (std::size_t k = 40; k <= 360; k += 20) {
    double da = (ctl.m2a[k + 1][0] - ctl.m2a[k - 1][0]) / (2.0 * dt);
    CHECK(std::fabs(ctl.m2ap[k][0] - da) <= 2e-3 * (1.0 + std::fabs(da)));
    for (std::size_t j = 0; j < 2; ++j) {
      double db = (ctl.m2b[k + 1][j] - ctl.m2b[k - 1][j]) / (2.0 * dt);
      CHECK(std::fabs(ctl.m2bp[k][j] - db) <= 2e-3 * (1.0 + std::fabs(db)));
    }
  }
}

TEST_CASE("paired finite differences on the degenerate systems are deterministic") {
  // linear systems make the paired difference a constant: the position shift
  // reaches f = x1 with weight exactly 1, the velocity shift with weight T
  auto kl = make_kinetic_langevin();
  auto adapter = hamiltonian_as_model(kl, 1.0, 1.0);
  GaussianInitial init({0.0, 0.0}, {1.0, 1.0});
  TimeGrid grid(1.0, 50);
  TestFunction f1 = coordinate_f(2, 0);
  ConstantDirection pa({1.0, 0.0}), pb({0.0, 1.0});
  EstimatorResult fa = finite_diff_lions(*adapter, f1, init, pa, 1e-3, grid, 500, 80);
  EstimatorResult fb = finite_diff_lions(*adapter, f1, init, pb, 1e-3, grid, 500, 80);
  CHECK(fa.value == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(fa.std_error < 1e-9);
  CHECK(fb.value == doctest::Approx(1.0).epsilon(1e-9));  // horizon T = 1
  CHECK(fb.std_error < 1e-9);

  auto ex = make_example21_linear();
  auto adapter3 = hamiltonian_as_model(ex, 1.0, 1.0);
  GaussianInitial init3({0.0, 0.0, 0.0}, {1.0, 1.0, 1.0});
  TestFunction g1 = coordinate_f(3, 0);
  ConstantDirection qa({1.0, 0.0, 0.0}), qb({0.0, 1.0, 0.0});
  EstimatorResult ga = finite_diff_lions(*adapter3, g1, init3, qa, 1e-3, grid, 500, 81);
  EstimatorResult gb = finite_diff_lions(*adapter3, g1, init3, qb, 1e-3, grid, 500, 81);
  CHECK(ga.value == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(gb.value == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(ga.std_error < 1e-9);
}

TEST_CASE("degenerate estimator agrees with the paired oracle") {
  auto kl = make_kinetic_langevin();
  auto adapter = hamiltonian_as_model(kl, 1.0, 1.0);
  GaussianInitial init({0.0, 0.0}, {1.0, 1.0});
  TimeGrid grid(1.0, 200);
  TestFunction f1 = coordinate_f(2, 0);
  ConstantDirection pa({1.0, 0.0});
  EstimatorResult e = estimate_lions_derivative_degenerate(*kl, f1, init, pa, grid, 8000, 82);
  EstimatorResult f = finite_diff_lions(*adapter, f1, init, pa, 1e-3, grid, 8000, 82);
  CHECK(std::fabs(e.value - f.value) <= 3.0 * (e.std_error + f.std_error));

  auto ex = make_example21_linear();
  auto adapter3 = hamiltonian_as_model(ex, 1.0, 1.0);
  GaussianInitial init3({0.0, 0.0, 0.0}, {1.0, 1.0, 1.0});
  TimeGrid grid3(1.0, 100);
  TestFunction g1 = coordinate_f(3, 0);
  ConstantDirection phi({1.0, 1.0, 1.0});
  EstimatorResult e3 =
      estimate_lions_derivative_degenerate(*ex, g1, init3, phi, grid3, 8000, 83);
  EstimatorResult f3 = finite_diff_lions(*adapter3, g1, init3, phi, 1e-3, grid3, 8000, 83);
  CHECK(std::fabs(e3.value - f3.value) <= 3.0 * (e3.std_error + f3.std_error));
}

TEST_CASE("empty degenerate block reduces to the plain estimator") {
  auto ou = make_mean_field_ou(-1.0, 0.5, 1.0);
  auto driven = make_driven_only(ou);
  CHECK(driven->dim_degenerate() == 0);
  CHECK(driven->dim() == 1);

  GaussianInitial init({0.0}, {1.0});
  TimeGrid grid(1.0, 100);
  TestFunction fx = coordinate_f(1, 0);
  ConstantDirection one({1.0});
  EstimatorResult e =
      estimate_lions_derivative_degenerate(*driven, fx, init, one, grid, 20000, 84);
  double target = std::exp(-0.5);
  CHECK(std::fabs(e.value - target) <= 3.0 * e.std_error + 0.02);

  // both routes carry their own O(dt) bias, so allow a small slack on top
  EstimatorResult b =
      estimate_lions_derivative(*ou, fx, init, one, grid, 20000, 84, linear_g(1.0));
  CHECK(std::fabs(e.value - b.value) <= 3.0 * (e.std_error + b.std_error) + 0.01);
}

TEST_CASE("degenerate estimator is deterministic and thread independent") {
  auto kl = make_kinetic_langevin();
  GaussianInitial init({0.0, 0.0}, {1.0, 1.0});
  TimeGrid grid(1.0, 40);
  TestFunction f1 = coordinate_f(2, 0);
  ConstantDirection pa({1.0, 0.0});
  set_max_threads(1);
  EstimatorResult a = estimate_lions_derivative_degenerate(*kl, f1, init, pa, grid, 4000, 85);
  set_max_threads(4);
  EstimatorResult b = estimate_lions_derivative_degenerate(*kl, f1, init, pa, grid, 4000, 85);
  set_max_threads(0);
  CHECK(a.value == b.value);
  CHECK(a.std_error == b.std_error);
}

TEST_CASE("bound shape factor in closed form") {
  auto theta_lin = [](double t) { return t; };
  // sqrt(T) (T^2 + theta(T)) / integral of theta^2: T = 1 gives 2 / (1/3)
  CHECK(degenerate_bound_shape(1.0, theta_lin) == doctest::Approx(6.0).epsilon(1e-5));
  double want2 = std::sqrt(2.0) * (4.0 + 2.0) / (8.0 / 3.0);
  CHECK(degenerate_bound_shape(2.0, theta_lin) == doctest::Approx(want2).epsilon(1e-5));
  CHECK_THROWS_AS(degenerate_bound_shape(0.0, theta_lin), std::invalid_argument);
  CHECK_THROWS_AS(degenerate_bound_shape(1.0, [](double) { return 0.0; }),
                  std::invalid_argument);
}

TEST_CASE("assembled system exposes the block structure") {
  auto ex = make_example21_linear();
  auto adapter = hamiltonian_as_model(ex, 1.0, 1.0);
  CHECK(adapter->dim() == 3);
  CHECK(adapter->noise_dim() == 1);
  CHECK(adapter->constant_diffusion());

  Ensemble e(6, 3);
  rng::fill_normals(86, rng::stream_init, 0, 6, 0, 3, e.x.data());
  Measure mu(e);
  double x[3] = {0.4, -0.2, 0.9};
  double b[3];
  adapter->drift(0.0, x, mu, b);
  CHECK(b[0] == doctest::Approx(-0.2).epsilon(1e-14));
  CHECK(b[1] == doctest::Approx(0.9).epsilon(1e-14));
  CHECK(b[2] == doctest::Approx(-0.5 * 0.9 + 0.25 * mu.mean()[2]).epsilon(1e-12));

  double sig[3];
  adapter->diffusion(0.0, x, sig);
  CHECK(sig[0] == 0.0);
  CHECK(sig[1] == 0.0);
  CHECK(sig[2] == 1.0);

  CHECK_NOTHROW(check_model_consistency(*adapter, mu, 0.0, 10, 1e-5));

  // the dense kernel mean of the adapter equals the fast block version
  std::vector<double> u(6 * 3);
  rng::fill_normals(87, rng::stream_init, 0, 6, 0, 3, u.data());
  std::vector<double> fast(6 * 3);
  adapter->drift_lions_apply(0.0, mu, u.data(), fast.data());
  double mean_u2 = 0.0;
  for (std::size_t i = 0; i < 6; ++i) mean_u2 += u[i * 3 + 2];
  mean_u2 /= 6.0;
  for (std::size_t i = 0; i < 6; ++i) {
    CHECK(fast[i * 3 + 0] == 0.0);
    CHECK(fast[i * 3 + 1] == 0.0);
    CHECK(fast[i * 3 + 2] == doctest::Approx(0.25 * mean_u2).epsilon(1e-12));
  }
}

TEST_CASE("driven-only wrapper guards its requirements") {
  auto ou = make_mean_field_ou(-1.0, 0.5, 1.0);
  CHECK_NOTHROW(make_driven_only(ou));
  CHECK(make_driven_only(ou)->adapted());
}
