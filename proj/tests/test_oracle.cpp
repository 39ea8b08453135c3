#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

#include "doctest.h"
#include "mvb/model.hpp"
#include "mvb/oracle.hpp"
#include "mvb/simulate.hpp"

using namespace mvb;

TEST_CASE("paired difference of a constant observable vanishes identically") {
  auto ou = make_mean_field_ou(-1.0, 0.5, 1.0);
  GaussianInitial init({0.0}, {1.0});
  ConstantDirection one({1.0});
  EstimatorResult r =
      finite_diff_lions(*ou, constant_f(1, 3.0), init, one, 1e-3, TimeGrid(1.0, 30), 400, 90);
  CHECK(r.value == 0.0);
  CHECK(r.std_error == 0.0);
  CHECK(r.method == "finite_diff");
  CHECK(r.n_samples == 400);
}

TEST_CASE("paired difference is deterministic on the linear model") {
  // shifting every particle by eps moves the mean too, so the discrete
  // propagation factor includes the interaction: (1 + (a + c) dt)^n
  double a = -1.0, c = 0.5;
  auto ou = make_mean_field_ou(a, c, 1.0);
  GaussianInitial init({0.0}, {1.0});
  ConstantDirection one({1.0});
  TimeGrid grid(1.0, 100);
  TestFunction fx = coordinate_f(1, 0);
  EstimatorResult r = finite_diff_lions(*ou, fx, init, one, 1e-3, grid, 500, 91);
  double m = std::pow(1.0 + (a + c) * grid.dt, 100);
  CHECK(r.value == doctest::Approx(m).epsilon(1e-9));
  CHECK(r.std_error < 1e-8);
  // for f linear the difference quotient has no epsilon dependence at all
  CHECK(r.extra.at("epsilon") == 1e-3);
  CHECK(r.extra.at("value_eps_half") == doctest::Approx(m).epsilon(1e-9));
  CHECK(r.extra.at("se_eps_half") < 1e-8);

  // flipping the direction flips the value
  std::vector<double> neg = {-1.0};
  EstimatorResult rn = finite_diff_lions(*ou, fx, init, ConstantDirection(neg), 1e-3, grid, 500, 91);
  CHECK(rn.value == doctest::Approx(-m).epsilon(1e-9));
}

TEST_CASE("half-step companion is the half-step run") {
  auto ou = make_mean_field_ou(-1.0, 0.5, 1.0);
  GaussianInitial init({0.0}, {1.0});
  ConstantDirection one({1.0});
  TimeGrid grid(1.0, 60);
  TestFunction fsq = polynomial_f(1, 0, {0.0, 0.0, 1.0});
  EstimatorResult full = finite_diff_lions(*ou, fsq, init, one, 1e-2, grid, 800, 92);
  EstimatorResult half = finite_diff_lions(*ou, fsq, init, one, 5e-3, grid, 800, 92);
  // same draws, same shifted initial points, so this is bitwise
  CHECK(half.value == full.extra.at("value_eps_half"));
  CHECK(half.std_error == full.extra.at("se_eps_half"));
}

TEST_CASE("smooth-observable estimator is exact for the linear model") {
  double a = -1.0, c = 0.5;
  auto ou = make_mean_field_ou(a, c, 1.0);
  GaussianInitial init({0.0}, {1.0});
  ConstantDirection one({1.0});
  TimeGrid grid(1.0, 100);
  EstimatorResult r = pathwise_lions(*ou, coordinate_f(1, 0), init, one, grid, 500, 93);
  double m = std::pow(1.0 + (a + c) * grid.dt, 100);
  CHECK(r.value == doctest::Approx(m).epsilon(1e-11));
  CHECK(r.std_error < 1e-10);
  CHECK(r.method == "pathwise");
}

TEST_CASE("difference-quotient bias is linear in epsilon for a quadratic observable") {
  // on the linear model the paired difference for f = x^2 is
  // 2 m X_T + eps m^2 per particle, so the gap to the smooth estimator
  // halves exactly with eps
  auto ou = make_mean_field_ou(-1.0, 0.5, 1.0);
  GaussianInitial init({0.0}, {1.0});
  ConstantDirection one({1.0});
  TimeGrid grid(1.0, 80);
  TestFunction fsq = polynomial_f(1, 0, {0.0, 0.0, 1.0});
  EstimatorResult pw = pathwise_lions(*ou, fsq, init, one, grid, 600, 94);
  EstimatorResult f1 = finite_diff_lions(*ou, fsq, init, one, 2e-2, grid, 600, 94);
  EstimatorResult f2 = finite_diff_lions(*ou, fsq, init, one, 1e-2, grid, 600, 94);
  double m = std::pow(1.0 - 0.5 * grid.dt, 80);
  double gap1 = f1.value - pw.value;
  double gap2 = f2.value - pw.value;
  CHECK(gap1 == doctest::Approx(2e-2 * m * m).epsilon(1e-8));
  CHECK(gap2 == doctest::Approx(1e-2 * m * m).epsilon(1e-8));
  CHECK(gap1 / gap2 == doctest::Approx(2.0).epsilon(1e-8));
}

TEST_CASE("smooth and paired estimators agree on the nonlinear model") {
  auto nl = make_nonlinear_mv(1.0);
  GaussianInitial init({0.2}, {0.8});
  ConstantDirection one({1.0});
  TimeGrid grid(1.0, 30);
  TestFunction fsq = polynomial_f(1, 0, {0.0, 0.0, 1.0});
  EstimatorResult pw = pathwise_lions(*nl, fsq, init, one, grid, 1000, 95);
  EstimatorResult fd = finite_diff_lions(*nl, fsq, init, one, 1e-3, grid, 1000, 95);
  CHECK(std::fabs(pw.value - fd.value) <= 3.0 * (pw.std_error + fd.std_error) + 0.01);
}

TEST_CASE("oracle input guards") {
  auto ou = make_mean_field_ou(-1.0, 0.5, 1.0);
  GaussianInitial init({0.0}, {1.0});
  ConstantDirection one({1.0});
  TimeGrid grid(1.0, 10);
  TestFunction fx = coordinate_f(1, 0);
  CHECK_THROWS_AS(finite_diff_lions(*ou, fx, init, one, 0.0, grid, 10, 1),
                  std::invalid_argument);
  CHECK_THROWS_AS(finite_diff_lions(*ou, fx, init, one, 1e-3, grid, 0, 1),
                  std::invalid_argument);
  ConstantDirection two({1.0, 1.0});
  CHECK_THROWS_AS(finite_diff_lions(*ou, fx, init, two, 1e-3, grid, 10, 1),
                  std::invalid_argument);
  CHECK_THROWS_AS(pathwise_lions(*ou, indicator_f(1, 0, 0.0), init, one, grid, 10, 1),
                  std::invalid_argument);
  CHECK_THROWS_AS(pathwise_lions(*ou, fx, init, one, grid, 0, 1), std::invalid_argument);
}

TEST_CASE("histogram distance on hand-built samples") {
  std::vector<double> a = {0.0, 0.0, 1.0};
  std::vector<double> b = {1.0, 1.0, 0.0};
  TvEstimate tv = empirical_tv_detail(a, b, 2);
  CHECK(tv.value == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
  CHECK(tv.n_bins == 2);
  double var = 2.0 * ((2.0 / 3.0) * (1.0 / 3.0) / 3.0) * 2.0;
  CHECK(tv.std_error == doctest::Approx(std::sqrt(var) / 2.0).epsilon(1e-12));
  CHECK(empirical_tv(a, b, 2) == tv.value);

  std::vector<double> lo = {0.0, 0.0, 0.0};
  std::vector<double> hi = {1.0, 1.0, 1.0};
  CHECK(empirical_tv(lo, hi, 2) == 1.0);

  std::vector<double> same = {0.0, 0.5, 1.0, 2.0};
  CHECK(empirical_tv(same, same, 3) == 0.0);

  // equal constants collapse the range; everything lands in one bin
  std::vector<double> ca = {2.0, 2.0};
  CHECK(empirical_tv(ca, ca, 4) == 0.0);
}

TEST_CASE("histogram distance input guards") {
  std::vector<double> a = {0.0, 1.0};
  std::vector<double> none;
  CHECK_THROWS_AS(empirical_tv(none, a, 2), std::invalid_argument);
  CHECK_THROWS_AS(empirical_tv(a, none, 2), std::invalid_argument);
  CHECK_THROWS_AS(empirical_tv(a, a, 1), std::invalid_argument);
  std::vector<double> inf = {1.0, std::numeric_limits<double>::infinity()};
  CHECK_THROWS_AS(empirical_tv(a, inf, 2), std::invalid_argument);
  std::vector<double> nans(2, std::numeric_limits<double>::quiet_NaN());
  CHECK_THROWS_AS(empirical_tv(nans, nans, 2), std::invalid_argument);
}

TEST_CASE("binned weight regression on hand-built samples") {
  std::vector<double> states = {0.0, 1.0, 2.0, 3.0};
  std::vector<double> weights = {1.0, 2.0, 3.0, 4.0};
  PsiRegression pr = conditional_weight_regression({states.data(), 4, 1}, weights, 2);
  CHECK(pr.lo == 0.0);
  CHECK(pr.hi == 3.0);
  REQUIRE(pr.edges.size() == 3);
  CHECK(pr.edges[0] == 0.0);
  CHECK(pr.edges[1] == doctest::Approx(1.5).epsilon(1e-15));
  CHECK(pr.edges[2] == 3.0);
  REQUIRE(pr.counts.size() == 2);
  CHECK(pr.counts[0] == 2);
  CHECK(pr.counts[1] == 2);
  CHECK(pr.psi[0] == doctest::Approx(1.5).epsilon(1e-15));
  CHECK(pr.psi[1] == doctest::Approx(3.5).epsilon(1e-15));
}

TEST_CASE("binned weight regression marks empty bins and keeps totals") {
  std::vector<double> states = {0.0, 3.0};
  std::vector<double> weights = {5.0, 7.0};
  PsiRegression pr = conditional_weight_regression({states.data(), 2, 1}, weights, 3);
  CHECK(pr.counts[0] == 1);
  CHECK(pr.counts[1] == 0);
  CHECK(pr.counts[2] == 1);
  CHECK(std::isnan(pr.psi[1]));
  CHECK(pr.psi[0] == 5.0);
  CHECK(pr.psi[2] == 7.0);

  // weighted bin means recombine to the overall sum
  std::vector<double> xs(101), ws(101);
  for (std::size_t i = 0; i <= 100; ++i) {
    xs[i] = std::sin(static_cast<double>(i) * 0.7) * 2.0;
    ws[i] = std::cos(static_cast<double>(i) * 0.3);
  }
  PsiRegression big = conditional_weight_regression({xs.data(), 101, 1}, ws, 7);
  double recombined = 0.0;
  for (std::size_t k = 0; k < 7; ++k)
    if (big.counts[k] > 0) recombined += static_cast<double>(big.counts[k]) * big.psi[k];
  double total = std::accumulate(ws.begin(), ws.end(), 0.0);
  CHECK(recombined == doctest::Approx(total).epsilon(1e-12));

  // constant states put everything into the first bin
  std::vector<double> flat = {1.0, 1.0, 1.0};
  std::vector<double> fw = {2.0, 4.0, 6.0};
  PsiRegression pf = conditional_weight_regression({flat.data(), 3, 1}, fw, 4);
  CHECK(pf.counts[0] == 3);
  CHECK(pf.psi[0] == doctest::Approx(4.0).epsilon(1e-15));
}

TEST_CASE("binned weight regression input guards") {
  std::vector<double> states = {0.0, 1.0};
  std::vector<double> weights = {1.0, 2.0};
  CHECK_THROWS_AS(conditional_weight_regression({states.data(), 0, 1}, {}, 2),
                  std::invalid_argument);
  CHECK_THROWS_AS(conditional_weight_regression({states.data(), 1, 2}, weights, 2),
                  std::invalid_argument);
  std::vector<double> short_w = {1.0};
  CHECK_THROWS_AS(conditional_weight_regression({states.data(), 2, 1}, short_w, 2),
                  std::invalid_argument);
  CHECK_THROWS_AS(conditional_weight_regression({states.data(), 2, 1}, weights, 0),
                  std::invalid_argument);
}
