#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

#include "doctest.h"
#include "mvb/ensemble.hpp"
#include "mvb/grid.hpp"
#include "mvb/model.hpp"
#include "mvb/parallel.hpp"
#include "mvb/rng.hpp"
#include "mvb/stats.hpp"

using namespace mvb;

TEST_CASE("time grid basics") {
  TimeGrid g(2.0, 8);
  CHECK(g.dt == doctest::Approx(0.25).epsilon(1e-15));
  CHECK(g.t(0) == 0.0);
  CHECK(g.t(8) == doctest::Approx(2.0).epsilon(1e-15));
  CHECK_THROWS_AS(TimeGrid(0.0, 4), std::invalid_argument);
  CHECK_THROWS_AS(TimeGrid(-1.0, 4), std::invalid_argument);
  CHECK_THROWS_AS(TimeGrid(1.0, 0), std::invalid_argument);
}

// reference blocks generated with numpy.random.Philox(counter=[particle, blk, 0, 0],
// key=[seed, stream]).random_raw(4)
TEST_CASE("philox matches the reference generator") {
  struct Case {
    rng::u64 seed, stream, particle, blk;
    rng::Block want;
  };
  const Case cases[] = {
      {42, 0, 0, 0,
       {0xD1F8817D4D62880EULL, 0x307266B65CC8797EULL, 0xDE1F04E7F084ED03ULL,
        0x65034A8E78CD1E59ULL}},
      {123456789, 0, 0, 0,
       {0xD3856507EB9785F2ULL, 0x70BA2D239D43ACFBULL, 0x603897A48A69DBD0ULL,
        0x9DB57D79D495041BULL}},
      {42, 0, 5, 0,
       {0xF7972D5900F0627AULL, 0xAA5C126D24507ACEULL, 0x7A13B352CDC90FADULL,
        0x59DE255884B719FEULL}},
      {7, 3, 11, 2,
       {0xD3AFF10D53987509ULL, 0x122111641C7AE42EULL, 0x5348193F7A2936BCULL,
        0xA66B202764F5FCDFULL}},
      {1, 2, 0, 0,
       {0x4F2F4313B5536B09ULL, 0x5B617BE3219FF32AULL, 0x097293476F9275CBULL,
        0xF63F3BF4962C3942ULL}},
      {9, 1, 3, 7,
       {0xE84D98CBB8106AB3ULL, 0xC78DEDB2E73CE501ULL, 0xCBE9383F24774430ULL,
        0x6C2B4719E14CEBB2ULL}},
  };
  for (const auto& c : cases) {
    rng::Block got = rng::raw_block(c.seed, c.stream, c.particle, c.blk);
    for (int j = 0; j < 4; ++j) CHECK(got[j] == c.want[j]);
  }
}

TEST_CASE("uniforms stay strictly inside the unit interval") {
  CHECK(rng::u01(0) > 0.0);
  CHECK(rng::u01(0) < 1e-15);
  CHECK(rng::u01(~0ULL) < 1.0);
  CHECK(rng::u01(~0ULL) > 1.0 - 1e-15);
}

TEST_CASE("fill_normals agrees with single draws and is offset consistent") {
  const rng::u64 seed = 314, stream = rng::stream_noise;
  std::vector<double> block(4 * 11);
  rng::fill_normals(seed, stream, 3, 7, 5, 11, block.data());
  for (std::size_t i = 3; i < 7; ++i)
    for (rng::u64 j = 0; j < 11; ++j)
      CHECK(block[(i - 3) * 11 + j] == rng::normal_at(seed, stream, i, 5 + j));

  // splitting the particle range cannot change anything
  std::vector<double> lo(2 * 11), hi(2 * 11);
  rng::fill_normals(seed, stream, 3, 5, 5, 11, lo.data());
  rng::fill_normals(seed, stream, 5, 7, 5, 11, hi.data());
  for (std::size_t j = 0; j < 2 * 11; ++j) {
    CHECK(lo[j] == block[j]);
    CHECK(hi[j] == block[2 * 11 + j]);
  }
}

TEST_CASE("normal draws have the right moments") {
  const std::size_t n = 200000;
  std::vector<double> z(n);
  rng::fill_normals(2024, rng::stream_noise, 0, 1, 0, n, z.data());
  MeanVar mv = mean_var(z.data(), n);
  CHECK(std::fabs(mv.mean) < 4.0 / std::sqrt(static_cast<double>(n)));
  CHECK(mv.var == doctest::Approx(1.0).epsilon(0.02));
  double m4 = 0.0;
  for (double x : z) m4 += x * x * x * x;
  m4 /= static_cast<double>(n);
  CHECK(m4 == doctest::Approx(3.0).epsilon(0.1));
}

TEST_CASE("pairwise sums match plain accumulation") {
  std::vector<double> x(1537);
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = std::sin(0.1 * static_cast<double>(i));
  double plain = std::accumulate(x.begin(), x.end(), 0.0);
  CHECK(pairwise_sum(x.data(), x.size()) == doctest::Approx(plain).epsilon(1e-12));

  // strided access picks every other element
  double odd = 0.0;
  for (std::size_t i = 1; i < x.size(); i += 2) odd += x[i];
  CHECK(pairwise_sum(x.data() + 1, x.size() / 2, 2) == doctest::Approx(odd).epsilon(1e-12));
}

TEST_CASE("mean_var on a known sample") {
  std::vector<double> x = {1.0, 2.0, 3.0, 4.0};
  MeanVar mv = mean_var(x.data(), x.size());
  CHECK(mv.mean == doctest::Approx(2.5).epsilon(1e-15));
  CHECK(mv.var == doctest::Approx(5.0 / 3.0).epsilon(1e-14));
  CHECK(mv.std_error() == doctest::Approx(std::sqrt(5.0 / 3.0 / 4.0)).epsilon(1e-14));
  MeanVar single = mean_var(x.data(), 1);
  CHECK(single.var == 0.0);
}

TEST_CASE("column means and slope fits") {
  // two rows of a 2 x 3 array
  std::vector<double> x = {1.0, 2.0, 3.0, 5.0, 6.0, 7.0};
  std::vector<double> m(3);
  column_mean(x.data(), 2, 3, m.data());
  CHECK(m[0] == doctest::Approx(3.0));
  CHECK(m[1] == doctest::Approx(4.0));
  CHECK(m[2] == doctest::Approx(5.0));

  std::vector<double> xs = {0.0, 1.0, 2.0, 3.0};
  std::vector<double> ys = {1.0, 3.0, 5.0, 7.0};
  CHECK(fit_slope(xs.data(), ys.data(), 4) == doctest::Approx(2.0).epsilon(1e-14));
}

TEST_CASE("parallel chunking is deterministic across thread counts") {
  const std::size_t n = 30000;
  std::vector<double> a(n), b(n);
  auto fill = [&](std::vector<double>& out) {
    parallel_chunks(n, [&](std::size_t i0, std::size_t i1) {
      for (std::size_t i = i0; i < i1; ++i)
        out[i] = std::cos(1e-3 * static_cast<double>(i));
    });
  };
  set_max_threads(1);
  fill(a);
  set_max_threads(4);
  fill(b);
  set_max_threads(0);
  CHECK(std::equal(a.begin(), a.end(), b.begin()));
}

TEST_CASE("measure caches mean and second moment") {
  Ensemble e(3, 2);
  double vals[6] = {1.0, 2.0, 3.0, 4.0, 5.0, 6.0};
  std::copy(vals, vals + 6, e.x.begin());
  Measure mu(e);
  CHECK(mu.mean()[0] == doctest::Approx(3.0));
  CHECK(mu.mean()[1] == doctest::Approx(4.0));
  double m2 = (1.0 + 4.0 + 9.0 + 16.0 + 25.0 + 36.0) / 3.0;
  CHECK(mu.second_moment() == doctest::Approx(m2).epsilon(1e-14));
  Ensemble empty;
  CHECK_THROWS_AS(Measure{EnsembleView(empty)}, std::invalid_argument);
}

namespace {
// exact optimal coupling cost by brute force over permutations, n small
double w2_brute_force(const EnsembleView& a, const EnsembleView& b) {
  std::vector<std::size_t> perm(a.n);
  std::iota(perm.begin(), perm.end(), 0);
  double best = std::numeric_limits<double>::infinity();
  do {
    double total = 0.0;
    for (std::size_t i = 0; i < a.n; ++i) {
      for (std::size_t j = 0; j < a.dim; ++j) {
        double d = a.state(i)[j] - b.state(perm[i])[j];
        total += d * d;
      }
    }
    best = std::min(best, total);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return std::sqrt(best / static_cast<double>(a.n));
}
}  // namespace

TEST_CASE("transport distance is the brute-force optimum in one dimension") {
  Ensemble a(5, 1), b(5, 1);
  double xa[5] = {0.3, -1.2, 2.0, 0.0, 0.7};
  double xb[5] = {1.1, -0.4, 0.2, 2.5, -2.0};
  std::copy(xa, xa + 5, a.x.begin());
  std::copy(xb, xb + 5, b.x.begin());
  CHECK(wasserstein2(a, b) == doctest::Approx(w2_brute_force(a, b)).epsilon(1e-12));

  // hand value: {0, 1} vs {1, 2} couples sorted order, cost 1
  Ensemble c(2, 1), d(2, 1);
  c.x = {0.0, 1.0};
  d.x = {1.0, 2.0};
  CHECK(wasserstein2(c, d) == doctest::Approx(1.0).epsilon(1e-14));
}

TEST_CASE("transport surrogate never exceeds the exact cost in higher dimension") {
  Ensemble a(4, 2), b(4, 2);
  double xa[8] = {0.0, 0.0, 1.0, 0.5, -0.5, 1.0, 2.0, -1.0};
  double xb[8] = {0.5, 0.5, -1.0, 0.0, 1.5, 1.0, 0.0, -2.0};
  std::copy(xa, xa + 8, a.x.begin());
  std::copy(xb, xb + 8, b.x.begin());
  CHECK(wasserstein2(a, b) <= w2_brute_force(a, b) + 1e-12);
  CHECK_THROWS_AS(wasserstein2(a, EnsembleView(nullptr, 3, 2)), std::invalid_argument);
}

TEST_CASE("test functions evaluate and differentiate") {
  TestFunction fx = coordinate_f(3, 1);
  double x[3] = {2.0, -3.0, 5.0};
  CHECK(fx.f(x) == -3.0);
  double g[3];
  fx.grad(x, g);
  CHECK(g[0] == 0.0);
  CHECK(g[1] == 1.0);
  CHECK(g[2] == 0.0);

  TestFunction poly = polynomial_f(1, 0, {1.0, 0.0, 2.0});  // 1 + 2 x^2
  double y = 1.5;
  CHECK(poly.f(&y) == doctest::Approx(1.0 + 2.0 * 2.25).epsilon(1e-15));
  poly.grad(&y, g);
  CHECK(g[0] == doctest::Approx(4.0 * 1.5).epsilon(1e-15));

  TestFunction ind = indicator_f(1, 0, 0.5);
  double lo = 0.4, hi = 0.6;
  CHECK(ind.f(&lo) == 0.0);
  CHECK(ind.f(&hi) == 1.0);
  CHECK(!ind.has_grad());

  CHECK_THROWS_AS(coordinate_f(2, 5), std::invalid_argument);
  CHECK_THROWS_AS(polynomial_f(1, 0, {}), std::invalid_argument);
}

TEST_CASE("initial samplers draw from the requested law") {
  GaussianInitial gi({2.0}, {0.5});
  const std::size_t n = 100000;
  std::vector<double> x(n);
  gi.sample(11, 0, n, x.data());
  MeanVar mv = mean_var(x.data(), n);
  CHECK(mv.mean == doctest::Approx(2.0).epsilon(0.01));
  CHECK(mv.var == doctest::Approx(0.25).epsilon(0.05));

  // range splits agree with the full draw
  std::vector<double> part(10);
  gi.sample(11, 90, 100, part.data());
  for (std::size_t i = 0; i < 10; ++i) CHECK(part[i] == x[90 + i]);

  PointInitial pi({1.0, -2.0});
  std::vector<double> p(4);
  pi.sample(99, 5, 7, p.data());
  CHECK(p[0] == 1.0);
  CHECK(p[1] == -2.0);
  CHECK(p[2] == 1.0);
  CHECK(p[3] == -2.0);

  CHECK_THROWS_AS(GaussianInitial({0.0}, {-1.0}), std::invalid_argument);
  CHECK_THROWS_AS(GaussianInitial({0.0, 0.0}, {1.0}), std::invalid_argument);
}

TEST_CASE("builtin drift gradients match finite differences") {
  Ensemble e(64, 1);
  rng::fill_normals(5, rng::stream_init, 0, 64, 0, 1, e.x.data());
  Measure mu(e);
  auto ou = make_mean_field_ou(-1.0, 0.5, 1.0);
  auto nl = make_nonlinear_mv(1.0);
  CHECK_NOTHROW(check_model_consistency(*ou, mu, 0.0, 16, 1e-5));
  CHECK_NOTHROW(check_model_consistency(*nl, mu, 0.0, 16, 1e-5));
}

TEST_CASE("measure kernel of the interaction drift matches a peer perturbation") {
  // moving one peer by h changes b by (1/N) * kernel * h + O(h^2)
  const std::size_t n = 8;
  Ensemble e(n, 1);
  rng::fill_normals(6, rng::stream_init, 0, n, 0, 1, e.x.data());
  auto nl = make_nonlinear_mv(1.0);
  double x0 = 0.3;
  const double h = 1e-6;
  for (std::size_t j = 0; j < n; ++j) {
    Measure mu(e);
    double ker;
    nl->drift_lions(0.0, &x0, mu, e.state(j), &ker);
    double bp, bm;
    Ensemble shifted = e;
    shifted.x[j] += h;
    Measure mup(shifted);
    nl->drift(0.0, &x0, mup, &bp);
    shifted.x[j] -= 2.0 * h;
    Measure mum(shifted);
    nl->drift(0.0, &x0, mum, &bm);
    double fd = (bp - bm) / (2.0 * h) * static_cast<double>(n);
    CHECK(ker == doctest::Approx(fd).epsilon(1e-5));
  }
}

TEST_CASE("fast kernel averages match the generic double loop") {
  const std::size_t n = 50;
  Ensemble e(n, 1);
  rng::fill_normals(7, rng::stream_init, 0, n, 0, 1, e.x.data());
  Measure mu(e);
  std::vector<double> u(n);
  rng::fill_normals(8, rng::stream_init, 0, n, 0, 1, u.data());

  auto ou = make_mean_field_ou(-1.0, 0.7, 1.0);
  std::vector<double> fast(n), slow(n);
  ou->drift_lions_apply(0.0, mu, u.data(), fast.data());
  // generic form computed by hand: constant kernel c averages u
  double mean_u = pairwise_sum(u.data(), n) / static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) slow[i] = 0.7 * mean_u;
  for (std::size_t i = 0; i < n; ++i) CHECK(fast[i] == doctest::Approx(slow[i]).epsilon(1e-14));

  // nonlinear kernel goes through the O(N^2) base path; check against a direct loop
  auto nl = make_nonlinear_mv(1.0);
  nl->drift_lions_apply(0.0, mu, u.data(), fast.data());
  for (std::size_t i = 0; i < n; ++i) {
    double acc = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      double ker;
      nl->drift_lions(0.0, e.state(i), mu, e.state(j), &ker);
      acc += ker * u[j];
    }
    CHECK(fast[i] == doctest::Approx(acc / static_cast<double>(n)).epsilon(1e-12));
  }
}
