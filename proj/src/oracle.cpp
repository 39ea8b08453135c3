#include "mvb/oracle.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "mvb/parallel.hpp"
#include "mvb/stats.hpp"
#include "mvb/variational.hpp"

namespace mvb {

EstimatorResult finite_diff_lions(const Model& m, const TestFunction& f,
                                  const InitialSampler& init, const Direction& phi, double eps,
                                  const TimeGrid& grid, std::size_t n_particles,
                                  std::uint64_t seed) {
  auto t_start = std::chrono::steady_clock::now();
  if (!(eps > 0.0)) throw std::invalid_argument("finite_diff_lions: eps must be > 0");
  if (n_particles == 0) throw std::invalid_argument("empty ensemble");
  if (init.dim() != m.dim() || phi.dim() != m.dim())
    throw std::invalid_argument("finite_diff_lions: dim mismatch");

  std::size_t n = n_particles, d = m.dim(), nd = m.noise_dim();
  std::vector<double> X(n * d), Y(n * d), Y2(n * d);
  std::vector<double> Xn(n * d), Yn(n * d), Y2n(n * d), dwk;

  parallel_chunks(n, [&](std::size_t i0, std::size_t i1) {
    std::vector<double> p(d);
    init.sample(seed, i0, i1, X.data() + i0 * d);
    for (std::size_t i = i0; i < i1; ++i) {
      phi.eval(X.data() + i * d, p.data());
      for (std::size_t j = 0; j < d; ++j) {
        double base = X[i * d + j];
        Y[i * d + j] = base + eps * p[j];
        Y2[i * d + j] = base + eps / 2.0 * p[j];
      }
    }
  });
  check_finite({X.data(), n, d}, "finite_diff_lions: initial ensemble");
  check_finite({Y.data(), n, d}, "finite_diff_lions: shifted initial ensemble");

  detail::NoiseBuffer nb(seed, n, nd);
  double root_dt = std::sqrt(grid.dt);
  for (std::size_t k = 0; k < grid.n_steps; ++k) {
    double t = grid.t(k);
    nb.fetch(k, root_dt, dwk);
    Measure mu_x({X.data(), n, d});
    Measure mu_y({Y.data(), n, d});
    Measure mu_y2({Y2.data(), n, d});
    parallel_chunks(n, [&](std::size_t i0, std::size_t i1) {
      detail::sde_step_range(m, t, grid.dt, mu_x, X.data(), dwk.data(), Xn.data(), i0, i1);
      detail::sde_step_range(m, t, grid.dt, mu_y, Y.data(), dwk.data(), Yn.data(), i0, i1);
      detail::sde_step_range(m, t, grid.dt, mu_y2, Y2.data(), dwk.data(), Y2n.data(), i0, i1);
    });
    detail::throw_if_exploded(Xn.data(), n, d, t);
    detail::throw_if_exploded(Yn.data(), n, d, t);
    detail::throw_if_exploded(Y2n.data(), n, d, t);
    X.swap(Xn);
    Y.swap(Yn);
    Y2.swap(Y2n);
  }

  std::vector<double> d1(n), d2(n);
  parallel_chunks(n, [&](std::size_t i0, std::size_t i1) {
    for (std::size_t i = i0; i < i1; ++i) {
      double fx = f.f(X.data() + i * d);
      d1[i] = (f.f(Y.data() + i * d) - fx) / eps;
      d2[i] = (f.f(Y2.data() + i * d) - fx) / (eps / 2.0);
    }
  });
  MeanVar mv1 = mean_var(d1.data(), n);
  MeanVar mv2 = mean_var(d2.data(), n);

  EstimatorResult r;
  r.method = "finite_diff";
  r.value = mv1.mean;
  r.std_error = mv1.std_error();
  r.n_samples = n;
  r.n_particles = n;
  r.dt = grid.dt;
  r.seed = seed;
  r.extra["epsilon"] = eps;
  r.extra["value_eps_half"] = mv2.mean;
  r.extra["se_eps_half"] = mv2.std_error();
  r.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
  return r;
}

EstimatorResult pathwise_lions(const Model& m, const TestFunction& f, const InitialSampler& init,
                               const Direction& phi, const TimeGrid& grid,
                               std::size_t n_particles, std::uint64_t seed) {
  auto t_start = std::chrono::steady_clock::now();
  if (!f.has_grad()) throw std::invalid_argument("pathwise_lions: f gradient required");
  if (n_particles == 0) throw std::invalid_argument("empty ensemble");
  if (init.dim() != m.dim() || phi.dim() != m.dim())
    throw std::invalid_argument("pathwise_lions: dim mismatch");

  std::size_t n = n_particles, d = m.dim(), nd = m.noise_dim();
  std::vector<double> X(n * d), Xn(n * d), V(n * d), Vn(n * d), mf(n * d), dwk;
  std::vector<double> smf;
  if (m.has_sigma_lions()) smf.assign(n * d * nd, 0.0);

  parallel_chunks(n, [&](std::size_t i0, std::size_t i1) {
    init.sample(seed, i0, i1, X.data() + i0 * d);
    for (std::size_t i = i0; i < i1; ++i) phi.eval(X.data() + i * d, V.data() + i * d);
  });
  check_finite({X.data(), n, d}, "pathwise_lions: initial ensemble");

  detail::NoiseBuffer nb(seed, n, nd);
  double root_dt = std::sqrt(grid.dt);
  for (std::size_t k = 0; k < grid.n_steps; ++k) {
    double t = grid.t(k);
    Measure mu({X.data(), n, d});
    nb.fetch(k, root_dt, dwk);
    m.drift_lions_apply(t, mu, V.data(), mf.data());
    if (m.has_sigma_lions()) m.sigma_lions_apply(t, mu, V.data(), smf.data());
    parallel_chunks(n, [&](std::size_t i0, std::size_t i1) {
      detail::v_step_range(m, t, grid.dt, mu, X.data(), V.data(), mf.data(),
                           smf.empty() ? nullptr : smf.data(), dwk.data(), Vn.data(), i0, i1);
      detail::sde_step_range(m, t, grid.dt, mu, X.data(), dwk.data(), Xn.data(), i0, i1);
    });
    detail::throw_if_exploded(Xn.data(), n, d, t);
    X.swap(Xn);
    V.swap(Vn);
  }

  std::vector<double> s(n);
  parallel_chunks(n, [&](std::size_t i0, std::size_t i1) {
    std::vector<double> g(d);
    for (std::size_t i = i0; i < i1; ++i) {
      f.grad(X.data() + i * d, g.data());
      double acc = 0.0;
      for (std::size_t j = 0; j < d; ++j) acc += g[j] * V[i * d + j];
      s[i] = acc;
    }
  });
  MeanVar mv = mean_var(s.data(), n);

  EstimatorResult r;
  r.method = "pathwise";
  r.value = mv.mean;
  r.std_error = mv.std_error();
  r.n_samples = n;
  r.n_particles = n;
  r.dt = grid.dt;
  r.seed = seed;
  r.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
  return r;
}

TvEstimate empirical_tv_detail(const std::vector<double>& a, const std::vector<double>& b,
                               std::size_t n_bins) {
  if (a.empty() || b.empty()) throw std::invalid_argument("empirical_tv: empty samples");
  if (n_bins < 2) throw std::invalid_argument("empirical_tv: need at least 2 bins");
  double lo = std::numeric_limits<double>::infinity();
  double hi = -std::numeric_limits<double>::infinity();
  for (double x : a) {
    lo = std::min(lo, x);
    hi = std::max(hi, x);
  }
  for (double x : b) {
    lo = std::min(lo, x);
    hi = std::max(hi, x);
  }
  if (!std::isfinite(lo) || !std::isfinite(hi))
    throw std::invalid_argument("empirical_tv: non-finite samples");

  std::vector<std::size_t> ca(n_bins, 0), cb(n_bins, 0);
  double width = (hi - lo) / static_cast<double>(n_bins);
  auto bin_of = [&](double x) -> std::size_t {
    if (width <= 0.0) return 0;
    auto idx = static_cast<long long>((x - lo) / width);
    if (idx < 0) idx = 0;
    if (idx >= static_cast<long long>(n_bins)) idx = static_cast<long long>(n_bins) - 1;
    return static_cast<std::size_t>(idx);
  };
  for (double x : a) ++ca[bin_of(x)];
  for (double x : b) ++cb[bin_of(x)];

  double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
  double tv = 0.0, var = 0.0;
  for (std::size_t k = 0; k < n_bins; ++k) {
    double pa = static_cast<double>(ca[k]) / na;
    double pb = static_cast<double>(cb[k]) / nb;
    tv += std::fabs(pa - pb);
    var += pa * (1.0 - pa) / na + pb * (1.0 - pb) / nb;
  }
  TvEstimate out;
  out.value = tv / 2.0;
  out.std_error = std::sqrt(var) / 2.0;
  out.n_bins = n_bins;
  return out;
}

double empirical_tv(const std::vector<double>& a, const std::vector<double>& b,
                    std::size_t n_bins) {
  return empirical_tv_detail(a, b, n_bins).value;
}

PsiRegression conditional_weight_regression(const EnsembleView& terminal,
                                            const std::vector<double>& weights,
                                            std::size_t n_bins) {
  if (terminal.n == 0) throw std::invalid_argument("empty ensemble");
  if (terminal.dim != 1)
    throw std::invalid_argument("conditional_weight_regression: scalar states only");
  if (weights.size() != terminal.n)
    throw std::invalid_argument("conditional_weight_regression: weight count mismatch");
  if (n_bins < 1) throw std::invalid_argument("conditional_weight_regression: need bins");

  double lo = terminal.x[0], hi = terminal.x[0];
  for (std::size_t i = 1; i < terminal.n; ++i) {
    lo = std::min(lo, terminal.x[i]);
    hi = std::max(hi, terminal.x[i]);
  }
  double width = (hi - lo) / static_cast<double>(n_bins);

  PsiRegression out;
  out.lo = lo;
  out.hi = hi;
  out.edges.resize(n_bins + 1);
  for (std::size_t k = 0; k <= n_bins; ++k)
    out.edges[k] = lo + width * static_cast<double>(k);
  out.edges[n_bins] = hi;
  out.psi.assign(n_bins, std::numeric_limits<double>::quiet_NaN());
  out.counts.assign(n_bins, 0);

  std::vector<double> sums(n_bins, 0.0);
  for (std::size_t i = 0; i < terminal.n; ++i) {
    std::size_t k = 0;
    if (width > 0.0) {
      auto idx = static_cast<long long>((terminal.x[i] - lo) / width);
      if (idx < 0) idx = 0;
      if (idx >= static_cast<long long>(n_bins)) idx = static_cast<long long>(n_bins) - 1;
      k = static_cast<std::size_t>(idx);
    }
    sums[k] += weights[i];
    ++out.counts[k];
  }
  for (std::size_t k = 0; k < n_bins; ++k)
    if (out.counts[k] > 0) out.psi[k] = sums[k] / static_cast<double>(out.counts[k]);
  return out;
}

}  // namespace mvb
