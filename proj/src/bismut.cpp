#include "mvb/bismut.hpp"

#include <chrono>
#include <cmath>
#include <stdexcept>

#include "mvb/parallel.hpp"
#include "mvb/stats.hpp"

namespace mvb {

GFunction linear_g(double T) {
  return {"linear", [T](double t) { return t / T; }, [T](double) { return 1.0 / T; }};
}

GFunction smoothstep_g(double T) {
  return {"smoothstep",
          [T](double t) {
            double s = t / T;
            return s * s * (3.0 - 2.0 * s);
          },
          [T](double t) {
            double s = t / T;
            return 6.0 * s * (1.0 - s) / T;
          }};
}

void validate_g(const GFunction& g, const TimeGrid& grid) {
  if (!g.g || !g.gp) throw std::invalid_argument("validate_g: missing callable");
  if (std::fabs(g.g(0.0)) > 1e-9) throw std::invalid_argument("validate_g: g(0) must be 0");
  if (std::fabs(g.g(grid.T) - 1.0) > 1e-9)
    throw std::invalid_argument("validate_g: g(T) must be 1");
  double h = std::min(grid.dt / 2.0, 1e-5 * grid.T);
  for (std::size_t k = 1; k < grid.n_steps; ++k) {
    double t = grid.t(k);
    double fd = (g.g(t + h) - g.g(t - h)) / (2.0 * h);
    if (std::fabs(fd - g.gp(t)) > 1e-6 * std::max(1.0, std::fabs(g.gp(t))))
      throw std::invalid_argument("validate_g: g' inconsistent with g at t=" + std::to_string(t));
  }
}

namespace detail {

void zeta_range(const Model& m, double t, double gt, double gpt, const double* x,
                const double* v, const double* mf, double* zeta_out, std::size_t i0,
                std::size_t i1) {
  std::size_t d = m.dim();
  std::vector<double> sinv(d * d), u(d);
  for (std::size_t i = i0; i < i1; ++i) {
    const double* xi = x + i * d;
    m.diffusion_inv(t, xi, sinv.data());
    for (std::size_t c = 0; c < d; ++c) u[c] = gpt * v[i * d + c] + gt * mf[i * d + c];
    for (std::size_t r = 0; r < d; ++r) {
      double s = 0.0;
      for (std::size_t c = 0; c < d; ++c) s += sinv[r * d + c] * u[c];
      zeta_out[i * d + r] = s;
    }
  }
}

}  // namespace detail

std::vector<std::vector<double>> zeta(const Model& m, const Trajectory& traj,
                                      const VariationalPath& v, const GFunction& g) {
  if (m.noise_dim() != m.dim())
    throw std::invalid_argument("zeta: weight needs square invertible diffusion");
  if (v.n != traj.n || v.dim != traj.dim || v.values.size() != traj.states.size())
    throw std::invalid_argument("zeta: flow/trajectory mismatch");
  validate_g(g, traj.grid);
  std::size_t n = traj.n, d = traj.dim;
  std::vector<std::vector<double>> out(traj.grid.n_steps, std::vector<double>(n * d));
  std::vector<double> mf(n * d);
  for (std::size_t k = 0; k < traj.grid.n_steps; ++k) {
    double t = traj.grid.t(k);
    Measure mu(traj.at(k));
    const double* vk = v.values[k].data();
    m.drift_lions_apply(t, mu, vk, mf.data());
    const double* xk = traj.states[k].data();
    double gt = g.g(t), gpt = g.gp(t);
    double* zk = out[k].data();
    parallel_chunks(n, [&](std::size_t i0, std::size_t i1) {
      detail::zeta_range(m, t, gt, gpt, xk, vk, mf.data(), zk, i0, i1);
    });
  }
  return out;
}

std::vector<double> ito_weight(const Trajectory& traj,
                               const std::vector<std::vector<double>>& zeta) {
  std::size_t n = traj.n, nd = traj.noise_dim;
  if (zeta.size() != traj.grid.n_steps) throw std::invalid_argument("ito_weight: step mismatch");
  for (const auto& zk : zeta)
    if (zk.size() != n * nd) throw std::invalid_argument("ito_weight: shape mismatch");
  std::vector<double> w(n, 0.0);
  parallel_chunks(n, [&](std::size_t i0, std::size_t i1) {
    for (std::size_t k = 0; k < zeta.size(); ++k) {
      const double* zk = zeta[k].data();
      const double* dwk = traj.dw[k].data();
      for (std::size_t i = i0; i < i1; ++i) {
        double s = 0.0;
        for (std::size_t c = 0; c < nd; ++c) s += zk[i * nd + c] * dwk[i * nd + c];
        w[i] += s;
      }
    }
  });
  return w;
}

EstimatorResult estimate_from_parts(const TestFunction& f, const EnsembleView& terminal,
                                    const std::vector<double>& weights,
                                    const BismutOptions& opt) {
  std::size_t n = terminal.n;
  if (n == 0) throw std::invalid_argument("empty ensemble");
  if (weights.size() != n) throw std::invalid_argument("estimate_from_parts: weight count");
  std::vector<double> fx(n);
  parallel_chunks(n, [&](std::size_t i0, std::size_t i1) {
    for (std::size_t i = i0; i < i1; ++i) fx[i] = f.f(terminal.state(i));
  });
  std::vector<double> s(n);
  if (opt.centered) {
    double fbar = pairwise_sum(fx.data(), n, 1) / static_cast<double>(n);
    parallel_chunks(n, [&](std::size_t i0, std::size_t i1) {
      for (std::size_t i = i0; i < i1; ++i) s[i] = (fx[i] - fbar) * weights[i];
    });
  } else {
    parallel_chunks(n, [&](std::size_t i0, std::size_t i1) {
      for (std::size_t i = i0; i < i1; ++i) s[i] = fx[i] * weights[i];
    });
  }
  MeanVar mv = mean_var(s.data(), n);
  MeanVar mvf = mean_var(fx.data(), n);
  EstimatorResult r;
  r.method = opt.centered ? "bismut" : "bismut_raw";
  r.value = mv.mean;
  r.std_error = mv.std_error();
  r.n_samples = n;
  r.n_particles = n;
  r.extra["f_mean"] = mvf.mean;
  r.extra["f_variance"] = mvf.var;
  return r;
}

EstimatorResult estimate_lions_derivative(const Model& m, const TestFunction& f,
                                          const InitialSampler& init, const Direction& phi,
                                          const TimeGrid& grid, std::size_t n_particles,
                                          std::uint64_t seed, const GFunction& g,
                                          const BismutOptions& opt) {
  auto t_start = std::chrono::steady_clock::now();
  if (n_particles == 0) throw std::invalid_argument("empty ensemble");
  if (m.noise_dim() != m.dim())
    throw std::invalid_argument("estimate_lions_derivative: needs square invertible diffusion");
  if (init.dim() != m.dim() || phi.dim() != m.dim())
    throw std::invalid_argument("estimate_lions_derivative: dim mismatch");
  validate_g(g, grid);

  std::size_t n = n_particles, d = m.dim(), nd = m.noise_dim();
  std::vector<double> X(n * d), Xn(n * d), V(n * d), Vn(n * d);
  std::vector<double> mf(n * d), zk(n * d), weight(n, 0.0), dwk;
  std::vector<double> smf;
  if (m.has_sigma_lions()) smf.assign(n * d * nd, 0.0);

  parallel_chunks(n, [&](std::size_t i0, std::size_t i1) {
    init.sample(seed, i0, i1, X.data() + i0 * d);
    for (std::size_t i = i0; i < i1; ++i) phi.eval(X.data() + i * d, V.data() + i * d);
  });
  check_finite({X.data(), n, d}, "estimate_lions_derivative: initial ensemble");

  detail::NoiseBuffer nb(seed, n, nd);
  double root_dt = std::sqrt(grid.dt);
  for (std::size_t k = 0; k < grid.n_steps; ++k) {
    double t = grid.t(k);
    Measure mu({X.data(), n, d});
    nb.fetch(k, root_dt, dwk);
    m.drift_lions_apply(t, mu, V.data(), mf.data());
    if (m.has_sigma_lions()) m.sigma_lions_apply(t, mu, V.data(), smf.data());
    double gt = g.g(t), gpt = g.gp(t);
    parallel_chunks(n, [&](std::size_t i0, std::size_t i1) {
      detail::zeta_range(m, t, gt, gpt, X.data(), V.data(), mf.data(), zk.data(), i0, i1);
      for (std::size_t i = i0; i < i1; ++i) {
        double s = 0.0;
        for (std::size_t c = 0; c < nd; ++c) s += zk[i * nd + c] * dwk[i * nd + c];
        weight[i] += s;
      }
      detail::v_step_range(m, t, grid.dt, mu, X.data(), V.data(), mf.data(),
                           smf.empty() ? nullptr : smf.data(), dwk.data(), Vn.data(), i0, i1);
      detail::sde_step_range(m, t, grid.dt, mu, X.data(), dwk.data(), Xn.data(), i0, i1);
    });
    detail::throw_if_exploded(Xn.data(), n, d, t);
    X.swap(Xn);
    V.swap(Vn);
  }

  EstimatorResult r = estimate_from_parts(f, {X.data(), n, d}, weight, opt);
  r.dt = grid.dt;
  r.seed = seed;
  r.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
  return r;
}

static double bound_integral(const std::function<double(double)>& K,
                             const std::function<double(double)>& lambda, const TimeGrid& grid) {
  auto integrand = [&](double t) {
    double kt = K(t), lt = lambda(t);
    double a = 1.0 / grid.T + kt;
    return a * a * lt * lt * std::exp(8.0 * kt * t);
  };
  double acc = 0.0;
  for (std::size_t k = 0; k < grid.n_steps; ++k)
    acc += 0.5 * grid.dt * (integrand(grid.t(k)) + integrand(grid.t(k + 1)));
  return acc;
}

double gradient_norm_bound(const std::function<double(double)>& K,
                           const std::function<double(double)>& lambda, const TimeGrid& grid,
                           double variance_proxy) {
  if (variance_proxy < 0.0)
    throw std::invalid_argument("gradient_norm_bound: variance_proxy must be >= 0");
  return std::sqrt(variance_proxy * bound_integral(K, lambda, grid));
}

double tv_bound(const std::function<double(double)>& K,
                const std::function<double(double)>& lambda, const TimeGrid& grid, double w2) {
  if (w2 < 0.0) throw std::invalid_argument("tv_bound: w2 must be >= 0");
  return w2 * std::sqrt(bound_integral(K, lambda, grid));
}

}  // namespace mvb
