#include "mvb/simulate.hpp"

#include <cmath>
#include <stdexcept>

#include "mvb/parallel.hpp"
#include "mvb/rng.hpp"

namespace mvb {

namespace detail {

void sde_step_range(const Model& m, double t, double dt, const Measure& mu,
                    const double* x_in, const double* dw, double* x_out,
                    std::size_t i0, std::size_t i1) {
  std::size_t d = m.dim(), nd = m.noise_dim();
  std::vector<double> b(d), sig(d * nd);
  for (std::size_t i = i0; i < i1; ++i) {
    const double* xi = x_in + i * d;
    const double* wi = dw + i * nd;
    double* oi = x_out + i * d;
    m.drift(t, xi, mu, b.data());
    m.diffusion(t, xi, sig.data());
    for (std::size_t r = 0; r < d; ++r) {
      double s = 0.0;
      for (std::size_t c = 0; c < nd; ++c) s += sig[r * nd + c] * wi[c];
      oi[r] = xi[r] + dt * b[r] + s;
    }
  }
}

void throw_if_exploded(const double* x, std::size_t n, std::size_t dim, double t) {
  for (std::size_t i = 0; i < n * dim; ++i)
    if (!std::isfinite(x[i]))
      throw std::runtime_error("explosion at t=" + std::to_string(t) + ", particle " +
                               std::to_string(i / dim));
}

NoiseBuffer::NoiseBuffer(std::uint64_t seed, std::size_t n, std::size_t nd)
    : seed_(seed), n_(n), nd_(nd) {
  // keep block-aligned draw ranges where possible: whole groups of 4 normals
  group_ = (4 % nd == 0) ? 4 / nd : 1;
  z_.resize(n_ * group_ * nd_);
}

void NoiseBuffer::fetch(std::size_t k, double root_dt, std::vector<double>& dwk) {
  std::size_t w = group_ * nd_;
  std::size_t gidx = k / group_;
  if (gidx != loaded_) {
    parallel_chunks(n_, [&](std::size_t i0, std::size_t i1) {
      rng::fill_normals(seed_, rng::stream_noise, i0, i1, gidx * w, w, z_.data() + i0 * w);
    });
    loaded_ = gidx;
  }
  dwk.resize(n_ * nd_);
  std::size_t off = (k - gidx * group_) * nd_;
  for (std::size_t i = 0; i < n_; ++i)
    for (std::size_t j = 0; j < nd_; ++j) dwk[i * nd_ + j] = root_dt * z_[i * w + off + j];
}

}  // namespace detail

Ensemble euler_step(const Model& m, const Ensemble& ens, double t, double dt,
                    const std::vector<double>& noise) {
  if (!(dt > 0.0)) throw std::invalid_argument("euler_step: dt must be > 0");
  if (ens.dim != m.dim()) throw std::invalid_argument("euler_step: ensemble/model dim mismatch");
  if (noise.size() != ens.n * m.noise_dim())
    throw std::invalid_argument("euler_step: noise shape mismatch");
  Ensemble out(ens.n, ens.dim);
  Measure mu(ens);
  parallel_chunks(ens.n, [&](std::size_t i0, std::size_t i1) {
    detail::sde_step_range(m, t, dt, mu, ens.x.data(), noise.data(), out.x.data(), i0, i1);
  });
  detail::throw_if_exploded(out.x.data(), out.n, out.dim, t);
  return out;
}

static void fill_increments(std::uint64_t seed, std::size_t n, std::size_t nd,
                            const TimeGrid& grid, std::vector<std::vector<double>>& dw) {
  double root_dt = std::sqrt(grid.dt);
  std::size_t steps = grid.n_steps;
  dw.assign(steps, std::vector<double>(n * nd));
  parallel_chunks(n, [&](std::size_t i0, std::size_t i1) {
    std::vector<double> row(steps * nd);
    for (std::size_t i = i0; i < i1; ++i) {
      rng::fill_normals(seed, rng::stream_noise, i, i + 1, 0, steps * nd, row.data());
      for (std::size_t k = 0; k < steps; ++k)
        for (std::size_t j = 0; j < nd; ++j) dw[k][i * nd + j] = root_dt * row[k * nd + j];
    }
  });
}

static Trajectory run_path(const Model& m, Trajectory&& traj) {
  std::size_t n = traj.n;
  const TimeGrid& grid = traj.grid;
  for (std::size_t k = 0; k < grid.n_steps; ++k) {
    Measure mu(traj.at(k));
    const double* x_in = traj.states[k].data();
    const double* dwk = traj.dw[k].data();
    double* x_out = traj.states[k + 1].data();
    double t = grid.t(k);
    parallel_chunks(n, [&](std::size_t i0, std::size_t i1) {
      detail::sde_step_range(m, t, grid.dt, mu, x_in, dwk, x_out, i0, i1);
    });
    detail::throw_if_exploded(x_out, n, traj.dim, t);
  }
  return std::move(traj);
}

Trajectory simulate(const Model& m, const InitialSampler& init, const TimeGrid& grid,
                    std::size_t n_particles, std::uint64_t seed) {
  if (n_particles == 0) throw std::invalid_argument("simulate: need at least one particle");
  if (init.dim() != m.dim()) throw std::invalid_argument("simulate: sampler/model dim mismatch");
  Trajectory traj;
  traj.grid = grid;
  traj.n = n_particles;
  traj.dim = m.dim();
  traj.noise_dim = m.noise_dim();
  traj.seed = seed;
  traj.model_id = m.id();
  traj.states.assign(grid.n_steps + 1, std::vector<double>(n_particles * traj.dim));
  parallel_chunks(n_particles, [&](std::size_t i0, std::size_t i1) {
    init.sample(seed, i0, i1, traj.states[0].data() + i0 * traj.dim);
  });
  check_finite(traj.at(0), "simulate: initial ensemble");
  fill_increments(seed, n_particles, traj.noise_dim, grid, traj.dw);
  return run_path(m, std::move(traj));
}

Trajectory clone_shifted(const Model& m, const Trajectory& traj, const Direction& phi,
                         double eps) {
  if (phi.dim() != traj.dim) throw std::invalid_argument("clone_shifted: direction dim mismatch");
  Trajectory out;
  out.grid = traj.grid;
  out.n = traj.n;
  out.dim = traj.dim;
  out.noise_dim = traj.noise_dim;
  out.seed = traj.seed;
  out.model_id = traj.model_id;
  out.dw = traj.dw;  // common random numbers
  out.states.assign(traj.grid.n_steps + 1, std::vector<double>(traj.n * traj.dim));
  std::size_t d = traj.dim;
  const double* base0 = traj.states[0].data();
  double* x0 = out.states[0].data();
  parallel_chunks(traj.n, [&](std::size_t i0, std::size_t i1) {
    std::vector<double> p(d);
    for (std::size_t i = i0; i < i1; ++i) {
      phi.eval(base0 + i * d, p.data());
      for (std::size_t j = 0; j < d; ++j) x0[i * d + j] = base0[i * d + j] + eps * p[j];
    }
  });
  check_finite(out.at(0), "clone_shifted: shifted initial ensemble");
  return run_path(m, std::move(out));
}

Trajectory simulate_shifted_frozen_law(const Model& m, const Trajectory& base,
                                       const std::vector<std::vector<double>>& h_prime,
                                       double eps) {
  if (h_prime.size() != base.grid.n_steps)
    throw std::invalid_argument("frozen-law shift: h' has wrong number of steps");
  std::size_t n = base.n, nd = base.noise_dim;
  Trajectory out;
  out.grid = base.grid;
  out.n = n;
  out.dim = base.dim;
  out.noise_dim = nd;
  out.seed = base.seed;
  out.model_id = base.model_id;
  out.states.assign(base.grid.n_steps + 1, std::vector<double>(n * base.dim));
  out.states[0] = base.states[0];
  std::vector<double> dwk(n * nd);
  for (std::size_t k = 0; k < base.grid.n_steps; ++k) {
    // per step either one shared rate (noise_dim entries) or one per particle
    bool shared = h_prime[k].size() == nd;
    if (!shared && h_prime[k].size() != n * nd)
      throw std::invalid_argument("frozen-law shift: h' shape mismatch");
    Measure mu(base.at(k));  // law frozen to the base path
    double t = base.grid.t(k);
    const double* hk = h_prime[k].data();
    const double* wk = base.dw[k].data();
    for (std::size_t i = 0; i < n * nd; ++i)
      dwk[i] = wk[i] + eps * (shared ? hk[i % nd] : hk[i]) * base.grid.dt;
    const double* x_in = out.states[k].data();
    double* x_out = out.states[k + 1].data();
    parallel_chunks(n, [&](std::size_t i0, std::size_t i1) {
      detail::sde_step_range(m, t, base.grid.dt, mu, x_in, dwk.data(), x_out, i0, i1);
    });
    detail::throw_if_exploded(x_out, n, base.dim, t);
  }
  return out;
}

}  // namespace mvb
