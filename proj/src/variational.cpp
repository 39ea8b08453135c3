#include "mvb/variational.hpp"

#include <cmath>
#include <stdexcept>

#include "mvb/parallel.hpp"
#include "mvb/stats.hpp"

namespace mvb {

namespace detail {

void v_step_range(const Model& m, double t, double dt, const Measure& mu, const double* x,
                  const double* v_in, const double* mf, const double* smf, const double* dw,
                  double* v_out, std::size_t i0, std::size_t i1) {
  std::size_t d = m.dim(), nd = m.noise_dim();
  std::vector<double> grad(d * d), dgs(d * nd);
  for (std::size_t i = i0; i < i1; ++i) {
    const double* xi = x + i * d;
    const double* vi = v_in + i * d;
    const double* wi = dw + i * nd;
    double* oi = v_out + i * d;
    m.drift_grad(t, xi, mu, grad.data());
    m.diffusion_grad_apply(t, xi, vi, dgs.data());
    for (std::size_t r = 0; r < d; ++r) {
      double gv = 0.0;
      for (std::size_t c = 0; c < d; ++c) gv += grad[r * d + c] * vi[c];
      double noise = 0.0;
      for (std::size_t c = 0; c < nd; ++c) noise += dgs[r * nd + c] * wi[c];
      if (smf) {
        const double* si = smf + i * d * nd;
        for (std::size_t c = 0; c < nd; ++c) noise += si[r * nd + c] * wi[c];
      }
      oi[r] = vi[r] + dt * (gv + mf[i * d + r]) + noise;
    }
  }
}

void w_step_range(const Model& m, double t, double dt, const Measure& mu, const double* x,
                  const double* w_in, const double* hk, bool h_shared, const double* dw,
                  double* w_out, std::size_t i0, std::size_t i1) {
  std::size_t d = m.dim(), nd = m.noise_dim();
  std::vector<double> grad(d * d), sig(d * nd), dgs(d * nd);
  for (std::size_t i = i0; i < i1; ++i) {
    const double* xi = x + i * d;
    const double* wi_ = w_in + i * d;
    const double* dwi = dw + i * nd;
    const double* hi = h_shared ? hk : hk + i * nd;
    double* oi = w_out + i * d;
    m.drift_grad(t, xi, mu, grad.data());
    m.diffusion(t, xi, sig.data());
    m.diffusion_grad_apply(t, xi, wi_, dgs.data());
    for (std::size_t r = 0; r < d; ++r) {
      double gw = 0.0;
      for (std::size_t c = 0; c < d; ++c) gw += grad[r * d + c] * wi_[c];
      double sh = 0.0, noise = 0.0;
      for (std::size_t c = 0; c < nd; ++c) {
        sh += sig[r * nd + c] * hi[c];
        noise += dgs[r * nd + c] * dwi[c];
      }
      oi[r] = wi_[r] + dt * (gw + sh) + noise;
    }
  }
}

}  // namespace detail

static void check_traj_model(const Model& m, const Trajectory& traj, const char* who) {
  if (traj.dim != m.dim() || traj.noise_dim != m.noise_dim())
    throw std::invalid_argument(std::string(who) + ": trajectory/model dim mismatch");
  if (traj.states.size() != traj.grid.n_steps + 1 || traj.dw.size() != traj.grid.n_steps)
    throw std::invalid_argument(std::string(who) + ": incomplete trajectory");
}

VariationalPath propagate_v(const Model& m, const Trajectory& traj, const Direction& phi) {
  check_traj_model(m, traj, "propagate_v");
  if (phi.dim() != traj.dim) throw std::invalid_argument("propagate_v: direction dim mismatch");
  std::size_t n = traj.n, d = traj.dim, nd = traj.noise_dim;
  VariationalPath path;
  path.grid = traj.grid;
  path.kind = VariationalPath::Kind::initial_direction;
  path.n = n;
  path.dim = d;
  path.values.assign(traj.grid.n_steps + 1, std::vector<double>(n * d));

  const double* x0 = traj.states[0].data();
  double* v0 = path.values[0].data();
  parallel_chunks(n, [&](std::size_t i0, std::size_t i1) {
    for (std::size_t i = i0; i < i1; ++i) phi.eval(x0 + i * d, v0 + i * d);
  });

  std::vector<double> mf(n * d);
  std::vector<double> smf;
  if (m.has_sigma_lions()) smf.assign(n * d * nd, 0.0);
  for (std::size_t k = 0; k < traj.grid.n_steps; ++k) {
    double t = traj.grid.t(k);
    Measure mu(traj.at(k));
    const double* vk = path.values[k].data();
    m.drift_lions_apply(t, mu, vk, mf.data());
    if (m.has_sigma_lions()) m.sigma_lions_apply(t, mu, vk, smf.data());
    const double* xk = traj.states[k].data();
    const double* dwk = traj.dw[k].data();
    double* vn = path.values[k + 1].data();
    parallel_chunks(n, [&](std::size_t i0, std::size_t i1) {
      detail::v_step_range(m, t, traj.grid.dt, mu, xk, vk, mf.data(),
                           smf.empty() ? nullptr : smf.data(), dwk, vn, i0, i1);
    });
    check_finite(path.at(k + 1), "propagate_v: flow");
  }
  return path;
}

VariationalPath propagate_w(const Model& m, const Trajectory& traj,
                            const std::vector<std::vector<double>>& h_prime, bool adapted) {
  check_traj_model(m, traj, "propagate_w");
  if (!adapted && !m.constant_diffusion())
    throw std::invalid_argument("anticipative direction requires constant diffusion");
  if (h_prime.size() != traj.grid.n_steps)
    throw std::invalid_argument("propagate_w: h' has wrong number of steps");
  std::size_t n = traj.n, d = traj.dim, nd = traj.noise_dim;
  VariationalPath path;
  path.grid = traj.grid;
  path.kind = VariationalPath::Kind::malliavin_direction;
  path.n = n;
  path.dim = d;
  path.values.assign(traj.grid.n_steps + 1, std::vector<double>(n * d, 0.0));

  for (std::size_t k = 0; k < traj.grid.n_steps; ++k) {
    bool shared = h_prime[k].size() == nd;
    if (!shared && h_prime[k].size() != n * nd)
      throw std::invalid_argument("propagate_w: h' shape mismatch");
    double t = traj.grid.t(k);
    Measure mu(traj.at(k));
    const double* xk = traj.states[k].data();
    const double* wk = path.values[k].data();
    const double* dwk = traj.dw[k].data();
    const double* hk = h_prime[k].data();
    double* wn = path.values[k + 1].data();
    parallel_chunks(n, [&](std::size_t i0, std::size_t i1) {
      detail::w_step_range(m, t, traj.grid.dt, mu, xk, wk, hk, shared, dwk, wn, i0, i1);
    });
    check_finite(path.at(k + 1), "propagate_w: flow");
  }
  return path;
}

double malliavin_shift_check(const Model& m, const Trajectory& traj,
                             const std::vector<std::vector<double>>& h_prime, double eps,
                             bool adapted) {
  if (!(eps > 0.0)) throw std::invalid_argument("malliavin_shift_check: eps must be > 0");
  VariationalPath w = propagate_w(m, traj, h_prime, adapted);

  std::size_t n = traj.n, d = traj.dim, nd = traj.noise_dim;
  std::vector<std::vector<double>> h_full(h_prime.size());
  for (std::size_t k = 0; k < h_prime.size(); ++k) {
    if (h_prime[k].size() == n * nd) {
      h_full[k] = h_prime[k];
    } else {
      h_full[k].resize(n * nd);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < nd; ++j) h_full[k][i * nd + j] = h_prime[k][j];
    }
  }
  Trajectory shifted = simulate_shifted_frozen_law(m, traj, h_full, eps);

  double worst = 0.0;
  std::vector<double> norms(n);
  for (std::size_t k = 0; k <= traj.grid.n_steps; ++k) {
    const double* xk = traj.states[k].data();
    const double* yk = shifted.states[k].data();
    const double* wk = w.values[k].data();
    parallel_chunks(n, [&](std::size_t i0, std::size_t i1) {
      for (std::size_t i = i0; i < i1; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
          double r = (yk[i * d + j] - xk[i * d + j]) / eps - wk[i * d + j];
          s += r * r;
        }
        norms[i] = std::sqrt(s);
      }
    });
    double mean_err = pairwise_sum(norms.data(), n, 1) / static_cast<double>(n);
    if (mean_err > worst) worst = mean_err;
  }
  return worst;
}

std::vector<double> mean_square_norms(const VariationalPath& path) {
  std::vector<double> out(path.values.size());
  std::vector<double> sq(path.n);
  for (std::size_t k = 0; k < path.values.size(); ++k) {
    const double* vk = path.values[k].data();
    parallel_chunks(path.n, [&](std::size_t i0, std::size_t i1) {
      for (std::size_t i = i0; i < i1; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < path.dim; ++j) {
          double z = vk[i * path.dim + j];
          s += z * z;
        }
        sq[i] = s;
      }
    });
    out[k] = pairwise_sum(sq.data(), path.n, 1) / static_cast<double>(path.n);
  }
  return out;
}

}  // namespace mvb
