#include "mvb/hamiltonian.hpp"

#include <Eigen/Dense>
#include <chrono>
#include <cmath>
#include <stdexcept>

#include "mvb/bismut.hpp"
#include "mvb/parallel.hpp"
#include "mvb/stats.hpp"

namespace mvb {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

namespace {

RowMat to_mat(const std::vector<double>& a, std::size_t rows, std::size_t cols) {
  RowMat out(rows, cols);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) out(r, c) = a[r * cols + c];
  return out;
}

void from_mat(const RowMat& m, double* out) {
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) out[r * m.cols() + c] = m(r, c);
}

double smallest_singular(const RowMat& q) {
  if (q.rows() == 0) return 0.0;
  if (q.rows() == 1) return std::fabs(q(0, 0));
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(q);
  return svd.singularValues().tail(1)(0);
}

double largest_singular(const RowMat& q) {
  if (q.rows() == 0) return 0.0;
  if (q.rows() == 1) return std::fabs(q(0, 0));
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(q);
  return svd.singularValues()(0);
}

// y (rows) += M (rows x cols) u (cols)
inline void matvec_add(const double* M, std::size_t rows, std::size_t cols, const double* u,
                       double* y) {
  for (std::size_t r = 0; r < rows; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < cols; ++c) s += M[r * cols + c] * u[c];
    y[r] += s;
  }
}

inline void matvec_set(const double* M, std::size_t rows, std::size_t cols, const double* u,
                       double* y) {
  for (std::size_t r = 0; r < rows; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < cols; ++c) s += M[r * cols + c] * u[c];
    y[r] = s;
  }
}

void check_traj(const HamiltonianModel& hm, const Trajectory& traj, const char* who) {
  if (traj.dim != hm.dim() || traj.noise_dim != hm.dim_driven())
    throw std::invalid_argument(std::string(who) + ": trajectory/model dim mismatch");
  if (traj.states.size() != traj.grid.n_steps + 1 || traj.dw.size() != traj.grid.n_steps)
    throw std::invalid_argument(std::string(who) + ": incomplete trajectory");
}

constexpr const char* kAnticipative =
    "anticipative divergence not supported; needs a linear degenerate block so the control is adapted";
constexpr const char* kControllability = "controllability failure";

}  // namespace

void HamiltonianModel::b2_lions_apply(double t, const Measure& mu, const double* u,
                                      double* out) const {
  std::size_t n = mu.size(), d = dim_driven(), full = dim();
  const EnsembleView& v = mu.view();
  parallel_chunks(n, [&](std::size_t i0, std::size_t i1) {
    std::vector<double> ker(d * full), acc(d);
    for (std::size_t i = i0; i < i1; ++i) {
      std::fill(acc.begin(), acc.end(), 0.0);
      for (std::size_t j = 0; j < n; ++j) {
        b2_lions(t, v.state(i), mu, v.state(j), ker.data());
        matvec_add(ker.data(), d, full, u + j * full, acc.data());
      }
      for (std::size_t r = 0; r < d; ++r) out[i * d + r] = acc[r] / static_cast<double>(n);
    }
  });
}

void HamiltonianModel::sigma_inv(double t, double* out) const {
  std::size_t d = dim_driven();
  std::vector<double> sig(d * d);
  sigma(t, sig.data());
  if (d == 1) {
    if (sig[0] == 0.0) throw std::runtime_error("sigma_inv: singular diffusion");
    out[0] = 1.0 / sig[0];
    return;
  }
  RowMat s = to_mat(sig, d, d);
  Eigen::FullPivLU<Eigen::MatrixXd> lu(s);
  if (!lu.isInvertible()) throw std::runtime_error("sigma_inv: singular diffusion");
  RowMat inv = lu.inverse();
  from_mat(inv, out);
}

// ---- full-system adapter ----

namespace {

class HamiltonianAsModel : public Model {
 public:
  HamiltonianAsModel(std::shared_ptr<const HamiltonianModel> hm, double K, double lambda)
      : hm_(std::move(hm)), K_(K), lambda_(lambda) {}

  std::size_t dim() const override { return hm_->dim(); }
  std::size_t noise_dim() const override { return hm_->dim_driven(); }
  std::string id() const override { return hm_->id(); }

  void drift(double t, const double* x, const Measure& mu, double* out) const override {
    std::size_t m = hm_->dim_degenerate();
    hm_->b1(t, x, out);
    hm_->b2(t, x, mu, out + m);
  }

  void drift_grad(double t, const double* x, const Measure& mu, double* out) const override {
    std::size_t m = hm_->dim_degenerate(), d = hm_->dim_driven(), full = m + d;
    std::vector<double> g1(m * m), g2(m * d), gb2(d * full);
    hm_->b1_grad1(t, x, g1.data());
    hm_->b1_grad2(t, x, g2.data());
    hm_->b2_grad(t, x, mu, gb2.data());
    for (std::size_t r = 0; r < m; ++r) {
      for (std::size_t c = 0; c < m; ++c) out[r * full + c] = g1[r * m + c];
      for (std::size_t c = 0; c < d; ++c) out[r * full + m + c] = g2[r * d + c];
    }
    for (std::size_t r = 0; r < d; ++r)
      for (std::size_t c = 0; c < full; ++c) out[(m + r) * full + c] = gb2[r * full + c];
  }

  void drift_lions(double t, const double* x, const Measure& mu, const double* z,
                   double* out) const override {
    std::size_t m = hm_->dim_degenerate(), d = hm_->dim_driven(), full = m + d;
    for (std::size_t idx = 0; idx < m * full; ++idx) out[idx] = 0.0;
    hm_->b2_lions(t, x, mu, z, out + m * full);
  }

  void drift_lions_apply(double t, const Measure& mu, const double* u,
                         double* out) const override {
    std::size_t n = mu.size(), m = hm_->dim_degenerate(), d = hm_->dim_driven(), full = m + d;
    std::vector<double> bottom(n * d);
    hm_->b2_lions_apply(t, mu, u, bottom.data());
    parallel_chunks(n, [&](std::size_t i0, std::size_t i1) {
      for (std::size_t i = i0; i < i1; ++i) {
        for (std::size_t r = 0; r < m; ++r) out[i * full + r] = 0.0;
        for (std::size_t r = 0; r < d; ++r) out[i * full + m + r] = bottom[i * d + r];
      }
    });
  }

  void diffusion(double t, const double*, double* out) const override {
    std::size_t m = hm_->dim_degenerate(), d = hm_->dim_driven(), full = m + d;
    std::vector<double> sig(d * d);
    hm_->sigma(t, sig.data());
    for (std::size_t idx = 0; idx < full * d; ++idx) out[idx] = 0.0;
    for (std::size_t r = 0; r < d; ++r)
      for (std::size_t c = 0; c < d; ++c) out[(m + r) * d + c] = sig[r * d + c];
  }

  bool constant_diffusion() const override { return true; }
  double K_bound(double) const override { return K_; }
  double lambda_bound(double) const override { return lambda_; }

 private:
  std::shared_ptr<const HamiltonianModel> hm_;
  double K_, lambda_;
};

}  // namespace

std::shared_ptr<Model> hamiltonian_as_model(std::shared_ptr<const HamiltonianModel> hm,
                                            double declared_K, double declared_lambda) {
  return std::make_shared<HamiltonianAsModel>(std::move(hm), declared_K, declared_lambda);
}

// ---- built-in models ----

namespace {

class KineticLangevin : public HamiltonianModel {
 public:
  std::size_t dim_degenerate() const override { return 1; }
  std::size_t dim_driven() const override { return 1; }
  std::string id() const override { return "kinetic_langevin"; }

  void b1(double, const double* x, double* out) const override { out[0] = x[1]; }
  void b1_grad1(double, const double*, double* out) const override { out[0] = 0.0; }
  void b1_grad2(double, const double*, double* out) const override { out[0] = 1.0; }

  void b2(double, const double*, const Measure&, double* out) const override { out[0] = 0.0; }
  void b2_grad(double, const double*, const Measure&, double* out) const override {
    out[0] = out[1] = 0.0;
  }
  void b2_lions(double, const double*, const Measure&, const double*, double* out) const override {
    out[0] = out[1] = 0.0;
  }
  void b2_lions_apply(double, const Measure& mu, const double*, double* out) const override {
    std::size_t n = mu.size();
    parallel_chunks(n, [&](std::size_t i0, std::size_t i1) {
      for (std::size_t i = i0; i < i1; ++i) out[i] = 0.0;
    });
  }

  void sigma(double, double* out) const override { out[0] = 1.0; }
  void control_matrix(double, double* out) const override { out[0] = 1.0; }
  double epsilon() const override { return 0.0; }
  double theta(double t, double T) const override { return T * t * t / 2.0 - t * t * t / 3.0; }
  bool adapted() const override { return true; }
};

class Example21Linear : public HamiltonianModel {
 public:
  std::size_t dim_degenerate() const override { return 2; }
  std::size_t dim_driven() const override { return 1; }
  std::string id() const override { return "example21_linear"; }

  void b1(double, const double* x, double* out) const override {
    out[0] = x[1];
    out[1] = x[2];
  }
  void b1_grad1(double, const double*, double* out) const override {
    out[0] = 0.0;
    out[1] = 1.0;
    out[2] = 0.0;
    out[3] = 0.0;
  }
  void b1_grad2(double, const double*, double* out) const override {
    out[0] = 0.0;
    out[1] = 1.0;
  }

  void b2(double, const double* x, const Measure& mu, double* out) const override {
    out[0] = -0.5 * x[2] + 0.25 * mu.mean()[2];
  }
  void b2_grad(double, const double*, const Measure&, double* out) const override {
    out[0] = 0.0;
    out[1] = 0.0;
    out[2] = -0.5;
  }
  void b2_lions(double, const double*, const Measure&, const double*, double* out) const override {
    out[0] = 0.0;
    out[1] = 0.0;
    out[2] = 0.25;
  }
  void b2_lions_apply(double, const Measure& mu, const double* u, double* out) const override {
    std::size_t n = mu.size();
    double mean_u2 = pairwise_sum(u + 2, n, 3) / static_cast<double>(n);
    double val = 0.25 * mean_u2;
    parallel_chunks(n, [&](std::size_t i0, std::size_t i1) {
      for (std::size_t i = i0; i < i1; ++i) out[i] = val;
    });
  }

  void sigma(double, double* out) const override { out[0] = 1.0; }
  void control_matrix(double, double* out) const override {
    out[0] = 0.0;
    out[1] = 1.0;
  }
  double epsilon() const override { return 0.0; }
  double theta(double t, double T) const override {
    double t2 = t * t, t3 = t2 * t, t4 = t3 * t, t5 = t4 * t;
    double q11 = T * T * T * t2 / 2.0 - T * T * t3 + 3.0 * T * t4 / 4.0 - t5 / 5.0;
    double q12 = T * T * t2 / 2.0 - 2.0 * T * t3 / 3.0 + t4 / 4.0;
    double q22 = T * t2 / 2.0 - t3 / 3.0;
    double tr = q11 + q22, det = q11 * q22 - q12 * q12;
    double disc = tr * tr - 4.0 * det;
    return (tr - std::sqrt(std::max(disc, 0.0))) / 2.0;
  }
  bool adapted() const override { return true; }
};

class DrivenOnly : public HamiltonianModel {
 public:
  explicit DrivenOnly(std::shared_ptr<const Model> base) : base_(std::move(base)) {
    if (!base_->constant_diffusion())
      throw std::invalid_argument("driven-only wrapper requires state-free diffusion");
    if (base_->noise_dim() != base_->dim())
      throw std::invalid_argument("driven-only wrapper requires square diffusion");
  }

  std::size_t dim_degenerate() const override { return 0; }
  std::size_t dim_driven() const override { return base_->dim(); }
  std::string id() const override { return base_->id() + "_driven"; }

  void b1(double, const double*, double*) const override {}
  void b1_grad1(double, const double*, double*) const override {}
  void b1_grad2(double, const double*, double*) const override {}

  void b2(double t, const double* x, const Measure& mu, double* out) const override {
    base_->drift(t, x, mu, out);
  }
  void b2_grad(double t, const double* x, const Measure& mu, double* out) const override {
    base_->drift_grad(t, x, mu, out);
  }
  void b2_lions(double t, const double* x, const Measure& mu, const double* z,
                double* out) const override {
    base_->drift_lions(t, x, mu, z, out);
  }
  void b2_lions_apply(double t, const Measure& mu, const double* u, double* out) const override {
    base_->drift_lions_apply(t, mu, u, out);
  }

  void sigma(double t, double* out) const override {
    std::vector<double> zero(base_->dim(), 0.0);
    base_->diffusion(t, zero.data(), out);
  }
  void control_matrix(double, double*) const override {}
  double epsilon() const override { return 0.0; }
  double theta(double t, double) const override { return t; }
  bool adapted() const override { return true; }

 private:
  std::shared_ptr<const Model> base_;
};

}  // namespace

std::shared_ptr<HamiltonianModel> make_kinetic_langevin() {
  return std::make_shared<KineticLangevin>();
}

std::shared_ptr<HamiltonianModel> make_example21_linear() {
  return std::make_shared<Example21Linear>();
}

std::shared_ptr<HamiltonianModel> make_driven_only(std::shared_ptr<const Model> base) {
  return std::make_shared<DrivenOnly>(std::move(base));
}

// ---- controllability rank ----

KalmanResult kalman_rank(const std::vector<double>& A, std::size_t m,
                         const std::vector<double>& B, std::size_t d, std::size_t k_max) {
  if (m == 0) return {0, true};
  if (A.size() != m * m || B.size() != m * d)
    throw std::invalid_argument("kalman_rank: matrix shape mismatch");
  RowMat a = to_mat(A, m, m);
  RowMat block = to_mat(B, m, d);
  Eigen::MatrixXd stacked(m, d * (k_max + 1));
  for (std::size_t k = 0; k <= k_max; ++k) {
    stacked.block(0, static_cast<Eigen::Index>(k * d), m, d) = block;
    block = a * block;
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(stacked);
  double top = svd.singularValues().size() > 0 ? svd.singularValues()(0) : 0.0;
  double tol = 1e-10 * std::max(top, 1.0);
  std::size_t rank = 0;
  for (Eigen::Index i = 0; i < svd.singularValues().size(); ++i)
    if (svd.singularValues()(i) > tol) ++rank;
  return {rank, rank == m};
}

// ---- per-particle flow and Gramian ----

KFlow propagate_K(const HamiltonianModel& hm, const Trajectory& traj, std::size_t s_index) {
  check_traj(hm, traj, "propagate_K");
  if (s_index > traj.grid.n_steps)
    throw std::invalid_argument("propagate_K: s_index out of range");
  std::size_t m = hm.dim_degenerate(), n = traj.n;
  std::size_t steps = traj.grid.n_steps;
  KFlow flow;
  flow.s_index = s_index;
  flow.n = n;
  flow.m = m;
  flow.mats.assign(steps + 1 - s_index, std::vector<double>(n * m * m));
  if (m == 0) return flow;

  double dt = traj.grid.dt;
  parallel_chunks(n, [&](std::size_t i0, std::size_t i1) {
    std::vector<double> g1(m * m), cur(m * m), nxt(m * m);
    for (std::size_t i = i0; i < i1; ++i) {
      std::fill(cur.begin(), cur.end(), 0.0);
      for (std::size_t r = 0; r < m; ++r) cur[r * m + r] = 1.0;
      std::copy(cur.begin(), cur.end(), flow.mats[0].data() + i * m * m);
      for (std::size_t k = s_index; k < steps; ++k) {
        double t = traj.grid.t(k);
        hm.b1_grad1(t, traj.states[k].data() + i * traj.dim, g1.data());
        // nxt = (I + dt g1) cur
        for (std::size_t r = 0; r < m; ++r)
          for (std::size_t c = 0; c < m; ++c) {
            double s = cur[r * m + c];
            for (std::size_t l = 0; l < m; ++l) s += dt * g1[r * m + l] * cur[l * m + c];
            nxt[r * m + c] = s;
          }
        for (double e : nxt)
          if (!std::isfinite(e))
            throw std::runtime_error("propagate_K: non-finite flow at t=" + std::to_string(t));
        std::copy(nxt.begin(), nxt.end(), flow.mats[k + 1 - s_index].data() + i * m * m);
        cur.swap(nxt);
      }
    }
  });
  return flow;
}

KFlow terminal_flow(const HamiltonianModel& hm, const Trajectory& traj) {
  check_traj(hm, traj, "terminal_flow");
  std::size_t m = hm.dim_degenerate(), n = traj.n;
  std::size_t steps = traj.grid.n_steps;
  KFlow flow;
  flow.s_index = 0;
  flow.n = n;
  flow.m = m;
  flow.mats.assign(steps + 1, std::vector<double>(n * m * m));
  if (m == 0) return flow;

  double dt = traj.grid.dt;
  parallel_chunks(n, [&](std::size_t i0, std::size_t i1) {
    std::vector<double> g1(m * m), cur(m * m), nxt(m * m);
    for (std::size_t i = i0; i < i1; ++i) {
      std::fill(cur.begin(), cur.end(), 0.0);
      for (std::size_t r = 0; r < m; ++r) cur[r * m + r] = 1.0;
      std::copy(cur.begin(), cur.end(), flow.mats[steps].data() + i * m * m);
      for (std::size_t k = steps; k-- > 0;) {
        double t = traj.grid.t(k);
        hm.b1_grad1(t, traj.states[k].data() + i * traj.dim, g1.data());
        // nxt = cur (I + dt g1)
        for (std::size_t r = 0; r < m; ++r)
          for (std::size_t c = 0; c < m; ++c) {
            double s = cur[r * m + c];
            for (std::size_t l = 0; l < m; ++l) s += dt * cur[r * m + l] * g1[l * m + c];
            nxt[r * m + c] = s;
          }
        for (double e : nxt)
          if (!std::isfinite(e))
            throw std::runtime_error("terminal_flow: non-finite flow at t=" + std::to_string(t));
        std::copy(nxt.begin(), nxt.end(), flow.mats[k].data() + i * m * m);
        cur.swap(nxt);
      }
    }
  });
  return flow;
}

QResult compute_Q(const HamiltonianModel& hm, const Trajectory& traj, const KFlow& terminal) {
  check_traj(hm, traj, "compute_Q");
  std::size_t m = hm.dim_degenerate(), d = hm.dim_driven(), n = traj.n;
  std::size_t steps = traj.grid.n_steps;
  if (terminal.s_index != 0 || terminal.n != n || terminal.m != m ||
      terminal.mats.size() != steps + 1)
    throw std::invalid_argument("compute_Q: flow family mismatch");
  QResult qr;
  qr.n = n;
  qr.m = m;
  qr.q.assign(steps + 1, std::vector<double>(n * m * m, 0.0));
  if (m == 0) return qr;

  double dt = traj.grid.dt, T = traj.grid.T;
  double eps = hm.epsilon();
  double slack = 1.0 + 10.0 * dt;
  std::vector<std::size_t> viol(n, 0);
  std::vector<double> worst(n, 1e300);

  parallel_chunks(n, [&](std::size_t i0, std::size_t i1) {
    std::vector<double> g2(m * d), bmat(m * d), f_prev(m * m), f_cur(m * m), kb(m * d);
    for (std::size_t i = i0; i < i1; ++i) {
      // matrix part of the integrand; the scalar weight t(T-t) is handled by
      // the panel rule below so the first panel keeps full rank
      auto integrand = [&](std::size_t k, double* out) {
        double t = traj.grid.t(k);
        hm.b1_grad2(t, traj.states[k].data() + i * traj.dim, g2.data());
        hm.control_matrix(t, bmat.data());
        const double* kt = terminal.at(k, i);
        // kb = K g2 (m x d)
        for (std::size_t r = 0; r < m; ++r)
          for (std::size_t c = 0; c < d; ++c) {
            double s = 0.0;
            for (std::size_t l = 0; l < m; ++l) s += kt[r * m + l] * g2[l * d + c];
            kb[r * d + c] = s;
          }
        // out = kb B^T K^T
        for (std::size_t r = 0; r < m; ++r)
          for (std::size_t c = 0; c < m; ++c) {
            double s = 0.0;
            for (std::size_t a = 0; a < d; ++a) {
              double bk = 0.0;
              for (std::size_t l = 0; l < m; ++l) bk += bmat[l * d + a] * kt[c * m + l];
              s += kb[r * d + a] * bk;
            }
            out[r * m + c] = s;
          }
      };
      integrand(0, f_prev.data());
      for (std::size_t k = 0; k < steps; ++k) {
        integrand(k + 1, f_cur.data());
        // exact moments of the weight u(T-u) against the linear hats of the
        // panel [t_k, t_k + dt]: integrates the weight exactly, so panel one
        // mixes two matrix samples instead of collapsing to a single one
        double a = traj.grid.t(k), b = T - a;
        double wa = dt * (a * b / 2.0 + dt * (b - a) / 6.0 - dt * dt / 12.0);
        double wb = dt * (a * b / 2.0 + dt * (b - a) / 3.0 - dt * dt / 4.0);
        const double* prev_q = qr.q[k].data() + i * m * m;
        double* next_q = qr.q[k + 1].data() + i * m * m;
        for (std::size_t idx = 0; idx < m * m; ++idx)
          next_q[idx] = prev_q[idx] + wa * f_prev[idx] + wb * f_cur[idx];
        f_prev.swap(f_cur);
      }
      // declared-bound check at positive grid times
      std::size_t bad = 0;
      double w = 1e300;
      for (std::size_t k = 1; k <= steps; ++k) {
        double th = hm.theta(traj.grid.t(k), T);
        if (th <= 0.0) continue;
        RowMat q = to_mat(std::vector<double>(qr.q[k].data() + i * m * m,
                                              qr.q[k].data() + (i + 1) * m * m),
                          m, m);
        double smin = smallest_singular(q);
        double ratio = smin * slack / ((1.0 - eps) * th);
        if (ratio < w) w = ratio;
        if (ratio < 1.0 - 1e-12) ++bad;
      }
      viol[i] = bad;
      worst[i] = w;
    }
  });

  bool any_check = false;
  double worst_all = 1e300;
  for (std::size_t i = 0; i < n; ++i) {
    qr.violations += viol[i];
    if (worst[i] < 1e300) {
      any_check = true;
      if (worst[i] < worst_all) worst_all = worst[i];
    }
  }
  if (any_check) qr.worst_ratio = worst_all;

  // terminal Gramian must be usable
  for (std::size_t i = 0; i < n; ++i) {
    RowMat qT = to_mat(
        std::vector<double>(qr.q[steps].data() + i * m * m, qr.q[steps].data() + (i + 1) * m * m),
        m, m);
    double smin = smallest_singular(qT), smax = largest_singular(qT);
    if (!(smin > 0.0) || smax / smin > 1e12) throw std::runtime_error(kControllability);
  }
  return qr;
}

// ---- control construction along stored paths ----

AlphaPaths build_alpha(const HamiltonianModel& hm, const Trajectory& traj, const Direction& phi,
                       const KFlow& terminal, const QResult& qr) {
  check_traj(hm, traj, "build_alpha");
  std::size_t m = hm.dim_degenerate(), d = hm.dim_driven(), full = m + d, n = traj.n;
  std::size_t steps = traj.grid.n_steps;
  if (phi.dim() != full) throw std::invalid_argument("build_alpha: direction dim mismatch");
  if (qr.n != n || qr.m != m) throw std::invalid_argument("build_alpha: Gramian mismatch");
  double dt = traj.grid.dt, T = traj.grid.T;

  AlphaPaths ap;
  ap.n = n;
  ap.m = m;
  ap.d = d;
  ap.values.assign(steps + 1, std::vector<double>(n * full));

  std::vector<double> theta_vals(steps + 1);
  for (std::size_t k = 0; k <= steps; ++k) theta_vals[k] = hm.theta(traj.grid.t(k), T);
  double int_th2 = 0.0;
  for (std::size_t k = 0; k < steps; ++k)
    int_th2 += dt / 2.0 * (theta_vals[k] * theta_vals[k] + theta_vals[k + 1] * theta_vals[k + 1]);
  if (m > 0 && !(int_th2 > 0.0)) throw std::runtime_error(kControllability);

  parallel_chunks(n, [&](std::size_t i0, std::size_t i1) {
    std::vector<double> p1(m), p2(d), g1(m * m), g2(m * d), bmat(m * d);
    for (std::size_t i = i0; i < i1; ++i) {
      std::vector<double> pv(full);
      phi.eval(traj.states[0].data() + i * traj.dim, pv.data());
      for (std::size_t r = 0; r < m; ++r) p1[r] = pv[r];
      for (std::size_t r = 0; r < d; ++r) p2[r] = pv[m + r];

      if (m == 0) {
        for (std::size_t k = 0; k <= steps; ++k) {
          double pref = (T - traj.grid.t(k)) / T;
          for (std::size_t r = 0; r < d; ++r) ap.values[k][i * full + r] = pref * p2[r];
        }
        continue;
      }

      // tail integrals R_k = int_{t_k}^T theta^2 Q_s^{-1} ds and inverses
      std::vector<Eigen::MatrixXd> ginv(steps + 1, Eigen::MatrixXd::Zero(m, m));
      for (std::size_t k = 1; k <= steps; ++k) {
        RowMat q = to_mat(std::vector<double>(qr.q[k].data() + i * m * m,
                                              qr.q[k].data() + (i + 1) * m * m),
                          m, m);
        Eigen::FullPivLU<Eigen::MatrixXd> lu(q);
        if (!lu.isInvertible())
          throw std::runtime_error("build_alpha: Q inversion failure at t=" +
                                   std::to_string(traj.grid.t(k)));
        ginv[k] = theta_vals[k] * theta_vals[k] * lu.inverse();
      }
      std::vector<Eigen::MatrixXd> tail(steps + 1, Eigen::MatrixXd::Zero(m, m));
      for (std::size_t k = steps; k-- > 0;)
        tail[k] = tail[k + 1] + dt / 2.0 * (ginv[k] + ginv[k + 1]);

      // c0 = int_0^T ((T-s)/T) K_{T,s} grad2(X_s) ds, trapezoid on the grid
      Eigen::MatrixXd c0 = Eigen::MatrixXd::Zero(m, d);
      for (std::size_t k = 0; k <= steps; ++k) {
        double t = traj.grid.t(k);
        double wq = (k == 0 || k == steps) ? dt / 2.0 : dt;
        hm.b1_grad2(t, traj.states[k].data() + i * traj.dim, g2.data());
        RowMat kt = to_mat(std::vector<double>(terminal.at(k, i), terminal.at(k, i) + m * m), m,
                           m);
        c0 += wq * ((T - t) / T) * kt * to_mat(g2, m, d);
      }
      Eigen::MatrixXd qT =
          to_mat(std::vector<double>(qr.q[steps].data() + i * m * m,
                                     qr.q[steps].data() + (i + 1) * m * m),
                 m, m);
      Eigen::MatrixXd qTinv_c0 = qT.fullPivLu().solve(c0);
      Eigen::VectorXd phi1 = Eigen::Map<Eigen::VectorXd>(p1.data(), m);
      Eigen::VectorXd phi2 = Eigen::Map<Eigen::VectorXd>(p2.data(), d);
      RowMat k0 = to_mat(std::vector<double>(terminal.at(0, i), terminal.at(0, i) + m * m), m, m);
      Eigen::VectorXd k0_phi1 = k0 * phi1;

      // driven block of the control path
      std::vector<Eigen::VectorXd> a2(steps + 1);
      for (std::size_t k = 0; k <= steps; ++k) {
        double t = traj.grid.t(k);
        hm.control_matrix(t, bmat.data());
        RowMat kt = to_mat(std::vector<double>(terminal.at(k, i), terminal.at(k, i) + m * m), m,
                           m);
        Eigen::MatrixXd p = t * (T - t) * to_mat(bmat, m, d).transpose() * kt.transpose();
        a2[k] = ((T - t) / T) * phi2 - p * (tail[k] * k0_phi1) / int_th2 - p * (qTinv_c0 * phi2);
      }

      // degenerate block by the forward ODE, then store
      Eigen::VectorXd a1 = phi1;
      for (std::size_t k = 0; k <= steps; ++k) {
        double* out = ap.values[k].data() + i * full;
        for (std::size_t r = 0; r < m; ++r) out[r] = a1(r);
        for (std::size_t r = 0; r < d; ++r) out[m + r] = a2[k](r);
        if (k == steps) break;
        double t = traj.grid.t(k);
        hm.b1_grad1(t, traj.states[k].data() + i * traj.dim, g1.data());
        hm.b1_grad2(t, traj.states[k].data() + i * traj.dim, g2.data());
        a1 = a1 + dt * (to_mat(g1, m, m) * a1 + to_mat(g2, m, d) * a2[k]);
      }
    }
  });
  return ap;
}

HWPaths solve_h_w(const HamiltonianModel& hm, const Trajectory& traj, const AlphaPaths& alpha) {
  check_traj(hm, traj, "solve_h_w");
  std::size_t m = hm.dim_degenerate(), d = hm.dim_driven(), full = m + d, n = traj.n;
  std::size_t steps = traj.grid.n_steps;
  if (alpha.n != n || alpha.m != m || alpha.d != d || alpha.values.size() != steps + 1)
    throw std::invalid_argument("solve_h_w: control path mismatch");
  double dt = traj.grid.dt;

  HWPaths hw;
  hw.n = n;
  hw.d = d;
  hw.full = full;
  hw.h_prime.assign(steps, std::vector<double>(n * d));
  hw.w.assign(steps + 1, std::vector<double>(n * full, 0.0));

  std::vector<double> u(n * full), mf(n * d), sinv(d * d), sig(d * d);
  for (std::size_t k = 0; k < steps; ++k) {
    double t = traj.grid.t(k);
    Measure mu(traj.at(k));
    hm.sigma(t, sig.data());
    hm.sigma_inv(t, sinv.data());
    const double* ak = alpha.values[k].data();
    const double* an = alpha.values[k + 1].data();
    const double* wk = hw.w[k].data();
    // mean-field term acts on alpha + w
    for (std::size_t idx = 0; idx < n * full; ++idx) u[idx] = ak[idx] + wk[idx];
    hm.b2_lions_apply(t, mu, u.data(), mf.data());

    double* hp = hw.h_prime[k].data();
    double* wn = hw.w[k + 1].data();
    parallel_chunks(n, [&](std::size_t i0, std::size_t i1) {
      std::vector<double> gb2(d * full), g1(m * m), g2(m * d), rhs(d), hpi(d), sh(d), gw(full);
      for (std::size_t i = i0; i < i1; ++i) {
        const double* xi = traj.states[k].data() + i * traj.dim;
        hm.b2_grad(t, xi, mu, gb2.data());
        // rhs = grad_alpha b2 - alpha2' + mean-field
        matvec_set(gb2.data(), d, full, ak + i * full, rhs.data());
        for (std::size_t r = 0; r < d; ++r) {
          double a2p = (an[i * full + m + r] - ak[i * full + m + r]) / dt;
          rhs[r] += -a2p + mf[i * d + r];
        }
        matvec_set(sinv.data(), d, d, rhs.data(), hpi.data());
        for (std::size_t r = 0; r < d; ++r) hp[i * d + r] = hpi[r];
        // w step: w' = (grad b) w + (0, sigma h')
        if (m > 0) {
          hm.b1_grad1(t, xi, g1.data());
          hm.b1_grad2(t, xi, g2.data());
          matvec_set(g1.data(), m, m, wk + i * full, gw.data());
          matvec_add(g2.data(), m, d, wk + i * full + m, gw.data());
        }
        matvec_set(gb2.data(), d, full, wk + i * full, gw.data() + m);
        matvec_set(sig.data(), d, d, hpi.data(), sh.data());
        for (std::size_t r = 0; r < m; ++r) wn[i * full + r] = wk[i * full + r] + dt * gw[r];
        for (std::size_t r = 0; r < d; ++r)
          wn[i * full + m + r] = wk[i * full + m + r] + dt * (gw[m + r] + sh[r]);
      }
    });
    check_finite({wn, n, full}, "solve_h_w: response flow");
  }
  return hw;
}

std::vector<double> divergence_adapted(const HamiltonianModel& hm, const Trajectory& traj,
                                       const std::vector<std::vector<double>>& h_prime) {
  if (!hm.adapted()) throw std::runtime_error(kAnticipative);
  check_traj(hm, traj, "divergence_adapted");
  std::size_t n = traj.n, d = traj.noise_dim;
  if (h_prime.size() != traj.grid.n_steps)
    throw std::invalid_argument("divergence_adapted: step mismatch");
  for (const auto& hk : h_prime)
    if (hk.size() != n * d) throw std::invalid_argument("divergence_adapted: shape mismatch");
  std::vector<double> out(n, 0.0);
  parallel_chunks(n, [&](std::size_t i0, std::size_t i1) {
    for (std::size_t k = 0; k < h_prime.size(); ++k) {
      const double* hk = h_prime[k].data();
      const double* dwk = traj.dw[k].data();
      for (std::size_t i = i0; i < i1; ++i) {
        double s = 0.0;
        for (std::size_t c = 0; c < d; ++c) s += hk[i * d + c] * dwk[i * d + c];
        out[i] += s;
      }
    }
  });
  return out;
}

// ---- deterministic pipeline for the adapted class ----

DegenerateControl build_control(const HamiltonianModel& hm, const TimeGrid& grid) {
  std::size_t m = hm.dim_degenerate(), d = hm.dim_driven();
  if (d == 0) throw std::invalid_argument("build_control: driven block is empty");
  std::size_t steps = grid.n_steps;
  double dt = grid.dt, T = grid.T;

  DegenerateControl ctl;
  ctl.grid = grid;
  ctl.m = m;
  ctl.d = d;
  ctl.k_terminal.assign(steps + 1, std::vector<double>(m * m));
  ctl.q.assign(steps + 1, std::vector<double>(m * m, 0.0));
  ctl.m1a.assign(steps + 1, std::vector<double>(m * m, 0.0));
  ctl.m1b.assign(steps + 1, std::vector<double>(m * d, 0.0));
  ctl.m2a.assign(steps + 1, std::vector<double>(d * d));
  ctl.m2b.assign(steps + 1, std::vector<double>(d * m));
  ctl.m2ap.assign(steps + 1, std::vector<double>(d * d));
  ctl.m2bp.assign(steps + 1, std::vector<double>(d * m));
  ctl.theta_vals.assign(steps + 1, 0.0);
  for (std::size_t k = 0; k <= steps; ++k) ctl.theta_vals[k] = hm.theta(grid.t(k), T);

  std::vector<double> zero(m + d, 0.0);
  auto grad1_at = [&](double t) {
    std::vector<double> g(m * m);
    hm.b1_grad1(t, zero.data(), g.data());
    return to_mat(g, m, m);
  };
  auto grad2_at = [&](double t) {
    std::vector<double> g(m * d);
    hm.b1_grad2(t, zero.data(), g.data());
    return to_mat(g, m, d);
  };
  auto control_at = [&](double t) {
    std::vector<double> g(m * d);
    hm.control_matrix(t, g.data());
    return to_mat(g, m, d);
  };

  Eigen::MatrixXd id_m = Eigen::MatrixXd::Identity(m, m);
  Eigen::MatrixXd id_d = Eigen::MatrixXd::Identity(d, d);

  // m = 0: only the driven prefactor ramp survives
  if (m == 0) {
    for (std::size_t k = 0; k <= steps; ++k) {
      double t = grid.t(k);
      RowMat a2 = ((T - t) / T) * id_d;
      RowMat a2p = (-1.0 / T) * id_d;
      from_mat(a2, ctl.m2a[k].data());
      from_mat(a2p, ctl.m2ap[k].data());
    }
    return ctl;
  }

  // terminal flow by backward products
  std::vector<Eigen::MatrixXd> kt(steps + 1, id_m);
  for (std::size_t k = steps; k-- > 0;) {
    kt[k] = kt[k + 1] * (id_m + dt * grad1_at(grid.t(k)));
    from_mat(RowMat(kt[k]), ctl.k_terminal[k].data());
  }
  from_mat(RowMat(id_m), ctl.k_terminal[steps].data());

  // Gramian by 3-point Gauss-Legendre per panel (handles the vanishing
  // integrand near t = 0 without rank loss)
  const double gl_x[3] = {-0.774596669241483377, 0.0, 0.774596669241483377};
  const double gl_w[3] = {5.0 / 9.0, 8.0 / 9.0, 5.0 / 9.0};
  std::vector<Eigen::MatrixXd> q(steps + 1, Eigen::MatrixXd::Zero(m, m));
  for (std::size_t k = 0; k < steps; ++k) {
    double a = grid.t(k), b = grid.t(k + 1);
    double mid = (a + b) / 2.0, half = (b - a) / 2.0;
    Eigen::MatrixXd ak = grad1_at(a);
    Eigen::MatrixXd panel = Eigen::MatrixXd::Zero(m, m);
    for (int gq = 0; gq < 3; ++gq) {
      double s = mid + half * gl_x[gq];
      double delta = b - s;
      Eigen::MatrixXd bridge = id_m + delta * ak + (delta * delta / 2.0) * (ak * ak);
      Eigen::MatrixXd ks = kt[k + 1] * bridge;
      Eigen::MatrixXd kg = ks * grad2_at(s);
      Eigen::MatrixXd bk = control_at(s).transpose() * ks.transpose();
      panel += gl_w[gq] * (s * (T - s)) * (kg * bk);
    }
    q[k + 1] = q[k] + half * panel;
    from_mat(RowMat(q[k + 1]), ctl.q[k + 1].data());
  }

  // declared-bound check with discretization slack
  double eps = hm.epsilon();
  double slack = 1.0 + 10.0 * dt;
  ctl.worst_ratio = 1e300;
  for (std::size_t k = 1; k <= steps; ++k) {
    double th = ctl.theta_vals[k];
    if (th <= 0.0) continue;
    double smin = smallest_singular(RowMat(q[k]));
    double ratio = smin * slack / ((1.0 - eps) * th);
    if (ratio < ctl.worst_ratio) ctl.worst_ratio = ratio;
    if (ratio < 1.0 - 1e-12) ++ctl.violations;
  }
  {
    double smin = smallest_singular(RowMat(q[steps]));
    double smax = largest_singular(RowMat(q[steps]));
    if (!(smin > 0.0) || smax / smin > 1e12) throw std::runtime_error(kControllability);
  }

  double int_th2 = 0.0;
  for (std::size_t k = 0; k < steps; ++k)
    int_th2 += dt / 2.0 * (ctl.theta_vals[k] * ctl.theta_vals[k] +
                           ctl.theta_vals[k + 1] * ctl.theta_vals[k + 1]);
  if (!(int_th2 > 0.0)) throw std::runtime_error(kControllability);

  // tail integrals of theta^2 Q^{-1}
  std::vector<Eigen::MatrixXd> ginv(steps + 1, Eigen::MatrixXd::Zero(m, m));
  for (std::size_t k = 1; k <= steps; ++k)
    ginv[k] = ctl.theta_vals[k] * ctl.theta_vals[k] * q[k].fullPivLu().inverse();
  std::vector<Eigen::MatrixXd> tail(steps + 1, Eigen::MatrixXd::Zero(m, m));
  for (std::size_t k = steps; k-- > 0;) tail[k] = tail[k + 1] + dt / 2.0 * (ginv[k] + ginv[k + 1]);

  Eigen::MatrixXd c0 = Eigen::MatrixXd::Zero(m, d);
  for (std::size_t k = 0; k <= steps; ++k) {
    double t = grid.t(k);
    double wq = (k == 0 || k == steps) ? dt / 2.0 : dt;
    c0 += wq * ((T - t) / T) * kt[k] * grad2_at(t);
  }
  Eigen::MatrixXd qTinv_c0 = q[steps].fullPivLu().solve(c0);

  for (std::size_t k = 0; k <= steps; ++k) {
    double t = grid.t(k);
    Eigen::MatrixXd bt = control_at(t).transpose();  // d x m
    Eigen::MatrixXd at = grad1_at(t);
    Eigen::MatrixXd p = t * (T - t) * bt * kt[k].transpose();
    Eigen::MatrixXd pp =
        (T - 2.0 * t) * bt * kt[k].transpose() - t * (T - t) * bt * at.transpose() * kt[k].transpose();
    RowMat m2a = ((T - t) / T) * id_d - p * qTinv_c0;
    RowMat m2b = -(p * tail[k] * kt[0]) / int_th2;
    RowMat m2ap = (-1.0 / T) * id_d - pp * qTinv_c0;
    RowMat m2bp = ((-pp * tail[k] + p * ginv[k]) * kt[0]) / int_th2;
    from_mat(m2a, ctl.m2a[k].data());
    from_mat(m2b, ctl.m2b[k].data());
    from_mat(m2ap, ctl.m2ap[k].data());
    from_mat(m2bp, ctl.m2bp[k].data());
  }

  // degenerate block responses: m1a carries phi1, m1b carries phi2
  Eigen::MatrixXd m1a = id_m, m1b = Eigen::MatrixXd::Zero(m, d);
  from_mat(RowMat(m1a), ctl.m1a[0].data());
  for (std::size_t k = 0; k < steps; ++k) {
    double t = grid.t(k);
    Eigen::MatrixXd at = grad1_at(t);
    Eigen::MatrixXd btm = grad2_at(t);
    Eigen::MatrixXd m2a_k = to_mat(ctl.m2a[k], d, d);
    Eigen::MatrixXd m2b_k = to_mat(ctl.m2b[k], d, m);
    m1a = m1a + dt * (at * m1a + btm * m2b_k);
    m1b = m1b + dt * (at * m1b + btm * m2a_k);
    from_mat(RowMat(m1a), ctl.m1a[k + 1].data());
    from_mat(RowMat(m1b), ctl.m1b[k + 1].data());
  }
  return ctl;
}

EstimatorResult estimate_lions_derivative_degenerate(const HamiltonianModel& hm,
                                                     const TestFunction& f,
                                                     const InitialSampler& init,
                                                     const Direction& phi, const TimeGrid& grid,
                                                     std::size_t n_particles,
                                                     std::uint64_t seed) {
  auto t_start = std::chrono::steady_clock::now();
  if (!hm.adapted()) throw std::runtime_error(kAnticipative);
  if (n_particles == 0) throw std::invalid_argument("empty ensemble");
  std::size_t m = hm.dim_degenerate(), d = hm.dim_driven(), full = m + d;
  if (init.dim() != full || phi.dim() != full)
    throw std::invalid_argument("estimate_lions_derivative_degenerate: dim mismatch");

  DegenerateControl ctl = build_control(hm, grid);

  std::size_t n = n_particles;
  std::vector<double> X(n * full), Xn(n * full), W(n * full, 0.0), Wn(n * full);
  std::vector<double> PHI(n * full), Abuf(n * full), Ubuf(n * full);
  std::vector<double> a2p(n * d), mf(n * d), div(n, 0.0), dwk;
  std::vector<double> sig(d * d), sinv(d * d);

  parallel_chunks(n, [&](std::size_t i0, std::size_t i1) {
    init.sample(seed, i0, i1, X.data() + i0 * full);
    for (std::size_t i = i0; i < i1; ++i) phi.eval(X.data() + i * full, PHI.data() + i * full);
  });
  check_finite({X.data(), n, full}, "degenerate estimator: initial ensemble");

  detail::NoiseBuffer nb(seed, n, d);
  double root_dt = std::sqrt(grid.dt);
  for (std::size_t k = 0; k < grid.n_steps; ++k) {
    double t = grid.t(k);
    Measure mu({X.data(), n, full});
    nb.fetch(k, root_dt, dwk);
    hm.sigma(t, sig.data());
    hm.sigma_inv(t, sinv.data());
    const double* m1a = ctl.m1a[k].data();
    const double* m1b = ctl.m1b[k].data();
    const double* m2a = ctl.m2a[k].data();
    const double* m2b = ctl.m2b[k].data();
    const double* m2ap = ctl.m2ap[k].data();
    const double* m2bp = ctl.m2bp[k].data();

    parallel_chunks(n, [&](std::size_t i0, std::size_t i1) {
      for (std::size_t i = i0; i < i1; ++i) {
        const double* p1 = PHI.data() + i * full;      // degenerate block of phi
        const double* p2 = PHI.data() + i * full + m;  // driven block of phi
        double* ai = Abuf.data() + i * full;
        if (m > 0) {
          matvec_set(m1a, m, m, p1, ai);
          matvec_add(m1b, m, d, p2, ai);
        }
        matvec_set(m2a, d, d, p2, ai + m);
        matvec_add(m2b, d, m, p1, ai + m);
        matvec_set(m2ap, d, d, p2, a2p.data() + i * d);
        matvec_add(m2bp, d, m, p1, a2p.data() + i * d);
        for (std::size_t r = 0; r < full; ++r)
          Ubuf[i * full + r] = ai[r] + W[i * full + r];
      }
    });
    hm.b2_lions_apply(t, mu, Ubuf.data(), mf.data());

    parallel_chunks(n, [&](std::size_t i0, std::size_t i1) {
      std::vector<double> gb2(d * full), g1(m * m), g2(m * d), rhs(d), hpi(d), sh(d), gw(full);
      std::vector<double> b1v(m), b2v(d);
      for (std::size_t i = i0; i < i1; ++i) {
        const double* xi = X.data() + i * full;
        const double* wi = W.data() + i * full;
        const double* dwi = dwk.data() + i * d;
        hm.b2_grad(t, xi, mu, gb2.data());
        matvec_set(gb2.data(), d, full, Abuf.data() + i * full, rhs.data());
        for (std::size_t r = 0; r < d; ++r) rhs[r] += -a2p[i * d + r] + mf[i * d + r];
        matvec_set(sinv.data(), d, d, rhs.data(), hpi.data());
        double s = 0.0;
        for (std::size_t c = 0; c < d; ++c) s += hpi[c] * dwi[c];
        div[i] += s;
        if (m > 0) {
          hm.b1_grad1(t, xi, g1.data());
          hm.b1_grad2(t, xi, g2.data());
          matvec_set(g1.data(), m, m, wi, gw.data());
          matvec_add(g2.data(), m, d, wi + m, gw.data());
        }
        matvec_set(gb2.data(), d, full, wi, gw.data() + m);
        matvec_set(sig.data(), d, d, hpi.data(), sh.data());
        for (std::size_t r = 0; r < m; ++r) Wn[i * full + r] = wi[r] + grid.dt * gw[r];
        for (std::size_t r = 0; r < d; ++r)
          Wn[i * full + m + r] = wi[m + r] + grid.dt * (gw[m + r] + sh[r]);
        // state update last so every coefficient above saw the step-k state
        if (m > 0) hm.b1(t, xi, b1v.data());
        hm.b2(t, xi, mu, b2v.data());
        matvec_set(sig.data(), d, d, dwi, sh.data());
        for (std::size_t r = 0; r < m; ++r) Xn[i * full + r] = xi[r] + grid.dt * b1v[r];
        for (std::size_t r = 0; r < d; ++r)
          Xn[i * full + m + r] = xi[m + r] + grid.dt * b2v[r] + sh[r];
      }
    });
    detail::throw_if_exploded(Xn.data(), n, full, t);
    X.swap(Xn);
    W.swap(Wn);
  }

  EstimatorResult r = estimate_from_parts(f, {X.data(), n, full}, div, {});
  r.method = "degenerate";
  r.dt = grid.dt;
  r.seed = seed;
  r.extra["theta_T"] = hm.theta(grid.T, grid.T);
  r.extra["epsilon"] = hm.epsilon();
  r.extra["q_violations"] = static_cast<double>(ctl.violations);
  r.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
  return r;
}

double degenerate_bound_shape(double T, const std::function<double(double)>& theta,
                              std::size_t n_quad) {
  if (!(T > 0.0)) throw std::invalid_argument("degenerate_bound_shape: T must be > 0");
  if (n_quad == 0) throw std::invalid_argument("degenerate_bound_shape: need quadrature points");
  double h = T / static_cast<double>(n_quad);
  double acc = 0.0;
  for (std::size_t k = 0; k < n_quad; ++k) {
    double a = theta(h * static_cast<double>(k));
    double b = theta(h * static_cast<double>(k + 1));
    acc += h / 2.0 * (a * a + b * b);
  }
  if (!(acc > 0.0)) throw std::invalid_argument("degenerate_bound_shape: theta integral is zero");
  return std::sqrt(T) * (T * T + theta(T)) / acc;
}

}  // namespace mvb
