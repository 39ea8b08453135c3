#include "mvb/model.hpp"

#include <cmath>
#include <stdexcept>

#include "mvb/parallel.hpp"
#include "mvb/rng.hpp"
#include "mvb/stats.hpp"

namespace mvb {

void Model::diffusion_grad_apply(double, const double*, const double*, double* out) const {
  for (std::size_t i = 0; i < dim() * noise_dim(); ++i) out[i] = 0.0;
}

void Model::diffusion_inv(double t, const double* x, double* out) const {
  std::size_t d = dim();
  if (noise_dim() != d)
    throw std::runtime_error("diffusion_inv: diffusion matrix is not square");
  if (d == 1) {
    double s;
    diffusion(t, x, &s);
    if (s == 0.0) throw std::runtime_error("diffusion_inv: singular diffusion");
    out[0] = 1.0 / s;
    return;
  }
  // Gauss-Jordan for the small dense case
  std::vector<double> a(d * d), inv(d * d, 0.0);
  diffusion(t, x, a.data());
  for (std::size_t i = 0; i < d; ++i) inv[i * d + i] = 1.0;
  for (std::size_t col = 0; col < d; ++col) {
    std::size_t piv = col;
    for (std::size_t r = col + 1; r < d; ++r)
      if (std::fabs(a[r * d + col]) > std::fabs(a[piv * d + col])) piv = r;
    if (a[piv * d + col] == 0.0) throw std::runtime_error("diffusion_inv: singular diffusion");
    if (piv != col)
      for (std::size_t j = 0; j < d; ++j) {
        std::swap(a[piv * d + j], a[col * d + j]);
        std::swap(inv[piv * d + j], inv[col * d + j]);
      }
    double p = a[col * d + col];
    for (std::size_t j = 0; j < d; ++j) {
      a[col * d + j] /= p;
      inv[col * d + j] /= p;
    }
    for (std::size_t r = 0; r < d; ++r) {
      if (r == col) continue;
      double m = a[r * d + col];
      if (m == 0.0) continue;
      for (std::size_t j = 0; j < d; ++j) {
        a[r * d + j] -= m * a[col * d + j];
        inv[r * d + j] -= m * inv[col * d + j];
      }
    }
  }
  for (std::size_t i = 0; i < d * d; ++i) out[i] = inv[i];
}

void Model::drift_lions_apply(double t, const Measure& mu, const double* u, double* out) const {
  const EnsembleView& e = mu.view();
  std::size_t d = dim(), n = e.n;
  double wn = 1.0 / static_cast<double>(n);
  parallel_chunks(n, [&](std::size_t i0, std::size_t i1) {
    std::vector<double> ker(d * d);
    for (std::size_t i = i0; i < i1; ++i) {
      double* oi = out + i * d;
      for (std::size_t r = 0; r < d; ++r) oi[r] = 0.0;
      for (std::size_t j = 0; j < n; ++j) {  // fixed peer order keeps sums deterministic
        drift_lions(t, e.state(i), mu, e.state(j), ker.data());
        const double* uj = u + j * d;
        for (std::size_t r = 0; r < d; ++r) {
          double s = 0.0;
          for (std::size_t cidx = 0; cidx < d; ++cidx) s += ker[r * d + cidx] * uj[cidx];
          oi[r] += s;
        }
      }
      for (std::size_t r = 0; r < d; ++r) oi[r] *= wn;
    }
  });
}

void Model::sigma_lions_apply(double, const Measure& mu, const double*, double* out) const {
  for (std::size_t i = 0; i < mu.size() * dim() * noise_dim(); ++i) out[i] = 0.0;
}

namespace {

// d = 1: b(x, mu) = a x + c mean(mu), sigma constant
class MeanFieldOU : public Model {
 public:
  MeanFieldOU(double a, double c, double sigma) : a_(a), c_(c), sigma_(sigma) {
    if (sigma == 0.0) throw std::invalid_argument("mean_field_ou: sigma must be nonzero");
  }

  std::size_t dim() const override { return 1; }
  std::string id() const override { return "mean_field_ou"; }

  void drift(double, const double* x, const Measure& mu, double* out) const override {
    out[0] = a_ * x[0] + c_ * mu.mean()[0];
  }
  void drift_grad(double, const double*, const Measure&, double* out) const override {
    out[0] = a_;
  }
  void drift_lions(double, const double*, const Measure&, const double*, double* out) const override {
    out[0] = c_;
  }
  void diffusion(double, const double*, double* out) const override { out[0] = sigma_; }
  void diffusion_inv(double, const double*, double* out) const override { out[0] = 1.0 / sigma_; }
  bool constant_diffusion() const override { return true; }
  double K_bound(double) const override { return std::max(std::fabs(a_), std::fabs(c_)); }
  double lambda_bound(double) const override { return 1.0 / std::fabs(sigma_); }

  // kernel is constant, so the peer average collapses to c * mean(u)
  void drift_lions_apply(double, const Measure& mu, const double* u, double* out) const override {
    double m;
    column_mean(u, mu.size(), 1, &m);
    double val = c_ * m;
    parallel_chunks(mu.size(), [&](std::size_t i0, std::size_t i1) {
      for (std::size_t i = i0; i < i1; ++i) out[i] = val;
    });
  }

 private:
  double a_, c_, sigma_;
};

// d = 1: b(x, mu) = -x + 0.5 integral tanh(x - z) mu(dz), sigma constant.
// kernel: d/dz [0.5 tanh(x - z)] = -0.5 sech^2(x - z)
class NonlinearMV : public Model {
 public:
  explicit NonlinearMV(double sigma) : sigma_(sigma) {
    if (sigma == 0.0) throw std::invalid_argument("nonlinear_mv: sigma must be nonzero");
  }

  std::size_t dim() const override { return 1; }
  std::string id() const override { return "nonlinear_mv"; }

  void drift(double, const double* x, const Measure& mu, double* out) const override {
    const EnsembleView& e = mu.view();
    double s = 0.0;
    for (std::size_t j = 0; j < e.n; ++j) s += std::tanh(x[0] - e.x[j]);
    out[0] = -x[0] + 0.5 * s / static_cast<double>(e.n);
  }
  void drift_grad(double, const double* x, const Measure& mu, double* out) const override {
    const EnsembleView& e = mu.view();
    double s = 0.0;
    for (std::size_t j = 0; j < e.n; ++j) {
      double c = std::cosh(x[0] - e.x[j]);
      s += 1.0 / (c * c);
    }
    out[0] = -1.0 + 0.5 * s / static_cast<double>(e.n);
  }
  void drift_lions(double, const double* x, const Measure&, const double* z, double* out) const override {
    double c = std::cosh(x[0] - z[0]);
    out[0] = -0.5 / (c * c);
  }
  void diffusion(double, const double*, double* out) const override { out[0] = sigma_; }
  void diffusion_inv(double, const double*, double* out) const override { out[0] = 1.0 / sigma_; }
  bool constant_diffusion() const override { return true; }
  double K_bound(double) const override { return 1.0; }  // |grad b| <= 1, |kernel| <= 0.5
  double lambda_bound(double) const override { return 1.0 / std::fabs(sigma_); }

 private:
  double sigma_;
};

}  // namespace

std::shared_ptr<Model> make_mean_field_ou(double a, double c, double sigma) {
  return std::make_shared<MeanFieldOU>(a, c, sigma);
}

std::shared_ptr<Model> make_nonlinear_mv(double sigma) {
  return std::make_shared<NonlinearMV>(sigma);
}

TestFunction coordinate_f(std::size_t d, std::size_t index) {
  if (index >= d) throw std::invalid_argument("test function: coordinate index out of range");
  TestFunction tf;
  tf.name = "coordinate";
  tf.f = [index](const double* x) { return x[index]; };
  tf.grad = [d, index](const double* x, double* g) {
    (void)x;
    for (std::size_t j = 0; j < d; ++j) g[j] = j == index ? 1.0 : 0.0;
  };
  return tf;
}

TestFunction polynomial_f(std::size_t d, std::size_t index, std::vector<double> coeffs) {
  if (index >= d) throw std::invalid_argument("test function: coordinate index out of range");
  if (coeffs.empty()) throw std::invalid_argument("test function: empty polynomial");
  TestFunction tf;
  tf.name = "polynomial";
  tf.f = [index, coeffs](const double* x) {
    double v = 0.0;
    for (std::size_t k = coeffs.size(); k-- > 0;) v = v * x[index] + coeffs[k];
    return v;
  };
  tf.grad = [d, index, coeffs](const double* x, double* g) {
    for (std::size_t j = 0; j < d; ++j) g[j] = 0.0;
    double v = 0.0;
    for (std::size_t k = coeffs.size(); k-- > 1;)
      v = v * x[index] + coeffs[k] * static_cast<double>(k);
    g[index] = v;
  };
  return tf;
}

TestFunction indicator_f(std::size_t d, std::size_t index, double threshold) {
  if (index >= d) throw std::invalid_argument("test function: coordinate index out of range");
  TestFunction tf;
  tf.name = "indicator";
  tf.f = [index, threshold](const double* x) { return x[index] > threshold ? 1.0 : 0.0; };
  return tf;  // measurable only; no gradient
}

TestFunction constant_f(std::size_t d, double value) {
  TestFunction tf;
  tf.name = "constant";
  tf.f = [value](const double*) { return value; };
  tf.grad = [d](const double*, double* g) {
    for (std::size_t j = 0; j < d; ++j) g[j] = 0.0;
  };
  return tf;
}

GaussianInitial::GaussianInitial(std::vector<double> mean, std::vector<double> std)
    : mean_(std::move(mean)), std_(std::move(std)) {
  if (mean_.size() != std_.size())
    throw std::invalid_argument("gaussian initial: mean/std size mismatch");
  for (double s : std_)
    if (s < 0.0) throw std::invalid_argument("gaussian initial: negative std");
}

void GaussianInitial::sample(std::uint64_t seed, std::size_t i0, std::size_t i1,
                             double* out) const {
  std::size_t d = mean_.size();
  rng::fill_normals(seed, rng::stream_init, i0, i1, 0, d, out);
  for (std::size_t i = i0; i < i1; ++i) {
    double* row = out + (i - i0) * d;
    for (std::size_t j = 0; j < d; ++j) row[j] = mean_[j] + std_[j] * row[j];
  }
}

void check_model_consistency(const Model& m, const Measure& mu, double t,
                             std::size_t n_points, double rel_tol) {
  std::size_t d = m.dim();
  std::vector<double> x(d), bp(d), bm(d), grad(d * d), gfd(d * d);
  const double h = 1e-6;
  for (std::size_t p = 0; p < n_points; ++p) {
    for (std::size_t j = 0; j < d; ++j)
      x[j] = 2.0 * rng::u01(rng::raw_block(977, 3, p, j)[0]) - 1.0;
    m.drift_grad(t, x.data(), mu, grad.data());
    for (std::size_t j = 0; j < d; ++j) {
      double keep = x[j];
      x[j] = keep + h;
      m.drift(t, x.data(), mu, bp.data());
      x[j] = keep - h;
      m.drift(t, x.data(), mu, bm.data());
      x[j] = keep;
      for (std::size_t r = 0; r < d; ++r) gfd[r * d + j] = (bp[r] - bm[r]) / (2.0 * h);
    }
    for (std::size_t k = 0; k < d * d; ++k) {
      double scale = std::max(1.0, std::fabs(grad[k]));
      if (std::fabs(gfd[k] - grad[k]) > rel_tol * scale)
        throw std::runtime_error("model consistency: drift gradient mismatch");
    }
  }
}

}  // namespace mvb
