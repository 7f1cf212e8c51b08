#ifndef ASSIST_STATS_GLMM_HPP_
#define ASSIST_STATS_GLMM_HPP_

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <string>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include "assist/core/error.hpp"
#include "assist/stats/logistic.hpp"

namespace assist::stats {

// Logistic model with crossed random intercepts for reader and slide:
//   logit P(y_i = 1) = x_i' beta + sigma_r * b_r[reader(i)] + sigma_s * b_s[slide(i)],
//   b ~ N(0, I).
struct GlmmData {
  std::vector<std::string> names;  // one per column of x
  MatrixXd x;
  VectorXd y;
  std::vector<int> reader;  // group index per row
  std::vector<int> slide;
  int n_readers = 0;
  int n_slides = 0;
  std::vector<std::string> reader_ids;  // optional labels for diagnostics
  std::vector<std::string> slide_ids;

  Eigen::Index rows() const { return x.rows(); }
  int groups() const { return n_readers + n_slides; }
  void validate() const {
    require(x.rows() == y.size() && reader.size() == std::size_t(y.size()) &&
                slide.size() == std::size_t(y.size()),
            "GLMM data columns have inconsistent lengths");
    require(names.size() == std::size_t(x.cols()), "one name per fixed-effect column required");
    require(n_readers >= 2 && n_slides >= 2, "GLMM needs at least 2 readers and 2 slides");
    for (std::size_t i = 0; i < reader.size(); ++i)
      require(reader[i] >= 0 && reader[i] < n_readers && slide[i] >= 0 && slide[i] < n_slides,
              "group index out of range");
    require_binary(y);
  }
};

struct GlmmOptions {
  double tol = 1e-6;        // outer gradient norm
  double inner_tol = 1e-8;  // random-effect mode gradient norm
  int max_outer = 300;
  int max_inner = 100;
  double min_log_sigma = -12.0;
  double boundary_sigma = 1e-4;
  double initial_sigma = 0.5;
};

struct GlmmFit {
  std::vector<std::string> names;
  VectorXd beta;
  VectorXd se;
  MatrixXd covariance;
  double sigma_reader = 0.0;
  double sigma_slide = 0.0;
  double loglik = 0.0;
  bool converged = false;
  bool inner_converged = true;
  bool boundary = false;
  std::vector<std::string> boundary_components;
  std::vector<std::string> singleton_groups;
  int outer_iterations = 0;
  double gradient_norm = 0.0;
  std::string covariance_source;
  std::vector<std::string> log;

  Eigen::Index index_of(const std::string& name) const {
    auto it = std::find(names.begin(), names.end(), name);
    if (it == names.end()) throw PreconditionError("no coefficient named '" + name + "'");
    return it - names.begin();
  }
};

namespace glmm_detail {

struct Mode {
  VectorXd b;
  VectorXd eta;
  VectorXd mu;
  VectorXd w;
  Eigen::LLT<MatrixXd> llt;
  double loglik = 0.0;  // Laplace-approximate marginal log-likelihood
  bool converged = false;
  int iterations = 0;
};

inline VectorXd linear_predictor(const GlmmData& d, const VectorXd& beta, double sr, double ss,
                                 const VectorXd& b) {
  VectorXd eta = d.x * beta;
  for (Eigen::Index i = 0; i < eta.size(); ++i)
    eta[i] += sr * b[d.reader[i]] + ss * b[d.n_readers + d.slide[i]];
  return eta;
}

inline double penalized(const GlmmData& d, const VectorXd& eta, const VectorXd& b) {
  return bernoulli_loglik(d.y, eta) - 0.5 * b.squaredNorm();
}

// H = I + A' W A where row i of A is sr * e_reader + ss * e_slide.
inline MatrixXd precision(const GlmmData& d, double sr, double ss, const VectorXd& w) {
  const int q = d.groups();
  MatrixXd h = MatrixXd::Identity(q, q);
  for (Eigen::Index i = 0; i < w.size(); ++i) {
    const int r = d.reader[i], s = d.n_readers + d.slide[i];
    h(r, r) += w[i] * sr * sr;
    h(s, s) += w[i] * ss * ss;
    h(r, s) += w[i] * sr * ss;
    h(s, r) += w[i] * sr * ss;
  }
  return h;
}

inline void refresh(Mode& m) {
  m.mu.resize(m.eta.size());
  m.w.resize(m.eta.size());
  for (Eigen::Index i = 0; i < m.eta.size(); ++i) {
    m.mu[i] = sigmoid(m.eta[i]);
    m.w[i] = m.mu[i] * (1.0 - m.mu[i]);
  }
}

inline VectorXd mode_gradient(const GlmmData& d, double sr, double ss, const Mode& m) {
  VectorXd g = -m.b;
  for (Eigen::Index i = 0; i < m.eta.size(); ++i) {
    const double r = d.y[i] - m.mu[i];
    g[d.reader[i]] += sr * r;
    g[d.n_readers + d.slide[i]] += ss * r;
  }
  return g;
}

// Newton iterations for the random-effect mode, warm-started from b0.
inline Mode find_mode(const GlmmData& d, const VectorXd& beta, double sr, double ss,
                      const VectorXd& b0, const GlmmOptions& opt) {
  Mode m;
  m.b = b0.size() == d.groups() ? b0 : VectorXd::Zero(d.groups());
  m.eta = linear_predictor(d, beta, sr, ss, m.b);
  refresh(m);
  double f = penalized(d, m.eta, m.b);
  int polish = 0;
  for (m.iterations = 0; m.iterations < opt.max_inner; ++m.iterations) {
    const VectorXd g = mode_gradient(d, sr, ss, m);
    if (g.norm() < opt.inner_tol) {
      // One extra Newton step takes the mode to working precision.
      if (polish++ >= 1) {
        m.converged = true;
        break;
      }
    }
    Eigen::LLT<MatrixXd> llt(precision(d, sr, ss, m.w));
    const VectorXd step = llt.solve(g);
    double t = 1.0;
    for (int h = 0; h < 40; ++h, t *= 0.5) {
      const VectorXd b = m.b + t * step;
      const VectorXd eta = linear_predictor(d, beta, sr, ss, b);
      const double fn = penalized(d, eta, b);
      if (fn >= f - 1e-12 * std::abs(f)) {
        m.b = b;
        m.eta = eta;
        f = fn;
        break;
      }
    }
    refresh(m);
  }
  m.llt.compute(precision(d, sr, ss, m.w));
  const auto& l = m.llt.matrixLLT();
  double logdet = 0.0;
  for (Eigen::Index k = 0; k < l.rows(); ++k) logdet += 2.0 * std::log(l(k, k));
  m.loglik = f - 0.5 * logdet;
  return m;
}

// Gradient of the Laplace log-likelihood with respect to
// (beta, log sigma_r, log sigma_s), differentiating through the mode.
inline VectorXd gradient(const GlmmData& d, const VectorXd& beta, double sr, double ss,
                         const Mode& m) {
  const Eigen::Index n = d.rows(), p = d.x.cols();
  const int q = d.groups(), nr = d.n_readers;
  const MatrixXd hinv = m.llt.solve(MatrixXd::Identity(q, q));
  VectorXd resid = d.y - m.mu;
  VectorXd c(n);  // w'_i * a_i' H^-1 a_i
  for (Eigen::Index i = 0; i < n; ++i) {
    const int r = d.reader[i], s = nr + d.slide[i];
    const double hi = sr * sr * hinv(r, r) + 2.0 * sr * ss * hinv(r, s) + ss * ss * hinv(s, s);
    c[i] = m.w[i] * (1.0 - 2.0 * m.mu[i]) * hi;
  }
  VectorXd grad(p + 2);

  MatrixXd awx = MatrixXd::Zero(q, p);
  for (Eigen::Index i = 0; i < n; ++i) {
    awx.row(d.reader[i]) += m.w[i] * sr * d.x.row(i);
    awx.row(nr + d.slide[i]) += m.w[i] * ss * d.x.row(i);
  }
  const MatrixXd db = -(hinv * awx);
  VectorXd gb = d.x.transpose() * resid;
  for (Eigen::Index i = 0; i < n; ++i) {
    const Eigen::RowVectorXd deta =
        d.x.row(i) + sr * db.row(d.reader[i]) + ss * db.row(nr + d.slide[i]);
    gb -= 0.5 * c[i] * deta.transpose();
  }
  grad.head(p) = gb;

  for (int comp = 0; comp < 2; ++comp) {
    const double sigma = comp == 0 ? sr : ss;
    auto group = [&](Eigen::Index i) { return comp == 0 ? d.reader[i] : nr + d.slide[i]; };
    VectorXd e(n), rhs = VectorXd::Zero(q);
    for (Eigen::Index i = 0; i < n; ++i) {
      e[i] = sigma * m.b[group(i)];
      rhs[group(i)] += sigma * resid[i];
      rhs[d.reader[i]] -= sr * m.w[i] * e[i];
      rhs[nr + d.slide[i]] -= ss * m.w[i] * e[i];
    }
    const VectorXd dbt = hinv * rhs;
    double direct = 0.0, trace = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      const int r = d.reader[i], s = nr + d.slide[i], g = group(i);
      const double deta = e[i] + sr * dbt[r] + ss * dbt[s];
      direct += resid[i] * e[i];
      trace += c[i] * deta + 2.0 * m.w[i] * sigma * (sr * hinv(r, g) + ss * hinv(s, g));
    }
    grad[p + comp] = direct - 0.5 * trace;
  }
  return grad;
}

struct Evaluation {
  double loglik = -std::numeric_limits<double>::infinity();
  VectorXd grad;
  Mode mode;
};

inline Evaluation evaluate(const GlmmData& d, const VectorXd& phi, const VectorXd& b0,
                           const GlmmOptions& opt, bool with_gradient = true) {
  const Eigen::Index p = d.x.cols();
  const VectorXd beta = phi.head(p);
  const double sr = std::exp(phi[p]), ss = std::exp(phi[p + 1]);
  Evaluation ev;
  ev.mode = find_mode(d, beta, sr, ss, b0, opt);
  ev.loglik = ev.mode.loglik;
  if (with_gradient) ev.grad = gradient(d, beta, sr, ss, ev.mode);
  return ev;
}

// Zeroes gradient components that would push log sigma below its floor.
inline VectorXd projected(const VectorXd& grad, const VectorXd& phi, Eigen::Index p, double floor) {
  VectorXd g = grad;
  for (int k = 0; k < 2; ++k)
    if (phi[p + k] <= floor + 1e-12 && g[p + k] < 0.0) g[p + k] = 0.0;
  return g;
}

inline std::string progress_line(int iter, double loglik, double grad_norm, double sr, double ss) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "iter %d loglik %.10f |grad| %.3e sigma_r %.6g sigma_s %.6g", iter,
                loglik, grad_norm, sr, ss);
  return buf;
}

}  // namespace glmm_detail

// Laplace-approximate marginal log-likelihood at fixed parameters.
inline double laplace_loglik(const GlmmData& d, const VectorXd& beta, double sigma_reader,
                             double sigma_slide, const GlmmOptions& opt = {}) {
  d.validate();
  require(beta.size() == d.x.cols(), "beta has the wrong length");
  require(sigma_reader >= 0.0 && sigma_slide >= 0.0, "standard deviations must be non-negative");
  return glmm_detail::find_mode(d, beta, sigma_reader, sigma_slide, VectorXd(), opt).loglik;
}

// Analytic gradient of laplace_loglik in (beta, log sigma_r, log sigma_s).
inline VectorXd laplace_gradient(const GlmmData& d, const VectorXd& beta, double sigma_reader,
                                 double sigma_slide, const GlmmOptions& opt = {}) {
  d.validate();
  const auto m = glmm_detail::find_mode(d, beta, sigma_reader, sigma_slide, VectorXd(), opt);
  return glmm_detail::gradient(d, beta, sigma_reader, sigma_slide, m);
}

inline std::vector<std::string> singleton_groups(const GlmmData& d) {
  std::vector<int> rc(d.n_readers, 0), sc(d.n_slides, 0);
  for (std::size_t i = 0; i < d.reader.size(); ++i) {
    ++rc[d.reader[i]];
    ++sc[d.slide[i]];
  }
  std::vector<std::string> out;
  auto label = [](const std::vector<std::string>& ids, int k, const char* kind) {
    return std::string(kind) + " " + (std::size_t(k) < ids.size() ? ids[k] : std::to_string(k));
  };
  for (int k = 0; k < d.n_readers; ++k)
    if (rc[k] == 1) out.push_back(label(d.reader_ids, k, "reader"));
  for (int k = 0; k < d.n_slides; ++k)
    if (sc[k] == 1) out.push_back(label(d.slide_ids, k, "slide"));
  return out;
}

// Maximizes the Laplace marginal likelihood with BFGS over
// (beta, log sigma_r, log sigma_s) using the analytic gradient and a
// backtracking Armijo line search. Fixed-effect covariance is the inverse of
// the negative Hessian (central differences of the analytic gradient).
inline GlmmFit fit_glmm(const GlmmData& d, const GlmmOptions& opt = {}) {
  using namespace glmm_detail;
  d.validate();
  require_full_rank(d.x);
  const Eigen::Index p = d.x.cols(), dim = p + 2;

  GlmmFit fit;
  fit.names = d.names;
  fit.singleton_groups = singleton_groups(d);
  if (!fit.singleton_groups.empty())
    fit.log.push_back("warning: " + std::to_string(fit.singleton_groups.size()) +
                      " group(s) with a single observation; Laplace approximation is unreliable");

  VectorXd phi(dim);
  phi.head(p) = fit_logistic(d.x, d.y).beta;
  phi[p] = phi[p + 1] = std::log(opt.initial_sigma);

  auto ev = evaluate(d, phi, VectorXd(), opt);
  auto hessian = [&](const VectorXd& at, const VectorXd& b0) {
    MatrixXd h(dim, dim);
    for (Eigen::Index k = 0; k < dim; ++k) {
      const double step = 1e-4 * std::max(1.0, std::abs(at[k]));
      VectorXd lo = at, hi = at;
      lo[k] -= step;
      hi[k] += step;
      h.col(k) = (evaluate(d, hi, b0, opt).grad - evaluate(d, lo, b0, opt).grad) / (2.0 * step);
    }
    return MatrixXd(0.5 * (h + h.transpose()));
  };

  // Start BFGS from the local curvature when it is usable.
  MatrixXd inv_h = MatrixXd::Identity(dim, dim) * 0.1;
  {
    Eigen::LLT<MatrixXd> llt(-hessian(phi, ev.mode.b));
    if (llt.info() == Eigen::Success) inv_h = llt.solve(MatrixXd::Identity(dim, dim));
  }

  VectorXd g = projected(ev.grad, phi, p, opt.min_log_sigma);
  for (fit.outer_iterations = 0; fit.outer_iterations < opt.max_outer; ++fit.outer_iterations) {
    fit.gradient_norm = g.norm();
    fit.inner_converged = fit.inner_converged && ev.mode.converged;
    fit.log.push_back(progress_line(fit.outer_iterations, ev.loglik, fit.gradient_norm,
                                    std::exp(phi[p]), std::exp(phi[p + 1])));
    if (fit.gradient_norm < opt.tol) {
      fit.converged = true;
      break;
    }
    VectorXd dir = inv_h * g;  // ascent direction
    if (dir.dot(g) <= 0.0) {
      inv_h = MatrixXd::Identity(dim, dim) * 0.1;
      dir = inv_h * g;
    }
    const double big = dir.cwiseAbs().maxCoeff();
    if (big > 2.0) dir *= 2.0 / big;

    double t = 1.0;
    bool moved = false;
    Evaluation next;
    VectorXd trial;
    for (int h = 0; h < 50; ++h, t *= 0.5) {
      trial = phi + t * dir;
      for (int k = 0; k < 2; ++k) trial[p + k] = std::max(trial[p + k], opt.min_log_sigma);
      next = evaluate(d, trial, ev.mode.b, opt);
      if (std::isfinite(next.loglik) &&
          next.loglik >= ev.loglik + 1e-4 * g.dot(trial - phi) - 1e-12 * std::abs(ev.loglik)) {
        moved = true;
        break;
      }
    }
    if (!moved) {
      fit.log.push_back("line search failed; stopping");
      break;
    }
    const VectorXd s = trial - phi;
    const VectorXd gn = projected(next.grad, trial, p, opt.min_log_sigma);
    const VectorXd yv = g - gn;  // gradient change of the minimized objective -loglik
    const double sy = s.dot(yv);
    if (sy > 1e-12) {
      const double rho = 1.0 / sy;
      const MatrixXd id = MatrixXd::Identity(dim, dim);
      inv_h = (id - rho * s * yv.transpose()) * inv_h * (id - rho * yv * s.transpose()) +
              rho * s * s.transpose();
    }
    phi = trial;
    ev = std::move(next);
    g = gn;
  }
  if (!fit.converged)
    fit.log.push_back("did not converge: gradient norm " + std::to_string(fit.gradient_norm) +
                      " after " + std::to_string(fit.outer_iterations) + " iterations");

  fit.beta = phi.head(p);
  fit.sigma_reader = std::exp(phi[p]);
  fit.sigma_slide = std::exp(phi[p + 1]);
  fit.loglik = ev.loglik;
  if (fit.sigma_reader < opt.boundary_sigma) fit.boundary_components.push_back("sigma_reader");
  if (fit.sigma_slide < opt.boundary_sigma) fit.boundary_components.push_back("sigma_slide");
  fit.boundary = !fit.boundary_components.empty();

  // Variance components on the boundary are held fixed for the covariance.
  const MatrixXd h = hessian(phi, ev.mode.b);
  std::vector<Eigen::Index> keep;
  for (Eigen::Index k = 0; k < p; ++k) keep.push_back(k);
  if (fit.sigma_reader >= opt.boundary_sigma) keep.push_back(p);
  if (fit.sigma_slide >= opt.boundary_sigma) keep.push_back(p + 1);
  MatrixXd info(keep.size(), keep.size());
  for (std::size_t a = 0; a < keep.size(); ++a)
    for (std::size_t b = 0; b < keep.size(); ++b) info(a, b) = -h(keep[a], keep[b]);
  Eigen::LDLT<MatrixXd> ldlt(info);
  if (ldlt.info() == Eigen::Success && (ldlt.vectorD().array() > 0.0).all()) {
    fit.covariance = ldlt.solve(MatrixXd::Identity(info.rows(), info.cols())).topLeftCorner(p, p);
    fit.covariance_source = "inverse negative Hessian over fixed effects and variance components";
  } else {
    Eigen::LDLT<MatrixXd> beta_only(MatrixXd(-h.topLeftCorner(p, p)));
    if (beta_only.info() != Eigen::Success || !(beta_only.vectorD().array() > 0.0).all())
      throw NumericError("observed information is not positive definite at the GLMM optimum");
    fit.covariance = beta_only.solve(MatrixXd::Identity(p, p));
    fit.covariance_source = "inverse negative Hessian over fixed effects only";
  }
  fit.covariance = 0.5 * (fit.covariance + fit.covariance.transpose());
  fit.se = fit.covariance.diagonal().cwiseMax(0.0).cwiseSqrt();
  return fit;
}

}  // namespace assist::stats

#endif  // ASSIST_STATS_GLMM_HPP_
