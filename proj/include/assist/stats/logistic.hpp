#ifndef ASSIST_STATS_LOGISTIC_HPP_
#define ASSIST_STATS_LOGISTIC_HPP_

#include <cmath>
#include <string>

#include <Eigen/Cholesky>
#include <Eigen/Core>
#include <Eigen/QR>

#include "assist/core/error.hpp"

namespace assist::stats {

using Eigen::MatrixXd;
using Eigen::VectorXd;

inline constexpr double kSeparationBound = 30.0;

class SeparationError : public NumericError {
 public:
  using NumericError::NumericError;
};

// log(1 + exp(x)) without overflow.
inline double log1pexp(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

inline double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline double bernoulli_loglik(const VectorXd& y, const VectorXd& eta) {
  double ll = 0.0;
  for (Eigen::Index i = 0; i < y.size(); ++i) ll += y[i] * eta[i] - log1pexp(eta[i]);
  return ll;
}

inline void require_full_rank(const MatrixXd& x) {
  require(x.rows() >= x.cols(), "design has more columns than rows");
  Eigen::ColPivHouseholderQR<MatrixXd> qr(x);
  if (qr.rank() < x.cols())
    throw PreconditionError("design matrix is rank deficient (rank " + std::to_string(qr.rank()) +
                            " < " + std::to_string(x.cols()) + " columns)");
}

inline void require_binary(const VectorXd& y) {
  for (Eigen::Index i = 0; i < y.size(); ++i)
    require(y[i] == 0.0 || y[i] == 1.0, "response must be 0/1");
}

struct LogisticFit {
  VectorXd beta;
  MatrixXd covariance;  // inverse observed information
  double loglik = 0.0;
  double gradient_norm = 0.0;
  int iterations = 0;
};

// Newton-Raphson (IRLS) to gradient norm < tol. Aborts when any |beta|
// exceeds the separation bound.
inline LogisticFit fit_logistic(const MatrixXd& x, const VectorXd& y, double tol = 1e-10,
                                int max_iter = 100) {
  require(x.rows() == y.size(), "X and y row counts differ");
  require(x.rows() > 0, "no observations");
  require_binary(y);
  require_full_rank(x);
  const Eigen::Index p = x.cols();
  LogisticFit fit;
  fit.beta = VectorXd::Zero(p);
  VectorXd eta = VectorXd::Zero(x.rows());
  for (int it = 0; it <= max_iter; ++it) {
    VectorXd mu(x.rows()), w(x.rows());
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      mu[i] = sigmoid(eta[i]);
      w[i] = mu[i] * (1.0 - mu[i]);
    }
    const VectorXd grad = x.transpose() * (y - mu);
    const MatrixXd info = x.transpose() * w.asDiagonal() * x;
    fit.gradient_norm = grad.norm();
    fit.iterations = it;
    Eigen::LDLT<MatrixXd> ldlt(info);
    if (fit.gradient_norm < tol) {
      fit.loglik = bernoulli_loglik(y, eta);
      fit.covariance = ldlt.solve(MatrixXd::Identity(p, p));
      return fit;
    }
    if (it == max_iter) break;
    if (ldlt.info() != Eigen::Success || !(ldlt.vectorD().array() > 0.0).all())
      throw SeparationError("information matrix became singular (likely separation)");
    const VectorXd step = ldlt.solve(grad);
    // Step halving keeps the likelihood monotone.
    const double ll0 = bernoulli_loglik(y, eta);
    double t = 1.0;
    VectorXd beta_new, eta_new;
    for (int h = 0; h < 30; ++h, t *= 0.5) {
      beta_new = fit.beta + t * step;
      eta_new = x * beta_new;
      if (bernoulli_loglik(y, eta_new) >= ll0 - 1e-12 * std::abs(ll0)) break;
    }
    fit.beta = beta_new;
    eta = eta_new;
    if (fit.beta.cwiseAbs().maxCoeff() > kSeparationBound)
      throw SeparationError("coefficient magnitude exceeded " + std::to_string(kSeparationBound) +
                            " (complete or quasi-complete separation)");
  }
  throw NumericError("logistic regression did not converge in " + std::to_string(max_iter) +
                     " iterations (gradient norm " + std::to_string(fit.gradient_norm) + ")");
}

}  // namespace assist::stats

#endif  // ASSIST_STATS_LOGISTIC_HPP_
