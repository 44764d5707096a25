#pragma once

// Matern (nu = 1 form) covariance for the spatial random effects, its
// Cholesky factorization with a fixed jitter policy, and derivatives with
// respect to the log-scale parameters.

#include <mcml/core.hpp>

#include <array>
#include <cmath>
#include <numbers>

namespace mcml {

struct CovarianceParams {
  double log_tau2 = 0.0;
  double log_lambda = 0.0;

  static CovarianceParams from_raw(double tau2, double lambda) {
    detail::require(tau2 > 0.0 && lambda > 0.0,
                    detail::concat("covariance parameters must be positive, got tau2 = ",
                                   tau2, ", lambda = ", lambda));
    return {std::log(tau2), std::log(lambda)};
  }

  double tau2() const { return std::exp(log_tau2); }
  double lambda() const { return std::exp(log_lambda); }

  Eigen::Vector2d as_vector() const { return {log_tau2, log_lambda}; }
  static CovarianceParams from_vector(const Eigen::Vector2d& v) { return {v[0], v[1]}; }
};

inline constexpr int kNumThetaParams = 2;

struct CovarianceBundle {
  CovarianceParams params;
  Matrix D;
  Matrix L;
  Eigen::LLT<Matrix> llt;
  double logdet_D = 0.0;
  std::array<Matrix, kNumThetaParams> dD;  // on the log scale
  double jitter_used = 0.0;
  bool duplicate_coords = false;

  Eigen::Index q() const { return D.rows(); }

  // D^{-1} B via the Cholesky factor.
  template <typename Derived>
  Matrix solve(const Eigen::MatrixBase<Derived>& b) const {
    return llt.solve(b);
  }
};

inline double matern1(double dist, double tau2, double lambda) {
  const double r = dist / lambda;
  return tau2 * (1.0 + r) * std::exp(-r);
}

inline Matrix pairwise_distances(const Matrix& coords) {
  const auto q = coords.rows();
  Matrix dist(q, q);
  for (Eigen::Index j = 0; j < q; ++j) {
    dist(j, j) = 0.0;
    for (Eigen::Index i = j + 1; i < q; ++i) {
      const double d = (coords.row(i) - coords.row(j)).norm();
      dist(i, j) = d;
      dist(j, i) = d;
    }
  }
  return dist;
}

// Cholesky with escalating diagonal jitter: 1e-10 * mean(diag) * 10^k, k = 0..6.
// Returns the jitter added (0 if none); throws if every level fails.
inline double factor_with_jitter(Matrix& A, Eigen::LLT<Matrix>& llt,
                                 const std::string& context) {
  llt.compute(A);
  if (llt.info() == Eigen::Success) return 0.0;
  const double base = 1e-10 * A.diagonal().mean();
  double added = 0.0;
  for (int k = 0; k <= 6; ++k) {
    const double target = base * std::pow(10.0, k);
    A.diagonal().array() += target - added;
    added = target;
    llt.compute(A);
    if (llt.info() == Eigen::Success) return added;
  }
  throw NumericalFailure(detail::concat("Cholesky factorization failed after maximum jitter (",
                                        added, ") for ", context));
}

inline CovarianceBundle build_bundle_from_distances(const Matrix& dist,
                                                    const CovarianceParams& params) {
  detail::require(dist.rows() == dist.cols() && dist.rows() >= 1,
                  "distance matrix must be square and non-empty");
  detail::require(std::isfinite(params.log_tau2) && std::isfinite(params.log_lambda),
                  "covariance parameters must be finite");
  const auto q = dist.rows();
  const double tau2 = params.tau2();
  const double lambda = params.lambda();

  CovarianceBundle b;
  b.params = params;
  b.D.resize(q, q);
  Matrix dlambda(q, q);
  for (Eigen::Index j = 0; j < q; ++j) {
    for (Eigen::Index i = j; i < q; ++i) {
      const double d = dist(i, j);
      const double r = d / lambda;
      const double e = std::exp(-r);
      const double k = tau2 * (1.0 + r) * e;
      const double dk = tau2 * r * r * e;  // lambda * dk/dlambda
      b.D(i, j) = b.D(j, i) = k;
      dlambda(i, j) = dlambda(j, i) = dk;
      if (i != j && d == 0.0) b.duplicate_coords = true;
    }
  }
  b.jitter_used = factor_with_jitter(
      b.D, b.llt,
      detail::concat("covariance with tau2 = ", tau2, ", lambda = ", lambda));
  b.L = b.llt.matrixL();
  b.logdet_D = 2.0 * b.L.diagonal().array().log().sum();
  b.dD[0] = b.D;
  b.dD[1] = std::move(dlambda);
  return b;
}

inline CovarianceBundle build_bundle(const Matrix& coords, const CovarianceParams& params) {
  return build_bundle_from_distances(pairwise_distances(coords), params);
}

inline double gaussian_logdensity(const Vector& u, const CovarianceBundle& bundle) {
  detail::require(u.size() == bundle.q(), "u length does not match covariance dimension");
  const Vector z = bundle.llt.matrixL().solve(u);
  const double q = static_cast<double>(u.size());
  return -0.5 * q * std::log(2.0 * std::numbers::pi) - 0.5 * bundle.logdet_D -
         0.5 * z.squaredNorm();
}

}  // namespace mcml
