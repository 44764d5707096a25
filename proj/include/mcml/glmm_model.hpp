#pragma once

// Observation model for the GLMM: families, link evaluation, working
// weights, conditional log-likelihood and the ordinary GLM used for
// starting values.

#include <mcml/core.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <string_view>

namespace mcml {

enum class FamilyKind { PoissonLog, BinomialLogit };

inline std::string_view to_string(FamilyKind kind) {
  return kind == FamilyKind::PoissonLog ? "poisson" : "binomial";
}

struct Family {
  FamilyKind kind = FamilyKind::PoissonLog;
  Vector trials;  // BinomialLogit only

  static Family poisson() { return Family{FamilyKind::PoissonLog, Vector()}; }

  static Family binomial(Vector trials) {
    detail::require(trials.size() > 0, "binomial family needs trial counts");
    for (Eigen::Index i = 0; i < trials.size(); ++i) {
      detail::require(trials[i] >= 1.0 && trials[i] == std::floor(trials[i]),
                      detail::concat("trials[", i, "] must be a positive integer, got ",
                                     trials[i]));
    }
    return Family{FamilyKind::BinomialLogit, std::move(trials)};
  }

  static Family bernoulli(Eigen::Index n) { return binomial(Vector::Ones(n)); }
};

struct ModelData {
  Vector y;
  Matrix X;       // n x P
  Matrix Z;       // n x Q
  Matrix coords;  // Q x d

  Eigen::Index n() const { return y.size(); }
  Eigen::Index p() const { return X.cols(); }
  Eigen::Index q() const { return Z.cols(); }
};

struct FamilyEval {
  Vector mu;
  Vector dmu_deta;
  Vector var_y;
};

inline constexpr double kEtaClamp = 30.0;

inline double clamp_eta(double eta) { return std::clamp(eta, -kEtaClamp, kEtaClamp); }

inline void validate(const ModelData& data, const Family& family) {
  using detail::concat;
  using detail::require;
  const auto n = data.n();
  require(n >= 1, "model data needs at least one observation");
  require(data.X.rows() == n && data.X.cols() >= 1,
          concat("X must be ", n, " x P with P >= 1, got ", data.X.rows(), " x ",
                 data.X.cols()));
  require(data.Z.rows() == n && data.Z.cols() >= 1,
          concat("Z must be ", n, " x Q with Q >= 1, got ", data.Z.rows(), " x ",
                 data.Z.cols()));
  require(data.coords.rows() == data.q(),
          concat("coords must have Q = ", data.q(), " rows, got ", data.coords.rows()));
  require(data.y.allFinite() && data.X.allFinite() && data.Z.allFinite() &&
              data.coords.allFinite(),
          "model data contains non-finite values");
  if (family.kind == FamilyKind::BinomialLogit) {
    require(family.trials.size() == n,
            concat("trials has length ", family.trials.size(), ", expected ", n));
  } else {
    require(family.trials.size() == 0, "poisson family takes no trial counts");
  }
  for (Eigen::Index i = 0; i < n; ++i) {
    require(data.y[i] >= 0.0, concat("row ", i + 1, ": y = ", data.y[i], " is negative"));
    if (family.kind == FamilyKind::BinomialLogit) {
      require(data.y[i] <= family.trials[i],
              concat("row ", i + 1, ": y = ", data.y[i], " exceeds trials = ",
                     family.trials[i]));
    }
  }
}

inline Vector linear_predictor(const Vector& beta, const Vector& u, const ModelData& data) {
  detail::require(beta.size() == data.X.cols(),
                  detail::concat("beta has length ", beta.size(), ", X has ",
                                 data.X.cols(), " columns"));
  detail::require(u.size() == data.Z.cols(),
                  detail::concat("u has length ", u.size(), ", Z has ", data.Z.cols(),
                                 " columns"));
  detail::require(data.X.rows() == data.Z.rows(), "X and Z row counts differ");
  return data.X * beta + data.Z * u;
}

inline FamilyEval family_eval(const Family& family, const Vector& eta) {
  const auto n = eta.size();
  FamilyEval out{Vector(n), Vector(n), Vector(n)};
  if (family.kind == FamilyKind::PoissonLog) {
    for (Eigen::Index i = 0; i < n; ++i) {
      const double mu = std::exp(clamp_eta(eta[i]));
      out.mu[i] = mu;
      out.dmu_deta[i] = mu;
      out.var_y[i] = mu;
    }
  } else {
    detail::require(family.trials.size() == n, "trials length does not match eta");
    for (Eigen::Index i = 0; i < n; ++i) {
      const double p = 1.0 / (1.0 + std::exp(-clamp_eta(eta[i])));
      const double m = family.trials[i];
      out.mu[i] = m * p;
      out.dmu_deta[i] = m * p * (1.0 - p);
      out.var_y[i] = out.dmu_deta[i];
    }
  }
  return out;
}

// Diagonal of the IRLS weight matrix, (dmu/deta)^2 / Var(y|u).
inline Vector working_weights(const Family& family, const Vector& eta) {
  const FamilyEval ev = family_eval(family, eta);
  return ev.dmu_deta.array().square() / ev.var_y.array();
}

// GLM score contribution per observation: (y - mu) (dmu/deta) / Var(y|u).
inline Vector score_residual(const Vector& y, const FamilyEval& ev) {
  return (y - ev.mu).array() * ev.dmu_deta.array() / ev.var_y.array();
}

// Normalizing constants of log f(y|eta): -log(y!) or log C(trials, y).
inline Vector log_normalizers(const Family& family, const Vector& y) {
  Vector c(y.size());
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    if (family.kind == FamilyKind::PoissonLog) {
      c[i] = -std::lgamma(y[i] + 1.0);
    } else {
      const double m = family.trials[i];
      c[i] = std::lgamma(m + 1.0) - std::lgamma(y[i] + 1.0) - std::lgamma(m - y[i] + 1.0);
    }
  }
  return c;
}

// Sum of log f(y_i | eta_i) without normalizing constants.
inline double conditional_log_kernel(const Family& family, const Vector& y,
                                     const Vector& eta) {
  double total = 0.0;
  if (family.kind == FamilyKind::PoissonLog) {
    for (Eigen::Index i = 0; i < y.size(); ++i) {
      const double e = clamp_eta(eta[i]);
      total += y[i] * e - std::exp(e);
    }
  } else {
    for (Eigen::Index i = 0; i < y.size(); ++i) {
      const double e = clamp_eta(eta[i]);
      const double softplus = std::max(e, 0.0) + std::log1p(std::exp(-std::abs(e)));
      total += y[i] * e - family.trials[i] * softplus;
    }
  }
  return total;
}

inline double conditional_log_lik(const Family& family, const Vector& y, const Vector& eta) {
  detail::require(y.size() == eta.size(), "y and eta lengths differ");
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    detail::require(y[i] >= 0.0, detail::concat("y[", i, "] is negative"));
    if (family.kind == FamilyKind::BinomialLogit) {
      detail::require(family.trials.size() == y.size(), "trials length does not match y");
      detail::require(y[i] <= family.trials[i],
                      detail::concat("y[", i, "] = ", y[i], " exceeds trials ",
                                     family.trials[i]));
    }
  }
  return conditional_log_kernel(family, y, eta) + log_normalizers(family, y).sum();
}

// Column-wise versions for a matrix of linear predictors, one draw per column.
struct FamilyEvalColumns {
  Eigen::ArrayXXd mu;
  Eigen::ArrayXXd dmu_deta;
  Eigen::ArrayXXd var_y;
};

inline FamilyEvalColumns family_eval_columns(const Family& family, const Matrix& eta) {
  const Eigen::ArrayXXd e = eta.array().max(-kEtaClamp).min(kEtaClamp);
  FamilyEvalColumns out;
  if (family.kind == FamilyKind::PoissonLog) {
    out.mu = e.exp();
    out.dmu_deta = out.mu;
    out.var_y = out.mu;
  } else {
    detail::require(family.trials.size() == eta.rows(), "trials length does not match eta");
    const Eigen::ArrayXXd p = (1.0 + (-e).exp()).inverse();
    out.mu = p.colwise() * family.trials.array();
    out.dmu_deta = (p * (1.0 - p)).colwise() * family.trials.array();
    out.var_y = out.dmu_deta;
  }
  return out;
}

// conditional_log_kernel for every column of eta.
inline Vector conditional_log_kernel_columns(const Family& family, const Vector& y,
                                             const Matrix& eta) {
  detail::require(eta.rows() == y.size(), "eta rows do not match y");
  const Eigen::ArrayXXd e = eta.array().max(-kEtaClamp).min(kEtaClamp);
  Eigen::ArrayXXd terms;
  if (family.kind == FamilyKind::PoissonLog) {
    terms = (e.colwise() * y.array()) - e.exp();
  } else {
    // y log p + (m - y) log(1 - p) = y e - m softplus(e)
    const Eigen::ArrayXXd softplus = e.max(0.0) + (-e.abs()).exp().log1p();
    terms = (e.colwise() * y.array()) - (softplus.colwise() * family.trials.array());
  }
  return terms.colwise().sum().transpose();
}

// Z * U, skipping the product when Z is the identity.
inline Matrix z_times(const ModelData& data, const Matrix& u) {
  if (data.Z.rows() == data.Z.cols() && data.Z.isIdentity(0.0)) return u;
  return data.Z * u;
}

struct GlmFit {
  Vector beta;
  bool converged = false;
  int iterations = 0;
};

// Ordinary GLM by IRLS (no random effects).
inline GlmFit glm_fit(const ModelData& data, const Family& family, int max_iter = 50,
                      double tol = 1e-8) {
  const auto n = data.n();
  const Matrix& X = data.X;
  detail::require(X.rows() == n, "X row count does not match y");

  Vector eta(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    if (family.kind == FamilyKind::PoissonLog) {
      eta[i] = std::log(data.y[i] + 0.1);
    } else {
      const double m = family.trials[i];
      const double p = (data.y[i] + 0.5) / (m + 1.0);
      eta[i] = std::log(p / (1.0 - p));
    }
  }

  GlmFit fit;
  fit.beta = Vector::Zero(X.cols());
  bool first = true;
  for (int it = 0; it < max_iter; ++it) {
    const FamilyEval ev = family_eval(family, eta);
    const Vector w = ev.dmu_deta.array().square() / ev.var_y.array();
    const Vector z = eta.array() + (data.y - ev.mu).array() / ev.dmu_deta.array();
    const Matrix xtwx = X.transpose() * w.asDiagonal() * X;
    Eigen::LDLT<Matrix> ldlt(xtwx);
    if (ldlt.info() != Eigen::Success || !ldlt.isPositive() ||
        ldlt.vectorD().minCoeff() <= 1e-12 * std::max(1.0, ldlt.vectorD().maxCoeff())) {
      throw InvalidInput("glm_fit: X does not have full column rank");
    }
    const Vector beta_new = ldlt.solve(X.transpose() * (w.asDiagonal() * z));
    if (!beta_new.allFinite()) throw NumericalFailure("glm_fit: non-finite IRLS step");
    const double change = first ? std::numeric_limits<double>::infinity()
                                : (beta_new - fit.beta).cwiseAbs().maxCoeff();
    fit.beta = beta_new;
    fit.iterations = it + 1;
    eta = X * fit.beta;
    first = false;
    if (change < tol) {
      fit.converged = true;
      break;
    }
  }
  return fit;
}

}  // namespace mcml
