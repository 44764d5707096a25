#pragma once

// Stochastic Newton-Raphson updates: fixed effects from weighted GLM score
// and information, covariance parameters from the weighted Gaussian score
// and information on the log scale, and GLS standard errors.

#include <mcml/covariance_kernel.hpp>
#include <mcml/glmm_model.hpp>
#include <mcml/proposal_sampler.hpp>

#include <cmath>

namespace mcml {

struct BetaStep {
  Vector beta_new;
  Matrix info_beta;   // sum_k w_k X'W_k X
  Vector score_beta;  // sum_k w_k X'g_k
};

// Weighted averages over samples of W_k and of the per-observation score.
struct WeightedGlmMoments {
  Vector mean_w;
  Vector mean_score;
};

inline WeightedGlmMoments weighted_glm_moments(const ModelData& data, const Family& family,
                                               const Vector& beta, const SampleSet& samples) {
  detail::require(samples.size() >= 1, "sample set is empty");
  detail::require(samples.u_draws.rows() == data.q(), "u draws do not match Q");
  Matrix eta = z_times(data, samples.u_draws);
  eta.colwise() += data.X * beta;
  const FamilyEvalColumns ev = family_eval_columns(family, eta);
  const Eigen::ArrayXXd w = ev.dmu_deta.square() / ev.var_y;
  const Eigen::ArrayXXd score =
      ((-ev.mu).colwise() + data.y.array()) * ev.dmu_deta / ev.var_y;
  WeightedGlmMoments out;
  out.mean_w = w.matrix() * samples.weights;
  out.mean_score = score.matrix() * samples.weights;
  return out;
}

inline BetaStep beta_step(const ModelData& data, const Family& family, const Vector& beta,
                          const SampleSet& samples) {
  const WeightedGlmMoments mom = weighted_glm_moments(data, family, beta, samples);
  BetaStep out;
  out.info_beta = data.X.transpose() * mom.mean_w.asDiagonal() * data.X;
  out.score_beta = data.X.transpose() * mom.mean_score;

  Eigen::SelfAdjointEigenSolver<Matrix> eig(out.info_beta, Eigen::EigenvaluesOnly);
  const double lo = eig.eigenvalues().minCoeff();
  const double hi = eig.eigenvalues().maxCoeff();
  if (!(lo > 1e-12 * hi) || !(hi > 0.0)) {
    throw NumericalFailure(detail::concat(
        "beta_step: fixed-effect information is singular (eigenvalues ", lo, " .. ", hi, ")"));
  }
  Vector step = Eigen::LLT<Matrix>(out.info_beta).solve(out.score_beta);
  for (int h = 0; h < 10 && !step.allFinite(); ++h) step *= 0.5;
  if (!step.allFinite()) throw NumericalFailure("beta_step: non-finite Newton step");
  out.beta_new = beta + step;
  return out;
}

struct ThetaStepWorkspace {
  Eigen::Vector2d score = Eigen::Vector2d::Zero();
  Eigen::Matrix2d information = Eigen::Matrix2d::Zero();
  Eigen::Vector2d trace_dinv_dd = Eigen::Vector2d::Zero();     // tr(D^-1 dD_i)
  Eigen::Matrix2d trace_dinv_dd_pair = Eigen::Matrix2d::Zero();  // tr(D^-1 dD_i D^-1 dD_j)
};

// Score and information given the weighted second moment S = E[u u'].
inline ThetaStepWorkspace theta_workspace_from_moment(const CovarianceBundle& bundle,
                                                      const Matrix& second_moment) {
  detail::require(second_moment.rows() == bundle.q() && second_moment.cols() == bundle.q(),
                  "second moment must be Q x Q");
  std::array<Matrix, kNumThetaParams> c;  // D^-1 dD_i
  for (int i = 0; i < kNumThetaParams; ++i) c[i] = bundle.solve(bundle.dD[i]);
  const Matrix dinv_s = bundle.solve(second_moment);
  const Matrix g = bundle.solve(dinv_s.transpose());  // D^-1 S D^-1

  ThetaStepWorkspace ws;
  for (int i = 0; i < kNumThetaParams; ++i) {
    ws.trace_dinv_dd[i] = c[i].trace();
    // tr(G dD_i), both symmetric
    ws.score[i] = -0.5 * ws.trace_dinv_dd[i] + 0.5 * g.cwiseProduct(bundle.dD[i]).sum();
    const Matrix g_dd = g * bundle.dD[i];
    for (int j = 0; j < kNumThetaParams; ++j) {
      ws.trace_dinv_dd_pair(i, j) = c[i].cwiseProduct(c[j].transpose()).sum();
      ws.information(i, j) = -0.5 * ws.trace_dinv_dd_pair(i, j) +
                             g_dd.cwiseProduct(c[j].transpose()).sum();
    }
  }
  ws.information = 0.5 * (ws.information + ws.information.transpose()).eval();
  ws.trace_dinv_dd_pair = 0.5 * (ws.trace_dinv_dd_pair + ws.trace_dinv_dd_pair.transpose()).eval();
  return ws;
}

inline Matrix weighted_second_moment(const SampleSet& samples) {
  return samples.u_draws * samples.weights.asDiagonal() * samples.u_draws.transpose();
}

inline ThetaStepWorkspace theta_score_and_information(const SampleSet& samples,
                                                      const CovarianceBundle& bundle) {
  detail::require(samples.size() >= 1, "sample set is empty");
  detail::require(samples.u_draws.rows() == bundle.q(), "u draws do not match covariance");
  return theta_workspace_from_moment(bundle, weighted_second_moment(samples));
}

struct ThetaStepOptions {
  double max_log_step = 1.0;
  double fallback_step = 0.1;
};

inline CovarianceParams theta_step(const CovarianceParams& params, const ThetaStepWorkspace& ws,
                                   const ThetaStepOptions& opts = {}) {
  // Parameters with identically zero score and information (dD_i = 0) stay put.
  std::array<int, kNumThetaParams> active{};
  int n_active = 0;
  for (int i = 0; i < kNumThetaParams; ++i) {
    const bool inert = ws.score[i] == 0.0 && ws.information.row(i).isZero(0.0);
    if (!inert) active[n_active++] = i;
  }
  Eigen::Vector2d step = Eigen::Vector2d::Zero();
  if (n_active > 0) {
    Matrix m(n_active, n_active);
    Vector s(n_active);
    for (int a = 0; a < n_active; ++a) {
      s[a] = ws.score[active[a]];
      for (int b = 0; b < n_active; ++b) m(a, b) = ws.information(active[a], active[b]);
    }
    Eigen::LLT<Matrix> llt(m);
    Vector sub;
    if (llt.info() == Eigen::Success && m.allFinite()) {
      sub = llt.solve(s);
    } else {
      const double norm = s.norm();
      sub = norm > 0.0 ? Vector(s / norm * opts.fallback_step) : Vector::Zero(n_active);
    }
    for (int a = 0; a < n_active; ++a) step[active[a]] = sub[a];
  }
  step = step.cwiseMax(-opts.max_log_step).cwiseMin(opts.max_log_step);
  const Eigen::Vector2d next = params.as_vector() + step;
  if (!next.allFinite()) {
    throw NumericalFailure(detail::concat("theta_step: non-finite update from (",
                                          params.log_tau2, ", ", params.log_lambda, ")"));
  }
  return CovarianceParams::from_vector(next);
}

struct GlsResult {
  Vector se;
  Matrix covariance;  // (X' Sigma^-1 X)^-1
  double jitter_used = 0.0;
};

// Marginal working covariance Sigma = W^-1 + Z D Z' with W at the given u.
inline GlsResult gls_standard_errors(const ModelData& data, const Family& family,
                                     const Vector& beta, const Matrix& D, const Vector& u_eval) {
  detail::require(D.rows() == data.q() && D.cols() == data.q(), "D must be Q x Q");
  const Vector w = working_weights(family, linear_predictor(beta, u_eval, data));
  Matrix sigma = data.Z * D * data.Z.transpose();
  sigma.diagonal().array() += w.array().inverse();
  Eigen::LLT<Matrix> llt;
  GlsResult out;
  out.jitter_used = factor_with_jitter(sigma, llt, "GLS marginal covariance");
  const Matrix xt_sinv_x = data.X.transpose() * llt.solve(data.X);
  Eigen::LLT<Matrix> info(xt_sinv_x);
  if (info.info() != Eigen::Success) {
    throw NumericalFailure("gls_standard_errors: X' Sigma^-1 X is not positive-definite");
  }
  out.covariance = info.solve(Matrix::Identity(data.p(), data.p()));
  out.se = out.covariance.diagonal().cwiseSqrt();
  return out;
}

inline GlsResult gls_standard_errors(const ModelData& data, const Family& family,
                                     const Vector& beta, const CovarianceBundle& bundle,
                                     const Vector& v_bar_eval) {
  return gls_standard_errors(data, family, beta, bundle.D, bundle.L * v_bar_eval);
}

}  // namespace mcml
