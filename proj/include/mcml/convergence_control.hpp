#pragma once

// Bayes-factor stopping rule with a Weibull-shaped prior on the iteration of
// convergence, plus Monte Carlo error matrices and the sample-size rule.

#include <mcml/covariance_kernel.hpp>
#include <mcml/glmm_model.hpp>
#include <mcml/newton_updates.hpp>
#include <mcml/proposal_sampler.hpp>

#include <cmath>
#include <limits>
#include <numbers>
#include <optional>

namespace mcml {

struct StoppingConfig {
  double t0 = 30.0;
  double bf_threshold = 5.0;
  int min_iterations = 5;
  int max_iterations = 200;

  void validate() const {
    detail::require(t0 > 0.0, "stopping.t0 must be positive");
    detail::require(bf_threshold > 1.0, "stopping.bf_threshold must exceed 1");
    detail::require(min_iterations >= 1, "stopping.min_iterations must be >= 1");
    detail::require(min_iterations < max_iterations,
                    "stopping.min_iterations must be below max_iterations");
  }
};

struct IterationRecord {
  int t = 0;
  double delta_mean = 0.0;
  double delta_se = 0.0;
  double p_value = 0.5;
  double prior_pi0 = 0.0;
  double log_bf = -std::numeric_limits<double>::infinity();
  Vector beta;
  CovarianceParams theta;
  double ess = 0.0;
  Eigen::Index m_used = 0;
};

struct SampleSizeConfig {
  double p_mc = 0.1;
  int m_min = 250;
  int m_max = 5000;
  std::optional<int> m_fixed;

  void validate() const {
    detail::require(p_mc > 0.0 && p_mc < 1.0, "sampling.p_mc must lie in (0, 1)");
    detail::require(m_min >= 50, "sampling.m_min must be >= 50");
    detail::require(m_max >= m_min, "sampling.m_max must be >= m_min");
    if (m_fixed) detail::require(*m_fixed >= 1, "sampling.m_fixed must be >= 1");
  }
};

struct DeltaStats {
  double mean = 0.0;
  double se = 0.0;
};

// Weighted mean and standard error of per-draw log-joint differences.
inline DeltaStats delta_stats_from(const Vector& weights, const Vector& delta) {
  DeltaStats s;
  s.mean = weights.dot(delta);
  // Weighted standard error with the small-sample factor 1/(1 - sum w^2),
  // which reduces to the usual s/sqrt(m) under equal weights.
  const double sum_w2 = weights.squaredNorm();
  const double ss = (weights.array().square() * (delta.array() - s.mean).square()).sum();
  s.se = sum_w2 < 1.0 ? std::sqrt(ss / (1.0 - sum_w2)) : 0.0;
  return s;
}

// Differences of log f(y|u, beta) + log f(u|theta) between the current and
// previous parameters, evaluated on the current iteration's draws.
inline DeltaStats delta_loglik_stats(const SampleSet& samples, const ModelData& data,
                                     const Family& family, const CovarianceBundle& bundle_t,
                                     const CovarianceBundle& bundle_prev, const Vector& beta_t,
                                     const Vector& beta_prev) {
  detail::require(samples.size() >= 1, "sample set is empty");
  const Matrix zu = z_times(data, samples.u_draws);
  const Matrix white_t = bundle_t.llt.matrixL().solve(samples.u_draws);
  const Matrix white_prev = bundle_prev.llt.matrixL().solve(samples.u_draws);
  const double logdet_diff = bundle_t.logdet_D - bundle_prev.logdet_D;

  const Vector cll_t =
      conditional_log_kernel_columns(family, data.y, zu.colwise() + data.X * beta_t);
  const Vector cll_prev =
      conditional_log_kernel_columns(family, data.y, zu.colwise() + data.X * beta_prev);
  const Vector prior = -0.5 * logdet_diff -
                       0.5 * (white_t.colwise().squaredNorm() -
                              white_prev.colwise().squaredNorm()).transpose().array();
  const Vector delta = cll_t - cll_prev + prior;
  return delta_stats_from(samples.weights, delta);
}

inline double prior_convergence_probability(double t, double t0) {
  return -std::expm1(-(t / t0) * (t / t0));
}

// One-sided p-value P(Z <= m/s) for H1: mean change < 0.
inline double one_sided_p_value(double delta_mean, double delta_se) {
  if (delta_se == 0.0 || !std::isfinite(delta_mean / delta_se)) {
    if (delta_mean < 0.0) return 0.0;
    if (delta_mean > 0.0) return 1.0;
    return 0.5;
  }
  return 0.5 * std::erfc(-delta_mean / delta_se / std::numbers::sqrt2);
}

// log BF = log((1-p)/p) + log(pi0/(1-pi0)).
inline double log_bayes_factor(double p_value, double t, double t0) {
  const double r = (t / t0) * (t / t0);
  const double log_prior_odds = std::log(-std::expm1(-r)) + r;
  return std::log1p(-p_value) - std::log(p_value) + log_prior_odds;
}

struct StopDecision {
  bool stop = false;
  bool converged = false;
  IterationRecord record;
};

inline StopDecision stopping_decision(int t, double delta_mean, double delta_se,
                                      const StoppingConfig& cfg) {
  detail::require(t >= 0, "iteration index must be non-negative");
  StopDecision d;
  d.record.t = t;
  d.record.delta_mean = delta_mean;
  d.record.delta_se = delta_se;
  d.record.p_value = one_sided_p_value(delta_mean, delta_se);
  d.record.prior_pi0 = prior_convergence_probability(t, cfg.t0);
  d.record.log_bf = log_bayes_factor(d.record.p_value, t, cfg.t0);
  const bool bf_stop =
      t >= cfg.min_iterations && !std::isnan(d.record.log_bf) &&
      d.record.log_bf > std::log(cfg.bf_threshold);
  d.converged = bf_stop;
  d.stop = bf_stop || t >= cfg.max_iterations;
  return d;
}

inline double expected_convergence_time(double kappa, double start_distance, int num_params,
                                        double sigma2_mc, double lambda_min, double m) {
  constexpr double kFloor = 5.0;
  detail::require(kappa >= 1.0, "kappa must be >= 1");
  detail::require(start_distance > 0.0 && num_params > 0 && sigma2_mc > 0.0 &&
                      lambda_min > 0.0 && m > 0.0,
                  "expected_convergence_time arguments must be positive");
  const double arg =
      (start_distance / num_params) / std::sqrt(sigma2_mc / (lambda_min * m));
  if (!(arg > 1.0)) return kFloor;
  return std::max(kFloor, 0.5 * kappa * std::log(arg));
}

struct McErrorResult {
  int m = 0;
  double m_raw = 0.0;           // before clamping and rounding
  Matrix m_beta_mc;             // (X'WX)^-1 V_beta (X'WX)^-1
  Eigen::Matrix2d m_theta_mc;   // M^-1 V_theta M^-1
  Matrix v_beta;
  Eigen::Vector2d v_theta;      // diagonal of V_theta
  Matrix info_beta;             // X'WX
  Eigen::Matrix2d info_theta;   // 1/2 tr(D^-1 dD_i D^-1 dD_j)
};

// Sample size from the ratio of Monte Carlo variance to information,
// m = (1-p)/p * M_MC,ii / M_ii maximized over parameters.
inline int required_sample_size(const Vector& mc_diag, const Vector& info_diag,
                                const SampleSizeConfig& cfg, double* raw = nullptr) {
  double worst = 0.0;
  for (Eigen::Index i = 0; i < mc_diag.size(); ++i) {
    if (info_diag[i] > 0.0 && std::isfinite(mc_diag[i])) {
      worst = std::max(worst, mc_diag[i] / info_diag[i]);
    }
  }
  const double m = (1.0 - cfg.p_mc) / cfg.p_mc * worst;
  if (raw) *raw = m;
  const double clamped =
      std::clamp(std::ceil(m - 1e-9), static_cast<double>(cfg.m_min), static_cast<double>(cfg.m_max));
  return static_cast<int>(clamped);
}

inline McErrorResult mc_error_and_sample_size(const ModelData& data, const Family& family,
                                              const Vector& beta, const CovarianceBundle& bundle,
                                              const ProposalDistribution& proposal,
                                              const SampleSizeConfig& cfg) {
  const auto q = data.q();
  const auto p = data.p();
  const Vector& mu_u = proposal.u_bar;
  const Vector w = working_weights(family, linear_predictor(beta, mu_u, data));

  const Matrix d_inv = bundle.solve(Matrix::Identity(q, q));
  Matrix h = data.Z.transpose() * w.asDiagonal() * data.Z + d_inv;
  h = 0.5 * (h + h.transpose()).eval();
  Eigen::LLT<Matrix> h_llt;
  factor_with_jitter(h, h_llt, "Z'WZ + D^-1");

  McErrorResult out;
  const ThetaStepWorkspace fisher = theta_workspace_from_moment(bundle, bundle.D);
  out.info_theta = fisher.information;
  for (int i = 0; i < kNumThetaParams; ++i) {
    const Matrix b = bundle.solve(bundle.solve(bundle.dD[i]).transpose());  // D^-1 dD_i D^-1
    const Matrix a = b * h_llt.solve(b);
    out.v_theta[i] = a.trace() + 2.0 * mu_u.dot(a * mu_u);
  }
  Eigen::Matrix2d info_inv = Eigen::Matrix2d::Zero();
  {
    // Restrict to parameters with non-zero information.
    std::array<int, kNumThetaParams> act{};
    int na = 0;
    for (int i = 0; i < kNumThetaParams; ++i)
      if (out.info_theta(i, i) > 0.0) act[na++] = i;
    Matrix sub(na, na);
    for (int a = 0; a < na; ++a)
      for (int b = 0; b < na; ++b) sub(a, b) = out.info_theta(act[a], act[b]);
    const Matrix sub_inv = sub.inverse();
    for (int a = 0; a < na; ++a)
      for (int b = 0; b < na; ++b) info_inv(act[a], act[b]) = sub_inv(a, b);
  }
  out.m_theta_mc = info_inv * out.v_theta.asDiagonal() * info_inv;

  const Matrix zt_w_x = data.Z.transpose() * w.asDiagonal() * data.X;
  out.v_beta = zt_w_x.transpose() * h_llt.solve(zt_w_x);
  out.info_beta = data.X.transpose() * w.asDiagonal() * data.X;
  const Matrix xwx_inv = Eigen::LLT<Matrix>(out.info_beta).solve(Matrix::Identity(p, p));
  out.m_beta_mc = xwx_inv * out.v_beta * xwx_inv;

  Vector mc_diag(p + kNumThetaParams), info_diag(p + kNumThetaParams);
  mc_diag << out.m_beta_mc.diagonal(), out.m_theta_mc.diagonal();
  info_diag << out.info_beta.diagonal(), out.info_theta.diagonal();
  out.m = required_sample_size(mc_diag, info_diag, cfg, &out.m_raw);
  return out;
}

}  // namespace mcml
