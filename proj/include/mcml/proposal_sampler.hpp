#pragma once

// Gaussian importance-sampling proposal for the standardized random effects
// v (u = L v): posterior mode by IRLS, draws, and self-normalized weights.

#include <mcml/covariance_kernel.hpp>
#include <mcml/glmm_model.hpp>

#include <cmath>
#include <limits>
#include <numbers>
#include <random>

namespace mcml {

struct ProposalDistribution {
  Vector v_bar;
  Matrix precision;                 // L'Z'WZL + I
  Eigen::LLT<Matrix> precision_chol;
  Vector u_bar;                     // L v_bar
  int iterations = 0;
  bool converged = false;

  double logdet_precision() const {
    return 2.0 * Matrix(precision_chol.matrixL()).diagonal().array().log().sum();
  }
};

struct SampleSet {
  Matrix v_draws;  // Q x m, one draw per column
  Matrix u_draws;  // Q x m
  Vector log_weights_unnorm;
  Vector weights;
  double ess = 0.0;
  bool low_ess = false;

  Eigen::Index size() const { return weights.size(); }
};

struct IrlsOptions {
  int max_iterations = 100;
  double tolerance = 1e-6;
  int max_halvings = 10;
};

namespace detail {

struct JointState {
  Vector grad;   // L'Z' s(y, mu) - v
  Vector w;      // working weights
};

inline JointState joint_state(const ModelData& data, const Family& family, const Vector& offset,
                              const Matrix& ZL, const Vector& v) {
  const Vector eta = offset + ZL * v;
  const FamilyEval ev = family_eval(family, eta);
  JointState s;
  s.w = ev.dmu_deta.array().square() / ev.var_y.array();
  s.grad = ZL.transpose() * score_residual(data.y, ev) - v;
  return s;
}

inline void factor_precision(const Matrix& ZL, const Vector& w, Matrix& precision,
                             Eigen::LLT<Matrix>& llt) {
  if (!w.allFinite()) throw NumericalFailure("posterior_mode_irls: non-finite working weights");
  precision = ZL.transpose() * w.asDiagonal() * ZL;
  precision.diagonal().array() += 1.0;
  llt.compute(precision);
  if (llt.info() != Eigen::Success) {
    throw NumericalFailure("posterior_mode_irls: proposal precision is not positive-definite");
  }
}

}  // namespace detail

inline ProposalDistribution posterior_mode_irls(const ModelData& data, const Vector& beta,
                                                const CovarianceBundle& bundle,
                                                const Family& family, const Vector& v_init,
                                                const IrlsOptions& opts = {}) {
  const auto q = data.q();
  detail::require(v_init.size() == q, "v_init length does not match Q");
  detail::require(bundle.q() == q, "covariance dimension does not match Z");
  detail::require(v_init.allFinite(), "v_init must be finite");

  const Matrix ZL = data.Z * bundle.L;
  const Vector offset = data.X * beta;

  ProposalDistribution prop;
  Vector v = v_init;
  auto state = detail::joint_state(data, family, offset, ZL, v);
  for (int it = 0; it < opts.max_iterations; ++it) {
    detail::factor_precision(ZL, state.w, prop.precision, prop.precision_chol);
    const Vector step = prop.precision_chol.solve(state.grad);
    if (!step.allFinite()) throw NumericalFailure("posterior_mode_irls: non-finite step");

    const double grad_norm = state.grad.norm();
    double scale = 1.0;
    Vector trial = v + step;
    auto trial_state = detail::joint_state(data, family, offset, ZL, trial);
    for (int h = 0; h < opts.max_halvings && trial_state.grad.norm() > grad_norm; ++h) {
      scale *= 0.5;
      trial = v + scale * step;
      trial_state = detail::joint_state(data, family, offset, ZL, trial);
    }
    const double change = scale * step.cwiseAbs().maxCoeff();
    v = std::move(trial);
    state = std::move(trial_state);
    prop.iterations = it + 1;
    if (change < opts.tolerance) {
      prop.converged = true;
      break;
    }
  }
  detail::factor_precision(ZL, state.w, prop.precision, prop.precision_chol);
  prop.u_bar = bundle.L * v;
  prop.v_bar = std::move(v);
  return prop;
}

// Deterministic per-draw engine keyed by (seed, iteration, draw index).
inline std::mt19937_64 draw_engine(std::uint64_t seed, std::uint64_t iteration,
                                   std::uint64_t index) {
  return std::mt19937_64(detail::derive_seed(seed, iteration, index));
}

// v = v_bar + R^{-T} eps with R R' = precision; eps is Q x m.
inline Matrix draw_samples_from_normals(const ProposalDistribution& proposal, const Matrix& eps) {
  detail::require(eps.rows() == proposal.v_bar.size(), "eps rows must equal Q");
  Matrix v = proposal.precision_chol.matrixU().solve(eps);
  v.colwise() += proposal.v_bar;
  return v;
}

inline Matrix draw_samples(const ProposalDistribution& proposal, Eigen::Index m,
                           std::uint64_t seed, std::uint64_t iteration) {
  detail::require(m >= 1, "draw_samples needs m >= 1");
  const auto q = proposal.v_bar.size();
  Matrix eps(q, m);
  std::normal_distribution<double> normal;
  for (Eigen::Index k = 0; k < m; ++k) {
    auto eng = draw_engine(seed, iteration, static_cast<std::uint64_t>(k));
    for (Eigen::Index j = 0; j < q; ++j) eps(j, k) = normal(eng);
    normal.reset();
  }
  return draw_samples_from_normals(proposal, eps);
}

// Normalize log-weights with max subtraction; fills weights and ESS.
inline void normalize_weights(SampleSet& s, double ess_floor = 0.1) {
  const auto m = s.log_weights_unnorm.size();
  const double top = s.log_weights_unnorm.maxCoeff();
  if (!(top > -std::numeric_limits<double>::infinity()) || std::isnan(top)) {
    throw NumericalFailure("importance_weights: all log-weights are -inf or NaN");
  }
  s.weights = (s.log_weights_unnorm.array() - top).exp();
  s.weights /= s.weights.sum();
  s.ess = 1.0 / s.weights.squaredNorm();
  s.ess = std::clamp(s.ess, 1.0, static_cast<double>(m));
  s.low_ess = s.ess < ess_floor * static_cast<double>(m);
}

inline SampleSet importance_weights(const ModelData& data, const Vector& beta,
                                    const CovarianceBundle& bundle, const Family& family,
                                    const ProposalDistribution& proposal, Matrix v_draws,
                                    double ess_floor = 0.1) {
  const auto q = data.q();
  detail::require(v_draws.rows() == q && v_draws.cols() >= 1,
                  "v_draws must be Q x m with m >= 1");
  const double log2pi = std::log(2.0 * std::numbers::pi);

  SampleSet s;
  s.u_draws = bundle.L * v_draws;
  Matrix eta = z_times(data, s.u_draws);
  eta.colwise() += data.X * beta;

  const double norm_const = log_normalizers(family, data.y).sum();
  const double prior_const = -0.5 * static_cast<double>(q) * log2pi - 0.5 * bundle.logdet_D;
  const double prop_const =
      -0.5 * static_cast<double>(q) * log2pi + 0.5 * proposal.logdet_precision();
  const Matrix centered = v_draws.colwise() - proposal.v_bar;
  const Matrix white = proposal.precision_chol.matrixU() * centered;

  // u = L v, so u'D^{-1}u = v'v
  const Vector cll = conditional_log_kernel_columns(family, data.y, eta).array() + norm_const;
  const Vector log_prior = prior_const - 0.5 * v_draws.colwise().squaredNorm().transpose().array();
  const Vector log_prop = prop_const - 0.5 * white.colwise().squaredNorm().transpose().array();
  s.log_weights_unnorm = cll + log_prior - log_prop;
  s.v_draws = std::move(v_draws);
  normalize_weights(s, ess_floor);
  return s;
}

}  // namespace mcml
