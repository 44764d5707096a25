#pragma once

// Monte Carlo maximum likelihood driver: per iteration sample the random
// effects, update beta, update theta, then test for convergence.

#include <mcml/convergence_control.hpp>
#include <mcml/covariance_kernel.hpp>
#include <mcml/glmm_model.hpp>
#include <mcml/newton_updates.hpp>
#include <mcml/proposal_sampler.hpp>

#include <chrono>
#include <optional>
#include <string>
#include <vector>

namespace mcml {

// Parameter values at which the Monte Carlo sample size is computed.
struct ParameterGuess {
  Vector beta;
  CovarianceParams theta;
};

struct FitConfig {
  std::optional<CovarianceParams> covariance_init;  // nullopt = "auto"
  std::optional<ParameterGuess> sample_size_guess;  // nullopt = starting values
  StoppingConfig stopping;
  SampleSizeConfig sampling;
  std::uint64_t seed = 0;
  bool record_trace = true;
  double ess_floor = 0.1;

  void validate() const {
    stopping.validate();
    sampling.validate();
    detail::require(ess_floor > 0.0 && ess_floor <= 1.0, "sampling.ess_floor must lie in (0, 1]");
  }
};

inline constexpr double kWaldZ = 1.959963984540054;

struct FitResult {
  Vector beta_hat;
  CovarianceParams theta_hat;
  Vector se_beta;
  std::vector<std::pair<double, double>> wald_ci_beta;
  Eigen::Matrix2d theta_information = Eigen::Matrix2d::Zero();
  bool converged = false;
  int n_iterations = 0;
  int m_samples = 0;
  std::vector<IterationRecord> trace;
  Vector re_posterior_mean;
  double re_posterior_var_mean = 0.0;
  double wall_time_seconds = 0.0;
  double jitter_used = 0.0;
  int low_ess_iterations = 0;
  std::vector<std::string> warnings;
};

// Carries the failing step and the last parameters that were fully computed.
class FitFailure : public NumericalFailure {
 public:
  FitFailure(std::string step, int iteration, Vector beta, CovarianceParams theta,
             const std::string& cause)
      : NumericalFailure(detail::concat("fit failed in ", step, " at iteration ", iteration,
                                        ": ", cause)),
        step_(std::move(step)),
        iteration_(iteration),
        beta_(std::move(beta)),
        theta_(theta) {}

  const std::string& step() const { return step_; }
  int iteration() const { return iteration_; }
  const Vector& last_beta() const { return beta_; }
  const CovarianceParams& last_theta() const { return theta_; }

 private:
  std::string step_;
  int iteration_;
  Vector beta_;
  CovarianceParams theta_;
};

struct InitialValues {
  Vector beta0;
  CovarianceParams theta0;
};

inline InitialValues initial_values(const ModelData& data, const Family& family,
                                    const FitConfig& config,
                                    std::optional<Vector> beta_override = std::nullopt) {
  InitialValues init;
  if (beta_override) {
    init.beta0 = *beta_override;
  } else {
    init.beta0 = glm_fit(data, family).beta;
  }
  if (config.covariance_init) {
    init.theta0 = *config.covariance_init;
    return init;
  }
  const Vector eta = data.X * init.beta0;
  const FamilyEval ev = family_eval(family, eta);
  const Vector resid = (data.y - ev.mu).array() / ev.dmu_deta.array();
  double tau2 = 0.1;
  if (resid.size() > 1) {
    const double mean = resid.mean();
    tau2 = (resid.array() - mean).square().sum() / static_cast<double>(resid.size() - 1);
  }
  tau2 = std::max(tau2, 0.1);
  const double max_dist = pairwise_distances(data.coords).maxCoeff();
  const double lambda = max_dist > 0.0 ? 0.2 * max_dist : 1.0;
  init.theta0 = CovarianceParams::from_raw(tau2, lambda);
  return init;
}

struct RandomEffectSummary {
  Vector mean;
  double mean_posterior_variance = 0.0;
};

// Posterior mode u_bar and mean of diag(L P^-1 L').
inline RandomEffectSummary summarize_random_effects(const ProposalDistribution& proposal,
                                                    const CovarianceBundle& bundle) {
  const Matrix r_inv_lt = proposal.precision_chol.matrixL().solve(bundle.L.transpose());
  RandomEffectSummary s;
  s.mean = proposal.u_bar;
  s.mean_posterior_variance = r_inv_lt.colwise().squaredNorm().mean();
  return s;
}

inline RandomEffectSummary random_effect_summary(const ModelData& data, const Family& family,
                                                 const Vector& beta_hat,
                                                 const CovarianceBundle& bundle_hat) {
  const auto prop =
      posterior_mode_irls(data, beta_hat, bundle_hat, family, Vector::Zero(data.q()));
  return summarize_random_effects(prop, bundle_hat);
}

namespace detail {

template <typename F>
auto fit_step(const char* step, int t, const Vector& beta, const CovarianceParams& theta, F&& f) {
  try {
    return f();
  } catch (const InvalidInput&) {
    throw;
  } catch (const std::exception& e) {
    throw FitFailure(step, t, beta, theta, e.what());
  }
}

}  // namespace detail

inline FitResult fit(const ModelData& data, const Family& family, const FitConfig& config) {
  const auto clock_start = std::chrono::steady_clock::now();
  validate(data, family);
  config.validate();

  FitResult res;
  const auto q = data.q();
  const Matrix dist = pairwise_distances(data.coords);

  const InitialValues init = detail::fit_step(
      "initial_values", 0, Vector::Zero(data.p()), CovarianceParams{},
      [&] { return initial_values(data, family, config); });
  Vector beta = init.beta0;
  CovarianceParams theta = init.theta0;

  CovarianceBundle bundle = detail::fit_step(
      "build_bundle", 0, beta, theta, [&] { return build_bundle_from_distances(dist, theta); });
  if (bundle.duplicate_coords) res.warnings.emplace_back("duplicate coordinates: D is singular up to jitter");

  ProposalDistribution proposal = detail::fit_step("posterior_mode_irls", 0, beta, theta, [&] {
    return posterior_mode_irls(data, beta, bundle, family, Vector::Zero(q));
  });

  const auto sample_size = [&] {
    if (!config.sample_size_guess) {
      return mc_error_and_sample_size(data, family, beta, bundle, proposal, config.sampling).m;
    }
    const ParameterGuess& g = *config.sample_size_guess;
    detail::require(g.beta.size() == data.p(), "sample-size guess beta has the wrong length");
    const CovarianceBundle gb = build_bundle_from_distances(dist, g.theta);
    const ProposalDistribution gp =
        posterior_mode_irls(data, g.beta, gb, family, Vector::Zero(q));
    return mc_error_and_sample_size(data, family, g.beta, gb, gp, config.sampling).m;
  };
  const int m = config.sampling.m_fixed
                    ? *config.sampling.m_fixed
                    : detail::fit_step("mc_error_and_sample_size", 0, beta, theta, sample_size);
  res.m_samples = m;

  bool irls_warned = false;
  for (int t = 1;; ++t) {
    if (t > 1) {
      proposal = detail::fit_step("posterior_mode_irls", t, beta, theta, [&] {
        return posterior_mode_irls(data, beta, bundle, family, proposal.v_bar);
      });
    }
    if (!proposal.converged && !irls_warned) {
      res.warnings.emplace_back(
          detail::concat("posterior mode IRLS hit its iteration cap at iteration ", t));
      irls_warned = true;
    }
    SampleSet samples = detail::fit_step("importance_weights", t, beta, theta, [&] {
      return importance_weights(data, beta, bundle, family, proposal,
                                draw_samples(proposal, m, config.seed, static_cast<std::uint64_t>(t)),
                                config.ess_floor);
    });
    if (samples.low_ess) ++res.low_ess_iterations;

    const BetaStep bstep = detail::fit_step("beta_step", t, beta, theta,
                                            [&] { return beta_step(data, family, beta, samples); });
    const ThetaStepWorkspace ws = detail::fit_step(
        "theta_score_and_information", t, beta, theta,
        [&] { return theta_score_and_information(samples, bundle); });
    const CovarianceParams theta_new =
        detail::fit_step("theta_step", t, beta, theta, [&] { return theta_step(theta, ws); });
    CovarianceBundle bundle_new = detail::fit_step(
        "build_bundle", t, beta, theta, [&] { return build_bundle_from_distances(dist, theta_new); });

    const DeltaStats ds = detail::fit_step("delta_loglik_stats", t, beta, theta, [&] {
      return delta_loglik_stats(samples, data, family, bundle_new, bundle, bstep.beta_new, beta);
    });
    StopDecision dec = stopping_decision(t, ds.mean, ds.se, config.stopping);
    dec.record.beta = bstep.beta_new;
    dec.record.theta = theta_new;
    dec.record.ess = samples.ess;
    dec.record.m_used = samples.size();
    if (config.record_trace) res.trace.push_back(dec.record);

    beta = bstep.beta_new;
    theta = theta_new;
    bundle = std::move(bundle_new);
    res.n_iterations = t;
    if (dec.stop) {
      res.converged = dec.converged;
      break;
    }
  }

  const int t_final = res.n_iterations + 1;
  proposal = detail::fit_step("posterior_mode_irls", t_final, beta, theta, [&] {
    return posterior_mode_irls(data, beta, bundle, family, proposal.v_bar);
  });
  const GlsResult gls = detail::fit_step("gls_standard_errors", t_final, beta, theta, [&] {
    return gls_standard_errors(data, family, beta, bundle, proposal.v_bar);
  });
  const SampleSet final_samples = detail::fit_step("importance_weights", t_final, beta, theta, [&] {
    return importance_weights(data, beta, bundle, family, proposal,
                              draw_samples(proposal, m, config.seed, static_cast<std::uint64_t>(t_final)),
                              config.ess_floor);
  });
  res.theta_information = theta_score_and_information(final_samples, bundle).information;

  const RandomEffectSummary re = summarize_random_effects(proposal, bundle);
  res.beta_hat = beta;
  res.theta_hat = theta;
  res.se_beta = gls.se;
  for (Eigen::Index j = 0; j < beta.size(); ++j) {
    res.wald_ci_beta.emplace_back(beta[j] - kWaldZ * gls.se[j], beta[j] + kWaldZ * gls.se[j]);
  }
  res.re_posterior_mean = re.mean;
  res.re_posterior_var_mean = re.mean_posterior_variance;
  res.jitter_used = bundle.jitter_used;
  if (res.low_ess_iterations > 0) {
    res.warnings.emplace_back(detail::concat("effective sample size below floor in ",
                                             res.low_ess_iterations, " iteration(s)"));
  }
  if (!res.converged) res.warnings.emplace_back("maximum iterations reached without stopping");
  res.wall_time_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - clock_start).count();
  return res;
}

}  // namespace mcml
