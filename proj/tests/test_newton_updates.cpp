#include <mcml/newton_updates.hpp>
#include <mcml/sim_bench.hpp>

#include "oracles.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>

using namespace mcml;

namespace {

ModelData make_data(const Vector& y, const Matrix& X, const Matrix& Z, const Matrix& coords) {
  ModelData d;
  d.y = y;
  d.X = X;
  d.Z = Z;
  d.coords = coords;
  return d;
}

// SampleSet with given u draws (Q x m) and log-weights; v = L^-1 u.
SampleSet make_samples(const CovarianceBundle& b, const Matrix& u, const Vector& logw) {
  SampleSet s;
  s.u_draws = u;
  s.v_draws = b.llt.matrixL().solve(u);
  s.log_weights_unnorm = logw;
  normalize_weights(s);
  return s;
}

Matrix far_apart(int q) {
  Matrix c = Matrix::Zero(q, 2);
  for (int i = 0; i < q; ++i) c(i, 0) = 1e4 * i;
  return c;
}

double weighted_log_density(const SampleSet& s, const CovarianceBundle& b) {
  double total = 0.0;
  for (Eigen::Index k = 0; k < s.size(); ++k) {
    total += s.weights[k] * oracle::dense_gaussian_logdensity(s.u_draws.col(k), b.D);
  }
  return total;
}

}  // namespace

TEST(BetaStep, ZeroScoreKeepsBeta) {
  std::mt19937_64 rng(2);
  const Matrix X = oracle::random_matrix(6, 2, rng);
  const Matrix Z = oracle::random_matrix(6, 3, rng);
  const Vector beta = Eigen::Vector2d(0.4, -0.2);
  const Vector u = oracle::random_matrix(3, 1, rng);
  const Vector y = (X * beta + Z * u).array().exp();
  const Matrix coords = oracle::random_coords(3, rng);
  const auto b = build_bundle(coords, CovarianceParams::from_raw(1.0, 0.3));
  const auto d = make_data(y, X, Z, coords);
  const BetaStep st = beta_step(d, Family::poisson(), beta, make_samples(b, u, Vector::Zero(1)));
  EXPECT_LT((st.beta_new - beta).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(BetaStep, NoRandomEffectsIsOneFisherScoringStep) {
  std::mt19937_64 rng(20);
  const int n = 20;
  Matrix X(n, 2);
  X.col(0).setOnes();
  X.col(1) = oracle::random_matrix(n, 1, rng);
  Vector y(n);
  std::poisson_distribution<int> pois(5.0);
  for (int i = 0; i < n; ++i) y[i] = pois(rng);
  const Matrix coords = oracle::random_coords(4, rng);
  const auto d = make_data(y, X, Matrix::Zero(n, 4), coords);
  const auto b = build_bundle(coords, CovarianceParams::from_raw(1.0, 0.3));
  const Vector beta = Eigen::Vector2d(1.0, 0.1);
  const Matrix u = oracle::random_matrix(4, 30, rng);
  const BetaStep st = beta_step(d, Family::poisson(), beta, make_samples(b, u, oracle::random_matrix(30, 1, rng)));

  // Hand-rolled IRLS: beta + (X'WX)^-1 X'(y - mu).
  Eigen::Matrix2d xwx = Eigen::Matrix2d::Zero();
  Eigen::Vector2d score = Eigen::Vector2d::Zero();
  for (int i = 0; i < n; ++i) {
    const double mu = std::exp(beta[0] * X(i, 0) + beta[1] * X(i, 1));
    for (int a = 0; a < 2; ++a) {
      score[a] += X(i, a) * (y[i] - mu);
      for (int c = 0; c < 2; ++c) xwx(a, c) += X(i, a) * mu * X(i, c);
    }
  }
  const Eigen::Vector2d want = beta + xwx.inverse() * score;
  EXPECT_NEAR(st.beta_new[0], want[0], 1e-10);
  EXPECT_NEAR(st.beta_new[1], want[1], 1e-10);
}

TEST(BetaStep, FrozenSamplesReachFixedPoint) {
  std::mt19937_64 rng(31);
  const int n = 15;
  Matrix X(n, 2);
  X.col(0).setOnes();
  X.col(1) = oracle::random_matrix(n, 1, rng);
  Matrix Z = Matrix::Zero(n, 5);
  for (int i = 0; i < n; ++i) Z(i, i % 5) = 1.0;
  Vector y(n);
  std::binomial_distribution<int> bin(10, 0.4);
  for (int i = 0; i < n; ++i) y[i] = bin(rng);
  const Matrix coords = oracle::random_coords(5, rng);
  const auto d = make_data(y, X, Z, coords);
  const auto b = build_bundle(coords, CovarianceParams::from_raw(0.5, 0.3));
  const Family fam = Family::binomial(Vector::Constant(n, 10));
  const SampleSet s = make_samples(b, 0.5 * oracle::random_matrix(5, 40, rng), oracle::random_matrix(40, 1, rng));
  Vector beta = Vector::Zero(2);
  BetaStep st;
  for (int it = 0; it < 50; ++it) {
    st = beta_step(d, fam, beta, s);
    beta = st.beta_new;
  }
  st = beta_step(d, fam, beta, s);
  EXPECT_LT(st.score_beta.cwiseAbs().maxCoeff(), 1e-8);
}

TEST(BetaStep, SingularInformationIsNumericalFailure) {
  const Matrix coords = far_apart(2);
  Matrix X(3, 2);
  X << 1, 1, 1, 1, 1, 1;
  const auto d = make_data(Vector::Ones(3), X, Matrix::Zero(3, 2), coords);
  const auto b = build_bundle(coords, CovarianceParams::from_raw(1.0, 1.0));
  EXPECT_THROW(beta_step(d, Family::poisson(), Vector::Zero(2), make_samples(b, Matrix::Zero(2, 1), Vector::Zero(1))),
               NumericalFailure);
}

TEST(ThetaScore, PriorConsistentSampleHasZeroScore) {
  const int q = 4;
  const auto b = build_bundle(far_apart(q), CovarianceParams::from_raw(1.0, 1.0));
  Vector u = Vector::Ones(q);  // u'u = Q
  const auto ws = theta_score_and_information(make_samples(b, u, Vector::Zero(1)), b);
  EXPECT_NEAR(ws.score[0], 0.0, 1e-12);
  EXPECT_NEAR(ws.score[0], -q / 2.0 + q / 2.0, 1e-12);
}

TEST(ThetaScore, MatchesFiniteDifferencesOfWeightedLogDensity) {
  std::mt19937_64 rng(77);
  for (int rep = 0; rep < 50; ++rep) {
    const int q = 3 + rep % 4;
    const Matrix coords = oracle::random_coords(q, rng);
    std::uniform_real_distribution<double> un(-1.0, 1.0);
    const CovarianceParams p{un(rng), std::log(0.2) + 0.5 * un(rng)};
    const auto b = build_bundle(coords, p);
    const int m = 1 + rep % 5;
    const SampleSet s = make_samples(b, b.L * oracle::random_matrix(q, m, rng), oracle::random_matrix(m, 1, rng));
    const auto ws = theta_score_and_information(s, b);
    for (int i = 0; i < 2; ++i) {
      auto f = [&](double x) {
        CovarianceParams pp = p;
        (i == 0 ? pp.log_tau2 : pp.log_lambda) = x;
        return weighted_log_density(s, build_bundle(coords, pp));
      };
      const double x0 = i == 0 ? p.log_tau2 : p.log_lambda;
      const double fd = oracle::central_difference(f, x0, 1e-4);
      EXPECT_NEAR(ws.score[i], fd, 1e-5 * std::max(1.0, std::abs(fd))) << "rep " << rep << " i " << i;
    }
  }
}

TEST(ThetaInformation, ExpectedMomentGivesFisherInformation) {
  std::mt19937_64 rng(5);
  for (int rep = 0; rep < 10; ++rep) {
    const Matrix coords = oracle::random_coords(5, rng);
    const auto b = build_bundle(coords, CovarianceParams::from_raw(0.5 + 0.1 * rep, 0.1 + 0.03 * rep));
    const auto ws = theta_workspace_from_moment(b, b.D);
    const Matrix dinv = b.D.inverse();
    for (int i = 0; i < 2; ++i) {
      EXPECT_NEAR(ws.score[i], 0.0, 1e-8);
      for (int j = 0; j < 2; ++j) {
        const double want = 0.5 * (dinv * b.dD[i] * dinv * b.dD[j]).trace();
        EXPECT_NEAR(ws.information(i, j), want, 1e-8 * std::max(1.0, std::abs(want)));
      }
    }
  }
}

TEST(ThetaInformation, SymmetricAndPositiveAtTruth) {
  ScenarioSpec spec;  // Table 1 row-1 design
  int positive = 0;
  const int reps = 100;
  for (int r = 0; r < reps; ++r) {
    const SimulatedData sim = simulate_scenario(spec, r);
    const auto b = build_bundle(sim.data.coords, CovarianceParams::from_raw(spec.tau2, spec.lambda));
    const Vector beta = Eigen::Vector2d(spec.beta0, spec.beta1);
    const auto prop = posterior_mode_irls(sim.data, beta, b, sim.family, Vector::Zero(sim.data.q()));
    const SampleSet s =
        importance_weights(sim.data, beta, b, sim.family, prop, draw_samples(prop, 250, 17, r));
    const auto ws = theta_score_and_information(s, b);
    EXPECT_EQ(ws.information(0, 1), ws.information(1, 0));
    if (Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d>(ws.information).eigenvalues().minCoeff() > 0.0) ++positive;
  }
  EXPECT_GE(positive, 99);
}

TEST(ThetaStep, HandCases) {
  const CovarianceParams p{0.2, -1.0};
  ThetaStepWorkspace ws;
  ws.information = Eigen::Matrix2d::Identity();
  auto q = theta_step(p, ws);
  EXPECT_EQ(q.log_tau2, p.log_tau2);
  EXPECT_EQ(q.log_lambda, p.log_lambda);

  ws.score = Eigen::Vector2d(0.5, 0.0);
  q = theta_step(p, ws);
  EXPECT_DOUBLE_EQ(q.log_tau2, 0.7);
  EXPECT_EQ(q.log_lambda, p.log_lambda);

  ws.score = Eigen::Vector2d(10.0, 0.0);
  q = theta_step(p, ws);
  EXPECT_DOUBLE_EQ(q.log_tau2, 1.2);
  EXPECT_EQ(q.log_lambda, p.log_lambda);
}

TEST(ThetaStep, IndefiniteInformationFallsBackToScaledScore) {
  ThetaStepWorkspace ws;
  ws.information << -1.0, 0.0, 0.0, 1.0;
  ws.score = Eigen::Vector2d(3.0, 4.0);
  const auto q = theta_step(CovarianceParams{0.0, 0.0}, ws);
  EXPECT_NEAR(q.log_tau2, 0.06, 1e-15);
  EXPECT_NEAR(q.log_lambda, 0.08, 1e-15);
}

TEST(ThetaStep, ConjugateFixedPointMatchesClosedForm) {
  // Independent effects (D = tau2 I) with exact N(0, sigma2) draws and equal weights:
  // the fixed point is tau2 = sum u^2 / (m Q).
  const int q = 6, m = 4000;
  const double sigma2 = 2.5;
  std::mt19937_64 rng(101);
  const Matrix u = std::sqrt(sigma2) * oracle::random_matrix(q, m, rng);
  CovarianceParams p = CovarianceParams::from_raw(1.0, 1.0);
  for (int it = 0; it < 100; ++it) {
    const auto b = build_bundle(far_apart(q), p);
    p = theta_step(p, theta_score_and_information(make_samples(b, u, Vector::Zero(m)), b));
  }
  const double closed = u.squaredNorm() / (m * q);
  EXPECT_NEAR(p.tau2(), closed, 1e-8);
  EXPECT_NEAR(p.tau2(), sigma2, 4.0 * sigma2 * std::sqrt(2.0 / (m * q)));
  EXPECT_DOUBLE_EQ(p.lambda(), 1.0);
}

TEST(NewtonUpdates, InvariantToWeightRescaling) {
  std::mt19937_64 rng(44);
  const int n = 12;
  Matrix X(n, 2);
  X.col(0).setOnes();
  X.col(1) = oracle::random_matrix(n, 1, rng);
  Matrix Z = Matrix::Zero(n, 4);
  for (int i = 0; i < n; ++i) Z(i, i % 4) = 1.0;
  const Matrix coords = oracle::random_coords(4, rng);
  Vector y(n);
  std::poisson_distribution<int> pois(3.0);
  for (int i = 0; i < n; ++i) y[i] = pois(rng);
  const auto d = make_data(y, X, Z, coords);
  const auto b = build_bundle(coords, CovarianceParams::from_raw(0.7, 0.3));
  const Matrix u = b.L * oracle::random_matrix(4, 25, rng);
  Vector logw(25);
  for (int k = 0; k < 25; ++k) logw[k] = -0.125 * ((k * 7) % 23);  // dyadic, exact under shifts
  const SampleSet s1 = make_samples(b, u, logw);
  const SampleSet s2 = make_samples(b, u, (logw.array() + 64.0).matrix());
  const Vector beta = Eigen::Vector2d(1.0, 0.1);
  EXPECT_EQ(s1.weights, s2.weights);
  EXPECT_EQ(beta_step(d, Family::poisson(), beta, s1).beta_new, beta_step(d, Family::poisson(), beta, s2).beta_new);
  const auto w1 = theta_score_and_information(s1, b);
  const auto w2 = theta_score_and_information(s2, b);
  EXPECT_EQ(w1.score, w2.score);
  EXPECT_EQ(w1.information, w2.information);
}

TEST(NewtonUpdates, MonteCarloErrorShrinksWithSampleSize) {
  // One shared effect so the exact posterior expectations come from quadrature.
  Vector y(6);
  y << 3, 6, 2, 4, 7, 5;
  Matrix X(6, 2);
  X.col(0).setOnes();
  X.col(1) << -1.0, 0.5, -0.3, 0.2, 1.1, 0.0;
  const auto d = make_data(y, X, Matrix::Ones(6, 1), Matrix::Zero(1, 2));
  const double tau2 = 0.5;
  const auto b = build_bundle(d.coords, CovarianceParams::from_raw(tau2, 1.0));
  const Vector beta = Eigen::Vector2d(1.0, 0.3);
  const auto prop = posterior_mode_irls(d, beta, b, Family::poisson(), Vector::Zero(1));

  const auto gh = oracle::gauss_hermite(64);
  const double l = std::sqrt(tau2);
  auto lik = [&](double v) {
    double ll = 0.0;
    for (int i = 0; i < 6; ++i) {
      const double eta = beta[0] * X(i, 0) + beta[1] * X(i, 1) + l * v;
      ll += y[i] * eta - std::exp(eta);
    }
    return std::exp(ll - 20.0);
  };
  const double z = oracle::normal_expectation(gh, lik);
  auto post = [&](const std::function<double(double)>& g) {
    return oracle::normal_expectation(gh, [&](double v) { return g(v) * lik(v); }) / z;
  };
  // Exact beta step and theta score.
  Eigen::Matrix2d info = Eigen::Matrix2d::Zero();
  Eigen::Vector2d score = Eigen::Vector2d::Zero();
  for (int i = 0; i < 6; ++i) {
    const double lin = beta[0] * X(i, 0) + beta[1] * X(i, 1);
    const double emu = post([&](double v) { return std::exp(lin + l * v); });
    for (int a = 0; a < 2; ++a) {
      score[a] += X(i, a) * (y[i] - emu);
      for (int c = 0; c < 2; ++c) info(a, c) += X(i, a) * X(i, c) * emu;
    }
  }
  const Eigen::Vector2d beta_exact = beta + info.inverse() * score;
  const double score_exact = -0.5 + 0.5 * post([&](double v) { return v * v; });

  auto rms_error = [&](int m) {
    double eb = 0.0, et = 0.0;
    const int seeds = 12;
    for (int sd = 0; sd < seeds; ++sd) {
      const SampleSet s = importance_weights(d, beta, b, Family::poisson(), prop, draw_samples(prop, m, 500 + sd, 1));
      eb += (beta_step(d, Family::poisson(), beta, s).beta_new - beta_exact).squaredNorm();
      et += std::pow(theta_score_and_information(s, b).score[0] - score_exact, 2);
    }
    return std::pair{std::sqrt(eb / seeds), std::sqrt(et / seeds)};
  };
  const auto [b_small, t_small] = rms_error(10000);
  const auto [b_big, t_big] = rms_error(100000);
  const double expected = std::sqrt(10.0);
  EXPECT_GT(b_small / b_big, expected / 3.0);
  EXPECT_LT(b_small / b_big, expected * 3.0);
  EXPECT_GT(t_small / t_big, expected / 3.0);
  EXPECT_LT(t_small / t_big, expected * 3.0);
}

TEST(GlsStandardErrors, ZeroCovarianceGivesGlmErrors) {
  std::mt19937_64 rng(8);
  const int n = 10;
  Matrix X(n, 2);
  X.col(0).setOnes();
  X.col(1) = oracle::random_matrix(n, 1, rng);
  const auto d = make_data(Vector::Ones(n), X, Matrix::Identity(n, n), oracle::random_coords(n, rng));
  const Vector beta = Eigen::Vector2d(0.5, -0.3);
  const GlsResult g = gls_standard_errors(d, Family::poisson(), beta, Matrix::Zero(n, n), Vector::Zero(n));
  const Vector mu = (X * beta).array().exp();
  const Matrix want = (X.transpose() * mu.asDiagonal() * X).inverse();
  for (int j = 0; j < 2; ++j) EXPECT_NEAR(g.se[j], std::sqrt(want(j, j)), 1e-12);
}

TEST(GlsStandardErrors, TwoByTwoHandCase) {
  Matrix X(2, 2);
  X << 1.0, 0.5, 1.0, -1.5;
  const auto d = make_data(Vector::Ones(2), X, Matrix::Identity(2, 2), far_apart(2));
  const GlsResult g =
      gls_standard_errors(d, Family::poisson(), Vector::Zero(2), Matrix::Identity(2, 2), Vector::Zero(2));
  const Matrix want = (X.transpose() * X / 2.0).inverse();
  for (int j = 0; j < 2; ++j) EXPECT_NEAR(g.se[j], std::sqrt(want(j, j)), 1e-12);
}

TEST(GlsStandardErrors, MatchesDenseInverse) {
  std::mt19937_64 rng(61);
  const int n = 9, q = 4;
  Matrix X(n, 2);
  X.col(0).setOnes();
  X.col(1) = oracle::random_matrix(n, 1, rng);
  Matrix Z = Matrix::Zero(n, q);
  for (int i = 0; i < n; ++i) Z(i, i % q) = 1.0;
  const Matrix coords = oracle::random_coords(q, rng);
  const auto d = make_data(Vector::Ones(n), X, Z, coords);
  const auto b = build_bundle(coords, CovarianceParams::from_raw(0.9, 0.4));
  const Vector v = oracle::random_matrix(q, 1, rng);
  const Vector beta = Eigen::Vector2d(0.1, 0.4);
  const Family fam = Family::binomial(Vector::Constant(n, 5));
  const GlsResult g = gls_standard_errors(d, fam, beta, b, v);
  const Vector eta = X * beta + Z * (b.L * v);
  Matrix sigma = Z * b.D * Z.transpose();
  for (int i = 0; i < n; ++i) {
    const double p = 1.0 / (1.0 + std::exp(-eta[i]));
    sigma(i, i) += 1.0 / (5.0 * p * (1 - p));
  }
  const Matrix cov = (X.transpose() * sigma.inverse() * X).inverse();
  for (int j = 0; j < 2; ++j) EXPECT_NEAR(g.se[j], std::sqrt(cov(j, j)), 1e-10);
  EXPECT_LT((g.covariance - cov).cwiseAbs().maxCoeff(), 1e-10);
}
