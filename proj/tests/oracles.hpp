#pragma once

// Independent reference computations used by the tests. Nothing here calls
// into the library's numerical routines.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <functional>
#include <numbers>
#include <random>
#include <vector>

namespace oracle {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

inline Mat naive_matmul(const Mat& a, const Mat& b) {
  Mat c = Mat::Zero(a.rows(), b.cols());
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < b.cols(); ++j) {
      double s = 0.0;
      for (Eigen::Index k = 0; k < a.cols(); ++k) s += a(i, k) * b(k, j);
      c(i, j) = s;
    }
  return c;
}

inline Mat random_matrix(Eigen::Index r, Eigen::Index c, std::mt19937_64& rng) {
  std::normal_distribution<double> nd;
  Mat m(r, c);
  for (Eigen::Index i = 0; i < r; ++i)
    for (Eigen::Index j = 0; j < c; ++j) m(i, j) = nd(rng);
  return m;
}

inline Mat random_spd(Eigen::Index q, std::mt19937_64& rng) {
  const Mat a = random_matrix(q, q, rng);
  return a * a.transpose() + static_cast<double>(q) * Mat::Identity(q, q);
}

inline Mat random_coords(Eigen::Index q, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Mat c(q, 2);
  for (Eigen::Index i = 0; i < q; ++i) {
    c(i, 0) = u(rng);
    c(i, 1) = u(rng);
  }
  return c;
}

// Gaussian density through an explicit inverse and determinant.
inline double dense_gaussian_logdensity(const Vec& u, const Mat& d) {
  const double q = static_cast<double>(u.size());
  const Mat inv = d.inverse();
  return -0.5 * q * std::log(2.0 * std::numbers::pi) - 0.5 * std::log(d.determinant()) -
         0.5 * u.dot(inv * u);
}

inline double central_difference(const std::function<double(double)>& f, double x, double h) {
  return (f(x + h) - f(x - h)) / (2.0 * h);
}

// Plain Nelder-Mead with restarts.
inline Vec nelder_mead(const std::function<double(const Vec&)>& f, Vec x0, double step = 0.5,
                       double tol = 1e-14, int max_eval = 200000, int restarts = 4) {
  const auto n = x0.size();
  Vec best = std::move(x0);
  for (int r = 0; r < restarts; ++r) {
    std::vector<Vec> s(static_cast<std::size_t>(n + 1), best);
    std::vector<double> fs(static_cast<std::size_t>(n + 1));
    for (Eigen::Index i = 0; i < n; ++i) s[static_cast<std::size_t>(i + 1)][i] += step;
    for (std::size_t i = 0; i < s.size(); ++i) fs[i] = f(s[i]);
    int evals = static_cast<int>(s.size());
    while (evals < max_eval) {
      std::vector<std::size_t> idx(s.size());
      for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
      std::sort(idx.begin(), idx.end(), [&](auto a, auto b) { return fs[a] < fs[b]; });
      std::vector<Vec> s2;
      std::vector<double> f2;
      for (auto i : idx) {
        s2.push_back(s[i]);
        f2.push_back(fs[i]);
      }
      s = std::move(s2);
      fs = std::move(f2);
      if (std::abs(fs.back() - fs.front()) <= tol * (1.0 + std::abs(fs.front()))) {
        double spread = 0.0;
        for (const auto& v : s) spread = std::max(spread, (v - s.front()).cwiseAbs().maxCoeff());
        if (spread < 1e-10) break;
      }
      Vec centroid = Vec::Zero(n);
      for (std::size_t i = 0; i + 1 < s.size(); ++i) centroid += s[i];
      centroid /= static_cast<double>(n);
      const Vec xr = centroid + (centroid - s.back());
      const double fr = f(xr);
      ++evals;
      if (fr < fs.front()) {
        const Vec xe = centroid + 2.0 * (centroid - s.back());
        const double fe = f(xe);
        ++evals;
        if (fe < fr) {
          s.back() = xe;
          fs.back() = fe;
        } else {
          s.back() = xr;
          fs.back() = fr;
        }
      } else if (fr < fs[fs.size() - 2]) {
        s.back() = xr;
        fs.back() = fr;
      } else {
        const bool outside = fr < fs.back();
        const Vec xc = outside ? Vec(centroid + 0.5 * (xr - centroid))
                               : Vec(centroid + 0.5 * (s.back() - centroid));
        const double fc = f(xc);
        ++evals;
        if (fc < std::min(fr, fs.back())) {
          s.back() = xc;
          fs.back() = fc;
        } else {
          for (std::size_t i = 1; i < s.size(); ++i) {
            s[i] = s.front() + 0.5 * (s[i] - s.front());
            fs[i] = f(s[i]);
            ++evals;
          }
        }
      }
    }
    best = s.front();
    step *= 0.1;
  }
  return best;
}

// Gauss-Hermite rule for integrals against exp(-x^2), by Golub-Welsch.
struct Quadrature {
  Vec nodes;
  Vec weights;
};

inline Quadrature gauss_hermite(int n) {
  Mat j = Mat::Zero(n, n);
  for (int k = 1; k < n; ++k) {
    j(k, k - 1) = j(k - 1, k) = std::sqrt(k / 2.0);
  }
  Eigen::SelfAdjointEigenSolver<Mat> eig(j);
  Quadrature q;
  q.nodes = eig.eigenvalues();
  q.weights = std::sqrt(std::numbers::pi) * eig.eigenvectors().row(0).transpose().array().square();
  return q;
}

// E[g(Z)] for Z ~ N(0, 1).
inline double normal_expectation(const Quadrature& q, const std::function<double(double)>& g) {
  double s = 0.0;
  for (Eigen::Index i = 0; i < q.nodes.size(); ++i) {
    s += q.weights[i] * g(std::numbers::sqrt2 * q.nodes[i]);
  }
  return s / std::sqrt(std::numbers::pi);
}

inline double log_sum_exp(const Vec& a) {
  const double m = a.maxCoeff();
  return m + std::log((a.array() - m).exp().sum());
}

}  // namespace oracle
