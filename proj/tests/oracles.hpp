#pragma once

// Independent reference implementations used by the tests: random absorbing
// chains, a hand-written Gaussian elimination, a dense eigen oracle, Monte
// Carlo rollouts, a brute-force nearest-neighbour scan, and the closed-form
// rimless-wheel step map.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <vector>

#include <Eigen/Eigenvalues>

#include "metamesh/dynamics.hpp"
#include "metamesh/markov.hpp"

namespace oracle {

struct DenseChain {
  std::size_t n = 0;
  std::vector<double> p;  // row-major n x n

  double& at(std::size_t i, std::size_t j) { return p[i * n + j]; }
  double at(std::size_t i, std::size_t j) const { return p[i * n + j]; }
};

/// Absorbing chain with N states (row 0 absorbing). Every non-failure row
/// leaks to failure with probability in [leak_lo, leak_hi] and spreads the
/// rest over up to `fanout` random non-failure states.
inline DenseChain random_chain(std::mt19937_64& rng, std::size_t n, double leak_lo = 0.02,
                               double leak_hi = 0.2, std::size_t fanout = 6) {
  DenseChain c;
  c.n = n;
  c.p.assign(n * n, 0.0);
  c.at(0, 0) = 1.0;
  std::uniform_real_distribution<double> leak(leak_lo, leak_hi), w(0.05, 1.0);
  std::uniform_int_distribution<std::size_t> pick(1, n - 1);
  std::uniform_int_distribution<std::size_t> fan(1, std::min(fanout, n - 1));
  for (std::size_t i = 1; i < n; ++i) {
    const double f = leak(rng);
    const std::size_t k = fan(rng);
    std::vector<std::pair<std::size_t, double>> targets;
    double total = 0.0;
    for (std::size_t t = 0; t < k; ++t) {
      targets.emplace_back(pick(rng), w(rng));
      total += targets.back().second;
    }
    c.at(i, 0) = f;
    for (const auto& [j, wt] : targets) c.at(i, j) += (1.0 - f) * wt / total;
  }
  return c;
}

inline metamesh::StochasticMatrix to_sparse(const DenseChain& c) {
  return metamesh::StochasticMatrix::from_dense(c.p, c.n);
}

/// Solves A x = b by Gaussian elimination with partial pivoting.
inline std::vector<double> gauss_solve(std::vector<double> a, std::vector<double> b,
                                       std::size_t n) {
  for (std::size_t col = 0; col < n; ++col) {
    std::size_t piv = col;
    for (std::size_t r = col + 1; r < n; ++r)
      if (std::abs(a[r * n + col]) > std::abs(a[piv * n + col])) piv = r;
    if (piv != col) {
      for (std::size_t k = 0; k < n; ++k) std::swap(a[col * n + k], a[piv * n + k]);
      std::swap(b[col], b[piv]);
    }
    for (std::size_t r = col + 1; r < n; ++r) {
      const double f = a[r * n + col] / a[col * n + col];
      if (f == 0.0) continue;
      for (std::size_t k = col; k < n; ++k) a[r * n + k] -= f * a[col * n + k];
      b[r] -= f * b[col];
    }
  }
  std::vector<double> x(n);
  for (std::size_t r = n; r-- > 0;) {
    double s = b[r];
    for (std::size_t k = r + 1; k < n; ++k) s -= a[r * n + k] * x[k];
    x[r] = s / a[r * n + r];
  }
  return x;
}

/// m over states 0..N-1 (m[0] = 0) by a dense solve of (I - T-hat) m = 1.
inline std::vector<double> dense_mfpt(const DenseChain& c) {
  const std::size_t k = c.n - 1;
  std::vector<double> a(k * k, 0.0), b(k, 1.0);
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t j = 0; j < k; ++j) a[i * k + j] = (i == j ? 1.0 : 0.0) - c.at(i + 1, j + 1);
  auto x = gauss_solve(std::move(a), std::move(b), k);
  x.insert(x.begin(), 0.0);
  return x;
}

struct DenseSpectrum {
  double lambda2 = 0.0;
  std::vector<double> phi;  // left eigenvector of T-hat, sums to 1
};

/// Dominant eigenpair of T-hat from a full dense eigendecomposition of its
/// transpose (left eigenvectors).
inline DenseSpectrum dense_spectrum(const DenseChain& c) {
  const auto k = static_cast<Eigen::Index>(c.n - 1);
  Eigen::MatrixXd tt(k, k);
  for (Eigen::Index i = 0; i < k; ++i)
    for (Eigen::Index j = 0; j < k; ++j) tt(j, i) = c.at(i + 1, j + 1);
  Eigen::EigenSolver<Eigen::MatrixXd> es(tt);
  Eigen::Index best = 0;
  for (Eigen::Index i = 1; i < k; ++i)
    if (es.eigenvalues()(i).real() > es.eigenvalues()(best).real()) best = i;
  DenseSpectrum out;
  out.lambda2 = es.eigenvalues()(best).real();
  const Eigen::VectorXd v = es.eigenvectors().col(best).real();
  const double s = v.sum();
  for (Eigen::Index i = 0; i < k; ++i) out.phi.push_back(v(i) / s);
  return out;
}

/// Brute-force (1 - lambda) of the full matrix, for the lambda1 = 1 check.
inline std::vector<std::complex<double>> full_eigenvalues(const DenseChain& c) {
  const auto n = static_cast<Eigen::Index>(c.n);
  Eigen::MatrixXd m(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) m(i, j) = c.at(i, j);
  Eigen::EigenSolver<Eigen::MatrixXd> es(m, false);
  std::vector<std::complex<double>> out;
  for (Eigen::Index i = 0; i < n; ++i) out.push_back(es.eigenvalues()(i));
  return out;
}

struct McResult {
  double mean = 0.0;
  double standard_error = 0.0;
};

/// Steps to absorption, counting the absorbing step, from uniformly random
/// non-failure starts.
inline McResult monte_carlo_mfpt(const DenseChain& c, std::size_t rollouts, std::uint64_t seed) {
  std::vector<std::vector<double>> cdf(c.n);
  for (std::size_t i = 1; i < c.n; ++i) {
    cdf[i].resize(c.n);
    double s = 0.0;
    for (std::size_t j = 0; j < c.n; ++j) cdf[i][j] = (s += c.at(i, j));
  }
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> start(1, c.n - 1);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double sum = 0.0, sum2 = 0.0;
  for (std::size_t r = 0; r < rollouts; ++r) {
    std::size_t s = start(rng);
    double steps = 0.0;
    while (s != 0) {
      const double x = u(rng) * cdf[s].back();
      s = static_cast<std::size_t>(std::upper_bound(cdf[s].begin(), cdf[s].end(), x) -
                                   cdf[s].begin());
      if (s >= c.n) s = c.n - 1;
      steps += 1.0;
    }
    sum += steps;
    sum2 += steps * steps;
  }
  const double n = static_cast<double>(rollouts);
  McResult out;
  out.mean = sum / n;
  out.standard_error = std::sqrt(std::max(0.0, sum2 / n - out.mean * out.mean) / n);
  return out;
}

/// Linear-scan nearest neighbour with lowest index on ties.
inline std::pair<double, std::size_t> nearest_scan(std::span<const double> q,
                                                   const metamesh::Mesh& mesh) {
  double best = std::numeric_limits<double>::infinity();
  std::size_t arg = 0;
  for (std::size_t i = 1; i < mesh.size(); ++i) {
    const auto s = mesh.state(i);
    double d2 = 0.0;
    for (std::size_t k = 0; k < q.size(); ++k) d2 += (q[k] - s[k]) * (q[k] - s[k]);
    if (d2 < best) {
      best = d2;
      arg = i;
    }
  }
  return {std::sqrt(best), arg};
}

/// Closed-form rimless-wheel step: post-impact speed after one spoke
/// rotation, or a negative value if the hub cannot pass vertical.
inline double rimless_step(double omega, double g_over_l, double alpha, double gamma) {
  // Energy from post-impact angle (gamma - alpha) to the top (0).
  const double top = omega * omega - 2.0 * g_over_l * (1.0 - std::cos(gamma - alpha));
  if (top <= 0.0) return -1.0;
  const double pre = omega * omega + 2.0 * g_over_l * (std::cos(gamma - alpha) - std::cos(gamma + alpha));
  return std::sqrt(pre) * std::cos(2.0 * alpha);
}

inline double rimless_fixed_point(double g_over_l, double alpha, double gamma) {
  return std::cos(2.0 * alpha) / std::sin(2.0 * alpha) *
         std::sqrt(4.0 * g_over_l * std::sin(alpha) * std::sin(gamma));
}

}  // namespace oracle
