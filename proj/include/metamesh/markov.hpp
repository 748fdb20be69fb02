#pragma once

// Stochastic transition matrices assembled from the deterministic table and a
// disturbance distribution, and the metastability metrics computed on them.
//
// State 0 is absorbing (failure). With T-hat the non-failure block, the
// absorbing structure makes the spectrum of T equal to {1} plus the spectrum
// of T-hat, so lambda2 is the Perron root of T-hat and the metastable
// distribution is its left Perron vector.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/IterativeLinearSolvers>
#include <Eigen/Sparse>
#include <tbb/parallel_for.h>
#include <tbb/task_arena.h>

#include "metamesh/common.hpp"
#include "metamesh/dynamics.hpp"
#include "metamesh/meshing.hpp"

namespace metamesh {

/// Values at or beyond this many steps are reported as +infinity.
inline constexpr double kInfiniteSteps = 1e15;
/// lambda2 this close to 1 means failure is never reached.
inline constexpr double kUnitEigenvalueTolerance = 1e-12;
inline constexpr double kRowSumTolerance = 1e-12;

/// Row-major sparse (CSR) row-stochastic matrix with an absorbing row 0.
class StochasticMatrix {
 public:
  StochasticMatrix() = default;

  StochasticMatrix(std::vector<std::size_t> row_ptr, std::vector<std::uint32_t> cols,
                   std::vector<double> vals)
      : row_ptr_(std::move(row_ptr)), cols_(std::move(cols)), vals_(std::move(vals)) {
    validate();
  }

  /// Builds from a dense row-major N x N array (zeros dropped).
  static StochasticMatrix from_dense(std::span<const double> dense, std::size_t n) {
    if (dense.size() != n * n) throw InvalidArgument("from_dense: matrix is not N x N");
    std::vector<std::size_t> rp{0};
    std::vector<std::uint32_t> cols;
    std::vector<double> vals;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        if (dense[i * n + j] != 0.0) {
          cols.push_back(static_cast<std::uint32_t>(j));
          vals.push_back(dense[i * n + j]);
        }
      }
      rp.push_back(cols.size());
    }
    return StochasticMatrix(std::move(rp), std::move(cols), std::move(vals));
  }

  std::size_t size() const noexcept { return row_ptr_.empty() ? 0 : row_ptr_.size() - 1; }
  std::size_t nonzeros() const noexcept { return vals_.size(); }

  std::span<const std::uint32_t> row_cols(std::size_t i) const {
    return std::span<const std::uint32_t>(cols_).subspan(row_ptr_[i], row_ptr_[i + 1] - row_ptr_[i]);
  }
  std::span<const double> row_vals(std::size_t i) const {
    return std::span<const double>(vals_).subspan(row_ptr_[i], row_ptr_[i + 1] - row_ptr_[i]);
  }

  double at(std::size_t i, std::size_t j) const {
    const auto c = row_cols(i);
    const auto it = std::lower_bound(c.begin(), c.end(), static_cast<std::uint32_t>(j));
    if (it == c.end() || *it != j) return 0.0;
    return row_vals(i)[static_cast<std::size_t>(it - c.begin())];
  }

  double failure_probability(std::size_t i) const { return at(i, 0); }

  /// Throws unless rows sum to 1, entries lie in [0, 1], columns are sorted
  /// and row 0 is the unit vector e0.
  void validate() const {
    const std::size_t n = size();
    if (n < 2) throw InvalidArgument("stochastic matrix needs at least 2 states");
    if (row_ptr_.front() != 0 || row_ptr_.back() != vals_.size() || cols_.size() != vals_.size())
      throw InvalidArgument("stochastic matrix: inconsistent CSR arrays");
    for (std::size_t i = 0; i < n; ++i) {
      if (row_ptr_[i + 1] < row_ptr_[i]) throw InvalidArgument("stochastic matrix: bad row_ptr");
      double sum = 0.0;
      std::int64_t prev = -1;
      for (std::size_t k = row_ptr_[i]; k < row_ptr_[i + 1]; ++k) {
        if (cols_[k] >= n) throw InvalidArgument("stochastic matrix: column out of range");
        if (static_cast<std::int64_t>(cols_[k]) <= prev)
          throw InvalidArgument("stochastic matrix: columns not strictly increasing");
        prev = cols_[k];
        if (!(vals_[k] >= 0.0 && vals_[k] <= 1.0))
          throw InvalidArgument("stochastic matrix: entry outside [0, 1]");
        sum += vals_[k];
      }
      if (std::abs(sum - 1.0) > kRowSumTolerance)
        throw InvalidArgument("stochastic matrix: row " + std::to_string(i) + " sums to " +
                              format_double(sum));
    }
    if (row_cols(0).size() != 1 || row_cols(0)[0] != 0 || row_vals(0)[0] != 1.0)
      throw InvalidArgument("stochastic matrix: row 0 must be the absorbing unit row");
  }

  std::size_t controller = 0;
  std::string profile_id;

 private:
  std::vector<std::size_t> row_ptr_;
  std::vector<std::uint32_t> cols_;
  std::vector<double> vals_;
};

/// T(i, j) = sum over disturbances of P(gamma) [T_det(i, controller, gamma) = j];
/// row 0 is e0. Only realized successors are stored.
inline StochasticMatrix assemble_stochastic(const TransitionTable& table, std::size_t controller,
                                            const DisturbanceProfile& profile) {
  if (profile.probabilities.size() != table.n_disturbances ||
      profile.disturbances.size() != table.n_disturbances)
    throw InvalidArgument("profile has " + std::to_string(profile.probabilities.size()) +
                          " entries but the table has " +
                          std::to_string(table.n_disturbances) + " disturbances");
  DisturbanceProfile::check_distribution(profile.probabilities);
  if (controller >= table.n_controllers)
    throw InvalidArgument("controller index " + std::to_string(controller) + " out of range");
  const std::size_t n = table.n_states;
  if (n < 2) throw InvalidArgument("transition table has no non-failure states");

  std::vector<std::size_t> rp{0, 1};
  std::vector<std::uint32_t> cols{0};
  std::vector<double> vals{1.0};
  std::vector<std::pair<std::uint32_t, double>> row;
  for (std::size_t i = 1; i < n; ++i) {
    row.clear();
    for (std::size_t d = 0; d < table.n_disturbances; ++d) {
      const std::uint32_t succ = table.at(i, controller, d);
      if (succ >= n)
        throw InvalidArgument("transition table row " + std::to_string(i) +
                              " is unexplored (truncated mesh)");
      const double p = profile.probabilities[d];
      if (p > 0.0) row.emplace_back(succ, p);
    }
    std::stable_sort(row.begin(), row.end(),
                     [](const auto& x, const auto& y) { return x.first < y.first; });
    for (std::size_t k = 0; k < row.size();) {
      const std::uint32_t col = row[k].first;
      double p = row[k].second;
      for (++k; k < row.size() && row[k].first == col; ++k) p += row[k].second;
      cols.push_back(col);
      vals.push_back(p);
    }
    rp.push_back(cols.size());
  }
  StochasticMatrix out(std::move(rp), std::move(cols), std::move(vals));
  out.controller = controller;
  out.profile_id = profile.id;
  return out;
}

/// Copy of `base` with a different probability vector.
inline DisturbanceProfile with_probabilities(const DisturbanceProfile& base,
                                             std::vector<double> probabilities,
                                             std::string id = {}) {
  DisturbanceProfile out = base;
  out.probabilities = std::move(probabilities);
  if (!id.empty()) out.id = std::move(id);
  out.validate();
  return out;
}

struct SpectralOptions {
  double eigen_tolerance = 1e-12;     // on successive eigenvalue estimates
  double residual_tolerance = 1e-12;  // on ||phi^T T-hat - lambda phi^T||_1
  std::size_t max_iterations = 100000;
  double gap_ratio = 0.1;
  double solve_tolerance = 1e-10;  // relative residual, iterative MFPT solve
  std::size_t solve_max_iterations = 20000;
  std::size_t dense_limit = 2000;  // dense direct MFPT solve up to this size
  std::size_t lambda3_iterations = 2000;
};

namespace detail {

// y = v^T T-hat over the non-failure block; v, y have N-1 entries.
inline void left_multiply(const StochasticMatrix& t, std::span<const double> v,
                          std::span<double> y) {
  std::fill(y.begin(), y.end(), 0.0);
  for (std::size_t i = 1; i < t.size(); ++i) {
    const double vi = v[i - 1];
    if (vi == 0.0) continue;
    const auto c = t.row_cols(i);
    const auto p = t.row_vals(i);
    for (std::size_t k = 0; k < c.size(); ++k)
      if (c[k] != 0) y[c[k] - 1] += vi * p[k];
  }
}

// y = T-hat r.
inline void right_multiply(const StochasticMatrix& t, std::span<const double> r,
                           std::span<double> y) {
  for (std::size_t i = 1; i < t.size(); ++i) {
    const auto c = t.row_cols(i);
    const auto p = t.row_vals(i);
    double s = 0.0;
    for (std::size_t k = 0; k < c.size(); ++k)
      if (c[k] != 0) s += p[k] * r[c[k] - 1];
    y[i - 1] = s;
  }
}

struct PowerResult {
  double lambda = 0.0;
  std::vector<double> vec;
  double residual = 0.0;
  std::size_t iterations = 0;
};

// Left Perron pair of T-hat by power iteration on (I + T-hat)/2. The shift
// keeps the Perron root strictly dominant even for periodic blocks; the
// eigenvector is unchanged and lambda = 2 mu - 1.
inline PowerResult left_perron(const StochasticMatrix& t, std::vector<double> v,
                               const SpectralOptions& opt) {
  const std::size_t m = t.size() - 1;
  std::vector<double> w(m);
  double total = std::accumulate(v.begin(), v.end(), 0.0);
  for (double& x : v) x /= total;
  double previous = kInfinity;
  PowerResult out;
  for (std::size_t it = 1; it <= opt.max_iterations; ++it) {
    left_multiply(t, v, w);
    const double lambda = std::accumulate(w.begin(), w.end(), 0.0);
    double residual = 0.0;
    for (std::size_t i = 0; i < m; ++i) residual += std::abs(w[i] - lambda * v[i]);
    out.iterations = it;
    if (std::abs(lambda - previous) <= opt.eigen_tolerance &&
        residual <= opt.residual_tolerance) {
      out.lambda = lambda;
      out.vec = std::move(v);
      out.residual = residual;
      return out;
    }
    previous = lambda;
    double sum = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
      v[i] = 0.5 * (v[i] + w[i]);
      sum += v[i];
    }
    if (!(sum > 0.0)) break;
    for (double& x : v) x /= sum;
    out.lambda = lambda;
    out.residual = residual;
  }
  throw ConvergenceError("metastable distribution: power iteration did not converge after " +
                             std::to_string(out.iterations) + " iterations",
                         out.residual);
}

inline std::vector<double> right_perron(const StochasticMatrix& t, double lambda,
                                        const SpectralOptions& opt) {
  const std::size_t m = t.size() - 1;
  std::vector<double> r(m, 1.0), y(m);
  for (std::size_t it = 0; it < opt.max_iterations; ++it) {
    right_multiply(t, r, y);
    double peak = 0.0, change = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
      y[i] = 0.5 * (r[i] + y[i]);
      peak = std::max(peak, std::abs(y[i]));
    }
    if (!(peak > 0.0)) return r;
    for (std::size_t i = 0; i < m; ++i) {
      y[i] /= peak;
      change = std::max(change, std::abs(y[i] - r[i]));
    }
    r.swap(y);
    if (change <= 1e-13) break;
  }
  (void)lambda;
  return r;
}

// Growth rate of v -> v^T T-hat restricted to the complement of the Perron
// pair (one deflation step). An estimate of |lambda3|, not a certified value.
inline double deflated_rate(const StochasticMatrix& t, std::span<const double> phi,
                            std::span<const double> r, const SpectralOptions& opt) {
  const std::size_t m = t.size() - 1;
  if (m < 2) return 0.0;
  const double phr = std::inner_product(phi.begin(), phi.end(), r.begin(), 0.0);
  if (!(phr > 0.0)) return kInfinity;
  std::vector<double> z(m), y(m);
  for (std::size_t i = 0; i < m; ++i) z[i] = (i % 2 == 0 ? 1.0 : -1.0) + 1.0 / (1.0 + i);
  auto project = [&](std::vector<double>& v) {
    const double c = std::inner_product(v.begin(), v.end(), r.begin(), 0.0) / phr;
    double norm = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
      v[i] -= c * phi[i];
      norm += v[i] * v[i];
    }
    return std::sqrt(norm);
  };
  double norm = project(z);
  if (!(norm > 0.0)) return 0.0;
  for (double& x : z) x /= norm;

  constexpr std::size_t kWindow = 50;
  double log_growth = 0.0, previous_rate = -1.0, rate = 0.0;
  for (std::size_t it = 1; it <= opt.lambda3_iterations; ++it) {
    left_multiply(t, z, y);
    const double n2 = project(y);
    if (!(n2 > 0.0)) return 0.0;
    log_growth += std::log(n2);
    for (std::size_t i = 0; i < m; ++i) z[i] = y[i] / n2;
    if (it % kWindow == 0) {
      rate = std::exp(log_growth / kWindow);
      log_growth = 0.0;
      if (previous_rate >= 0.0 && std::abs(rate - previous_rate) <= 1e-6) break;
      previous_rate = rate;
    }
  }
  return rate;
}

}  // namespace detail

struct MetastableDistribution {
  double lambda2 = 0.0;
  std::vector<double> phi;  // over states 1..N-1
  double residual = 0.0;    // ||phi^T T-hat - lambda2 phi^T||_1
  bool unique = true;       // false when two starting vectors disagree
  std::size_t iterations = 0;
};

/// Dominant left eigenvector of the non-failure block, normalized to sum 1.
inline MetastableDistribution metastable_distribution(const StochasticMatrix& t,
                                                      const SpectralOptions& opt = {}) {
  t.validate();
  const std::size_t m = t.size() - 1;
  auto first = detail::left_perron(t, std::vector<double>(m, 1.0), opt);
  MetastableDistribution out;
  out.lambda2 = first.lambda;
  out.residual = first.residual;
  out.iterations = first.iterations;

  if (m > 1) {
    std::vector<double> start(m);
    for (std::size_t i = 0; i < m; ++i) start[i] = 1.0 + static_cast<double>(i % 7);
    const auto second = detail::left_perron(t, std::move(start), opt);
    double diff = 0.0;
    for (std::size_t i = 0; i < m; ++i) diff += std::abs(first.vec[i] - second.vec[i]);
    out.unique = diff <= 1e-6;
  }
  out.phi = std::move(first.vec);
  return out;
}

struct Lambda2Result {
  double lambda2 = 0.0;
  double lambda3_bound = 0.0;
  bool gap_ok = false;
};

inline bool gap_condition(double lambda2, double lambda3_bound, double ratio) {
  return (1.0 - lambda2) <= ratio * (1.0 - lambda3_bound);
}

inline Lambda2Result lambda2(const StochasticMatrix& t, const SpectralOptions& opt = {}) {
  const auto md = metastable_distribution(t, opt);
  const auto r = detail::right_perron(t, md.lambda2, opt);
  Lambda2Result out;
  out.lambda2 = md.lambda2;
  out.lambda3_bound = detail::deflated_rate(t, md.phi, r, opt);
  out.gap_ok = gap_condition(out.lambda2, out.lambda3_bound, opt.gap_ratio);
  return out;
}

/// System-wide MFPT from the spectral gap alone: 1 / (1 - lambda2).
inline double eigen_mfpt(double lambda2) {
  if (lambda2 >= 1.0 - kUnitEigenvalueTolerance) return kInfinity;
  const double m = 1.0 / (1.0 - lambda2);
  return m >= kInfiniteSteps ? kInfinity : m;
}

/// Mean first-passage time to failure from every state (m[0] = 0), solving
/// (I - T-hat) m = 1. States that can avoid failure forever get +infinity.
inline std::vector<double> mfpt_vector(const StochasticMatrix& t, const SpectralOptions& opt = {}) {
  t.validate();
  const std::size_t n = t.size();

  // Reverse graph over positive-probability edges.
  std::vector<std::vector<std::uint32_t>> preds(n);
  for (std::size_t i = 1; i < n; ++i)
    for (auto c : t.row_cols(i)) preds[c].push_back(static_cast<std::uint32_t>(i));
  auto reverse_reach = [&](std::vector<char>& mark, std::deque<std::size_t> frontier) {
    while (!frontier.empty()) {
      const std::size_t j = frontier.front();
      frontier.pop_front();
      for (auto i : preds[j])
        if (!mark[i]) {
          mark[i] = 1;
          frontier.push_back(i);
        }
    }
  };
  std::vector<char> reaches_failure(n, 0);
  reaches_failure[0] = 1;
  reverse_reach(reaches_failure, {0});
  // A state that can reach a failure-free state has infinite expected time.
  std::vector<char> infinite(n, 0);
  std::deque<std::size_t> seeds;
  for (std::size_t i = 1; i < n; ++i)
    if (!reaches_failure[i]) {
      infinite[i] = 1;
      seeds.push_back(i);
    }
  reverse_reach(infinite, std::move(seeds));

  std::vector<double> m(n, 0.0);
  std::vector<std::int64_t> local(n, -1);
  std::vector<std::size_t> finite;
  for (std::size_t i = 1; i < n; ++i) {
    if (infinite[i]) {
      m[i] = kInfinity;
    } else {
      local[i] = static_cast<std::int64_t>(finite.size());
      finite.push_back(i);
    }
  }
  const std::size_t k = finite.size();
  if (k == 0) return m;

  Eigen::VectorXd x;
  const Eigen::VectorXd ones = Eigen::VectorXd::Ones(static_cast<Eigen::Index>(k));
  if (k <= opt.dense_limit) {
    Eigen::MatrixXd a = Eigen::MatrixXd::Identity(static_cast<Eigen::Index>(k),
                                                  static_cast<Eigen::Index>(k));
    for (std::size_t r = 0; r < k; ++r) {
      const auto c = t.row_cols(finite[r]);
      const auto p = t.row_vals(finite[r]);
      for (std::size_t e = 0; e < c.size(); ++e)
        if (c[e] != 0) a(static_cast<Eigen::Index>(r), local[c[e]]) -= p[e];
    }
    x = a.partialPivLu().solve(ones);
  } else {
    std::vector<Eigen::Triplet<double>> trips;
    for (std::size_t r = 0; r < k; ++r) {
      const auto c = t.row_cols(finite[r]);
      const auto p = t.row_vals(finite[r]);
      trips.emplace_back(static_cast<int>(r), static_cast<int>(r), 1.0);
      for (std::size_t e = 0; e < c.size(); ++e)
        if (c[e] != 0)
          trips.emplace_back(static_cast<int>(r), static_cast<int>(local[c[e]]), -p[e]);
    }
    Eigen::SparseMatrix<double, Eigen::RowMajor> a(static_cast<Eigen::Index>(k),
                                                   static_cast<Eigen::Index>(k));
    a.setFromTriplets(trips.begin(), trips.end());
    Eigen::BiCGSTAB<Eigen::SparseMatrix<double, Eigen::RowMajor>> solver;
    solver.setTolerance(opt.solve_tolerance);
    solver.setMaxIterations(static_cast<Eigen::Index>(opt.solve_max_iterations));
    solver.compute(a);
    x = solver.solve(ones);
    const double rel = (a * x - ones).norm() / ones.norm();
    if (solver.info() != Eigen::Success || !(rel <= opt.solve_tolerance * 10.0))
      throw ConvergenceError("MFPT iterative solve did not converge after " +
                                 std::to_string(solver.iterations()) + " iterations",
                             rel);
  }
  for (std::size_t r = 0; r < k; ++r) {
    const double v = x(static_cast<Eigen::Index>(r));
    m[finite[r]] = (v >= kInfiniteSteps || !std::isfinite(v)) ? kInfinity : v;
  }
  return m;
}

/// M = sum_i phi_i m_i over the non-failure states.
inline double system_mfpt(std::span<const double> phi, std::span<const double> m) {
  if (m.size() != phi.size() + 1)
    throw InvalidArgument("system_mfpt: phi has " + std::to_string(phi.size()) +
                          " entries, m has " + std::to_string(m.size()) +
                          " (expected one more, for the failure state)");
  double total = 0.0;
  for (std::size_t i = 0; i < phi.size(); ++i) {
    if (phi[i] == 0.0) continue;
    if (std::isinf(m[i + 1])) return kInfinity;
    total += phi[i] * m[i + 1];
  }
  return total >= kInfiniteSteps ? kInfinity : total;
}

/// Probability that failure happens on exactly the n-th step.
inline double n_step_failure_prob(double lambda2, std::size_t n) {
  if (!(lambda2 >= 0.0 && lambda2 <= 1.0)) throw InvalidArgument("lambda2 must be in [0, 1]");
  if (n < 1) throw InvalidArgument("n must be >= 1");
  return std::pow(lambda2, static_cast<double>(n - 1)) * (1.0 - lambda2);
}

/// Non-failure states whose next-step failure probability exceeds `threshold`.
inline std::vector<std::size_t> dangerous_states(const StochasticMatrix& t,
                                                 double threshold = 0.99) {
  if (!(threshold > 0.0 && threshold <= 1.0))
    throw InvalidArgument("dangerous-state threshold must be in (0, 1]");
  std::vector<std::size_t> out;
  for (std::size_t i = 1; i < t.size(); ++i)
    if (t.failure_probability(i) > threshold) out.push_back(i);
  return out;
}

struct SpectralSummary {
  double lambda2 = 0.0;
  double lambda3_bound = 0.0;
  std::vector<double> phi;  // states 1..N-1
  std::vector<double> m;    // states 0..N-1, m[0] = 0
  double M_exact = 0.0;
  double M_eigen = 0.0;
  bool gap_ok = false;
  bool phi_unique = true;
  double residual = 0.0;
  std::size_t iterations = 0;
};

inline SpectralSummary analyze_chain(const StochasticMatrix& t, const SpectralOptions& opt = {}) {
  const auto md = metastable_distribution(t, opt);
  const auto r = detail::right_perron(t, md.lambda2, opt);
  SpectralSummary s;
  s.lambda2 = std::clamp(md.lambda2, 0.0, 1.0);
  s.lambda3_bound = detail::deflated_rate(t, md.phi, r, opt);
  s.gap_ok = gap_condition(s.lambda2, s.lambda3_bound, opt.gap_ratio);
  s.phi = md.phi;
  s.phi_unique = md.unique;
  s.residual = md.residual;
  s.iterations = md.iterations;
  s.m = mfpt_vector(t, opt);
  s.M_exact = system_mfpt(s.phi, s.m);
  s.M_eigen = eigen_mfpt(s.lambda2);
  return s;
}

// ---------------------------------------------------------------------------
// Sensitivity

/// Distribution centred on one disturbance of interest: p_null on the null
/// push, p_interest on the disturbance of interest, the rest split evenly.
struct SensitivityWeights {
  double p_null = 0.4;
  double p_interest = 0.5;
};

struct SensitivityPoint {
  std::size_t disturbance = 0;
  std::vector<double> probabilities;
  double M = 0.0;
  std::string error;

  bool ok() const noexcept { return error.empty(); }
};

inline std::vector<double> sensitivity_distribution(std::size_t n_disturbances,
                                                    std::size_t interest,
                                                    const SensitivityWeights& w) {
  if (n_disturbances < 2) throw InvalidArgument("sensitivity needs at least one non-null push");
  if (interest == 0 || interest >= n_disturbances)
    throw InvalidArgument("disturbance of interest must be a non-null index");
  if (!(w.p_null >= 0.0) || !(w.p_interest >= 0.0))
    throw InvalidArgument("sensitivity weights must be >= 0");
  const double rest = 1.0 - w.p_null - w.p_interest;
  if (rest < -kProbabilityTolerance)
    throw InvalidArgument("p_null + p_interest exceeds 1");
  const std::size_t others = n_disturbances - 2;
  if (others == 0 && std::abs(rest) > kProbabilityTolerance)
    throw InvalidArgument("with a single non-null push p_null + p_interest must equal 1");
  std::vector<double> p(n_disturbances, others == 0 ? 0.0 : std::max(rest, 0.0) / others);
  p[0] = w.p_null;
  p[interest] = w.p_interest;
  return p;
}

/// For every non-null disturbance, M_exact under the distribution centred on
/// it. Failed points carry their error; the sweep continues. Output is in
/// disturbance-index order regardless of `threads`.
inline std::vector<SensitivityPoint> sensitivity_sweep(const TransitionTable& table,
                                                       std::size_t controller,
                                                       const DisturbanceProfile& base,
                                                       const SensitivityWeights& weights = {},
                                                       const SpectralOptions& opt = {},
                                                       unsigned threads = 1) {
  if (base.disturbances.size() != table.n_disturbances)
    throw InvalidArgument("profile length does not match the table's disturbance axis");
  if (base.disturbances.empty() || !base.disturbances[0].is_null)
    throw InvalidArgument("disturbance 0 must be the null push");
  const std::size_t nd = table.n_disturbances;
  // Validate the weights once up front.
  (void)sensitivity_distribution(nd, 1, weights);

  std::vector<SensitivityPoint> out(nd - 1);
  tbb::task_arena arena(static_cast<int>(std::max(1u, threads)));
  arena.execute([&] {
    tbb::parallel_for(std::size_t{1}, nd, [&](std::size_t d) {
      SensitivityPoint& point = out[d - 1];
      point.disturbance = d;
      try {
        point.probabilities = sensitivity_distribution(nd, d, weights);
        const auto profile = with_probabilities(base, point.probabilities,
                                                base.id + "/interest-" + std::to_string(d));
        const auto t = assemble_stochastic(table, controller, profile);
        const auto md = metastable_distribution(t, opt);
        point.M = system_mfpt(md.phi, mfpt_vector(t, opt));
      } catch (const Error& e) {
        point.error = e.what();
      }
    });
  });
  return out;
}

}  // namespace metamesh
