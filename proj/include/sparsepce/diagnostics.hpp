#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "basis_spec.hpp"
#include "estimators.hpp"
#include "measurement.hpp"
#include "multiindex.hpp"
#include "polybasis.hpp"
#include "rng.hpp"
#include "solvers.hpp"

namespace sparsepce {

inline constexpr std::size_t default_mc_points = 100'000;

struct ErrorReport {
  double l2_error = 0;
  double linf_error = 0;
  std::size_t mc_points = 0;
  std::uint64_t seed = 0;
};

namespace detail {

// Surrogate restricted to its nonzero coefficients; evaluation cost scales
// with the support instead of |Lambda|.
inline Surrogate compact(const Surrogate& s) {
  std::vector<MultiIndex> idx;
  std::vector<double> c;
  for (std::size_t k = 0; k < s.index_set.size(); ++k)
    if (s.coefficients[static_cast<Eigen::Index>(k)] != 0.0) {
      idx.push_back(s.index_set[k]);
      c.push_back(s.coefficients[static_cast<Eigen::Index>(k)]);
    }
  if (idx.empty()) return Surrogate(s.basis, IndexSet(s.basis.dim, {MultiIndex(s.basis.dim)}), Vector::Zero(1));
  // IndexSet sorts canonically; idx is already a subsequence of a sorted set.
  return Surrogate(s.basis, IndexSet(s.basis.dim, idx), Eigen::Map<Vector>(c.data(), static_cast<Eigen::Index>(c.size())));
}

inline Vector pointwise_error(const TargetFunction& f, const Surrogate& s, const PointSet& pts) {
  return sample_values(f, pts) - evaluate_surrogate(compact(s), pts);
}

}  // namespace detail

/// sqrt((1/N) sum_j |f(z_j) - f~(z_j)|^2) over N draws from the basis measure.
inline double error_l2_mc(const TargetFunction& f, const Surrogate& s, std::size_t n_points, Rng& rng) {
  if (n_points < 1) throw std::invalid_argument("error_l2_mc: N must be >= 1");
  const PointSet pts = sample_measure(s.basis, n_points, rng);
  return std::sqrt(detail::pointwise_error(f, s, pts).squaredNorm() / static_cast<double>(n_points));
}

/// max_j |f(z_j) - f~(z_j)| over N uniform points; a lower bound on the sup norm.
inline double error_linf_mc(const TargetFunction& f, const Surrogate& s, std::size_t n_points, Rng& rng) {
  if (n_points < 1) throw std::invalid_argument("error_linf_mc: N must be >= 1");
  const PointSet pts = sample_uniform(s.basis.dim, n_points, rng);
  return detail::pointwise_error(f, s, pts).cwiseAbs().maxCoeff();
}

/// Both errors from the "l2" and "linf" streams of `rng`. For Legendre the
/// basis measure is uniform, so one point set serves both.
inline ErrorReport error_report(const TargetFunction& f, const Surrogate& s, std::size_t n_points, const Rng& rng) {
  if (n_points < 1) throw std::invalid_argument("error_report: N must be >= 1");
  ErrorReport rep;
  rep.mc_points = n_points;
  rep.seed = rng.key();
  Rng l2_rng = rng.derive("l2");
  const PointSet pts = sample_measure(s.basis, n_points, l2_rng);
  const Vector e = detail::pointwise_error(f, s, pts);
  rep.l2_error = std::sqrt(e.squaredNorm() / static_cast<double>(n_points));
  if (s.basis.family == Family::legendre) {
    rep.linf_error = e.cwiseAbs().maxCoeff();
  } else {
    Rng linf_rng = rng.derive("linf");
    rep.linf_error = error_linf_mc(f, s, n_points, linf_rng);
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Robustness constant

enum class QuMass {
  sum_weights,          // |Lambda|_u = sum_i u_i
  sum_squared_weights,  // |Lambda|_u = sum_i u_i^2
};

/// Q_u(A) = sqrt(|Lambda|_u / n) / sigma_min(sqrt(m/n) A^T).
inline double qu_constant(const Matrix& a, const IndexSet& set, const BasisSpec& basis,
                          QuMass mass = QuMass::sum_weights) {
  const auto m = a.rows(), n = a.cols();
  if (static_cast<std::size_t>(n) != set.size()) throw std::invalid_argument("qu_constant: A does not match Lambda");
  if (m > n) throw std::invalid_argument("qu_constant: need m <= n");
  const WeightVector u = intrinsic_weights(set, basis.family, 1.0);
  const double lambda_u = mass == QuMass::sum_weights ? u.values().sum() : u.values().squaredNorm();
  const double scale = std::sqrt(static_cast<double>(m) / static_cast<double>(n));
  const double smin = scale * min_singular_value(a);
  const double smax = scale * operator_norm(a);
  if (!(smin > 1e-12 * smax)) throw RankDeficientError("qu_constant: A is rank deficient");
  return std::sqrt(lambda_u / static_cast<double>(n)) / smin;
}

/// Smallest eigenvalue of the average of (m/n) A A^T over independent draws.
inline double empirical_gram_min_eig(const BasisSpec& basis, const IndexSet& set, std::size_t m, std::size_t trials,
                                     Rng& rng) {
  if (trials < 1) throw std::invalid_argument("empirical_gram_min_eig: trials must be >= 1");
  if (m < 1) throw std::invalid_argument("empirical_gram_min_eig: m must be >= 1");
  const auto mi = static_cast<Eigen::Index>(m);
  const double n = static_cast<double>(set.size());
  Eigen::MatrixXd acc = Eigen::MatrixXd::Zero(mi, mi);
  for (std::size_t t = 0; t < trials; ++t) {
    const Matrix phi = basis_matrix(set, basis, sample_measure(basis, m, rng));
    // (m/n) A A^T with A = phi / sqrt(m) is phi phi^T / n.
    acc.noalias() += phi * phi.transpose();
  }
  acc /= n * static_cast<double>(trials);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(acc, Eigen::EigenvaluesOnly);
  return es.eigenvalues().minCoeff();
}

// ---------------------------------------------------------------------------
// Restricted isometry constants by enumeration

struct RicGuard {
  std::size_t max_columns = 60;
  std::uint64_t max_supports = 5'000'000;
};

namespace detail {

inline double gram_deviation(const Matrix& a, const std::vector<Eigen::Index>& cols) {
  Eigen::MatrixXd as(a.rows(), static_cast<Eigen::Index>(cols.size()));
  for (std::size_t j = 0; j < cols.size(); ++j) as.col(static_cast<Eigen::Index>(j)) = a.col(cols[j]);
  return conditioning_check(as);
}

// Visits every subset of {0..n-1} with sum cost <= budget that is maximal
// (no further column fits).
inline void visit_maximal_supports(const std::vector<double>& cost, double budget,
                                   const std::function<void(const std::vector<Eigen::Index>&)>& visit,
                                   std::uint64_t max_supports) {
  const auto n = static_cast<Eigen::Index>(cost.size());
  std::vector<Eigen::Index> chosen;
  std::vector<char> in(cost.size(), 0);
  std::uint64_t visited = 0;
  constexpr double slack = 1e-9;
  std::function<void(Eigen::Index, double)> rec = [&](Eigen::Index next, double used) {
    if (next == n) {
      for (Eigen::Index j = 0; j < n; ++j)
        if (!in[static_cast<std::size_t>(j)] && used + cost[static_cast<std::size_t>(j)] <= budget + slack) return;
      if (chosen.empty()) return;
      if (++visited > max_supports) throw std::length_error("restricted isometry enumeration exceeds guard");
      visit(chosen);
      return;
    }
    const double c = cost[static_cast<std::size_t>(next)];
    if (used + c <= budget + slack) {
      chosen.push_back(next);
      in[static_cast<std::size_t>(next)] = 1;
      rec(next + 1, used + c);
      in[static_cast<std::size_t>(next)] = 0;
      chosen.pop_back();
    }
    rec(next + 1, used);
  };
  rec(0, 0.0);
}

}  // namespace detail

/// delta_{k,L}: max ||A_S^T A_S - I||_2 over supports S of Lambda with
/// sum_{i in S} u_i^2 <= s_k. The maximum is attained on maximal supports.
inline double lower_ric_bruteforce(const Matrix& a, const WeightVector& u, double s_k, RicGuard guard = {}) {
  if (u.size() != static_cast<std::size_t>(a.cols())) throw std::invalid_argument("lower_ric_bruteforce: size mismatch");
  if (u.size() > guard.max_columns)
    throw std::length_error("lower_ric_bruteforce: " + std::to_string(u.size()) + " columns exceeds guard of " +
                            std::to_string(guard.max_columns));
  std::vector<double> cost(u.size());
  for (std::size_t j = 0; j < u.size(); ++j) cost[j] = u[j] * u[j];
  double delta = 0;
  detail::visit_maximal_supports(
      cost, s_k, [&](const std::vector<Eigen::Index>& s) { delta = std::max(delta, detail::gram_deviation(a, s)); },
      guard.max_supports);
  return delta;
}

/// Lower RIC with u the intrinsic weights of `basis` and s(k) by enumeration of lower sets.
inline double lower_ric_bruteforce(const Matrix& a, const IndexSet& set, std::size_t k, const BasisSpec& basis,
                                   RicGuard guard = {}) {
  if (set.size() != static_cast<std::size_t>(a.cols())) throw std::invalid_argument("lower_ric_bruteforce: A does not match Lambda");
  const double s_k = max_lower_weighted_cardinality(basis.dim, k, basis.family, SkMode::brute_force);
  return lower_ric_bruteforce(a, intrinsic_weights(set, basis.family, 1.0), s_k, guard);
}

/// delta_k: max ||A_S^T A_S - I||_2 over supports with |S| <= k.
inline double classical_ric_bruteforce(const Matrix& a, std::size_t k, RicGuard guard = {}) {
  if (static_cast<std::size_t>(a.cols()) > guard.max_columns)
    throw std::length_error("classical_ric_bruteforce: column count exceeds guard");
  const std::vector<double> cost(static_cast<std::size_t>(a.cols()), 1.0);
  double delta = 0;
  detail::visit_maximal_supports(
      cost, static_cast<double>(k),
      [&](const std::vector<Eigen::Index>& s) { delta = std::max(delta, detail::gram_deviation(a, s)); },
      guard.max_supports);
  return delta;
}

/// Q_u(A) max(e_norm - eta, 0) k^(alpha/2), alpha = 1 (Chebyshev) or 2
/// (Legendre). The logarithmic factor of the full bound is not included.
inline double tail_term_bound(const Matrix& a, const IndexSet& set, const BasisSpec& basis, double e_norm, double eta,
                              std::size_t k, QuMass mass = QuMass::sum_weights) {
  if (!(e_norm >= 0) || !(eta >= 0)) throw std::invalid_argument("tail_term_bound: norms must be >= 0");
  const double alpha = basis.family == Family::chebyshev ? 1.0 : 2.0;
  const double excess = std::max(e_norm - eta, 0.0);
  if (excess == 0) return 0.0;
  return qu_constant(a, set, basis, mass) * excess * std::pow(static_cast<double>(k), alpha / 2);
}

}  // namespace sparsepce
