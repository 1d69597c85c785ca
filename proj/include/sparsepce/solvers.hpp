#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "measurement.hpp"
#include "multiindex.hpp"
#include "rng.hpp"

namespace sparsepce {

class RankDeficientError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct IterationTelemetry {
  std::size_t iteration;
  double primal_residual;  // relative
  double dual_residual;    // relative
  double objective;        // ||x||_{1,w} of the current iterate
  double constraint;       // ||A x - y||_2 of the current iterate
  double tau;
  double sigma;
};

struct SolverOptions {
  std::size_t max_iterations = 100'000;
  /// Relative primal/dual residual (and relative duality gap) for convergence.
  double tolerance = 1e-8;
  /// sigma * tau = step_safety^2 / ||K||^2 with ||K|| = 1 (whitened operator).
  double step_safety = 0.99;
  /// Substitute for eta = 0.
  double eta_floor = 1e-12;
  /// Restart from the running average when the KKT error has dropped enough,
  /// re-estimating the primal weight sqrt(sigma / tau) at each restart.
  bool restarts = true;
  /// Initial ratio sigma / tau; 0 selects (||w||_2 / ||y||_2)^2.
  double step_ratio = 0.0;
  /// Iterations between optimality certificate checks.
  std::size_t check_every = 50;
  /// Exact solves on supports guessed from the iterate, with dual certificates.
  bool polish = true;
  std::function<void(const IterationTelemetry&)> telemetry;
  std::size_t telemetry_every = 100;
};

struct SolverResult {
  Vector coefficients;
  double residual_norm = 0;  // ||A d - y||_2
  double objective = 0;      // ||d||_{1,w}
  std::size_t iterations = 0;
  bool converged = false;
  double duality_gap = std::numeric_limits<double>::infinity();  // relative, when certified
  std::string stop_reason;
};

// ---------------------------------------------------------------------------
// Proximal building blocks

/// sign(v_i) max(|v_i| - tau w_i, 0): the proximal map of tau ||.||_{1,w}.
inline Vector weighted_soft_threshold(const Vector& v, double tau, const WeightVector& w) {
  if (!(tau > 0)) throw std::invalid_argument("weighted_soft_threshold: tau must be > 0");
  if (static_cast<std::size_t>(v.size()) != w.size())
    throw std::invalid_argument("weighted_soft_threshold: size mismatch");
  Vector out(v.size());
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    const double t = tau * w.values()[i];
    const double a = std::abs(v[i]);
    out[i] = a > t ? std::copysign(a - t, v[i]) : 0.0;
  }
  return out;
}

/// Euclidean projection of r onto the ball of radius eta about center.
inline Vector project_l2_ball(const Vector& r, const Vector& center, double eta) {
  if (eta < 0) throw std::invalid_argument("project_l2_ball: radius must be >= 0");
  if (r.size() != center.size()) throw std::invalid_argument("project_l2_ball: size mismatch");
  const Vector diff = r - center;
  const double dist = diff.norm();
  if (dist <= eta) return r;
  return center + (eta / dist) * diff;
}

/// Power iteration on A^T A. Stops when the estimate changes by less than
/// 1e-10 relative or after `iterations` steps.
template <typename Derived>
double operator_norm(const Eigen::MatrixBase<Derived>& a, std::size_t iterations = 1000) {
  if (a.size() == 0 || a.cwiseAbs().maxCoeff() == 0.0) throw std::invalid_argument("operator_norm: zero matrix");
  Rng rng(0x6f706e6f726dULL);
  Vector x(a.cols());
  for (Eigen::Index i = 0; i < x.size(); ++i) x[i] = rng.normal();
  x.normalize();
  double est = 0;
  for (std::size_t it = 0; it < iterations; ++it) {
    Vector ax = a * x;
    Vector atax = a.transpose() * ax;
    const double nrm = atax.norm();
    if (nrm == 0) {
      // Start vector in the null space; restart.
      for (Eigen::Index i = 0; i < x.size(); ++i) x[i] = rng.normal();
      x.normalize();
      continue;
    }
    const double next = std::sqrt(ax.squaredNorm());
    x = atax / nrm;
    if (it > 0 && std::abs(next - est) <= 1e-10 * next) {
      est = next;
      break;
    }
    est = next;
  }
  // The Rayleigh estimate from the final vector.
  return std::max(est, (a * x).norm());
}

/// Least-squares solution of min ||A c - y||_2 by Householder QR. Throws
/// RankDeficientError when a diagonal entry of R falls below rank_tol * max.
template <typename Derived>
Vector solve_least_squares(const Eigen::MatrixBase<Derived>& a, const Vector& y, double rank_tol = 1e-12) {
  if (a.rows() != y.size()) throw std::invalid_argument("solve_least_squares: size mismatch");
  if (a.rows() < a.cols()) throw std::invalid_argument("solve_least_squares: need at least as many rows as columns");
  if (a.cols() == 0) return Vector();
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(a);
  const auto rdiag = qr.matrixQR().diagonal().cwiseAbs();
  const double rmax = rdiag.maxCoeff();
  if (!(rmax > 0) || rdiag.minCoeff() <= rank_tol * rmax)
    throw RankDeficientError("solve_least_squares: matrix is rank deficient (min |R_ii| / max = " +
                             std::to_string(rmax > 0 ? rdiag.minCoeff() / rmax : 0.0) + ")");
  return qr.solve(y);
}

/// Smallest singular value, from the eigenvalues of the Gram matrix on the
/// smaller side.
template <typename Derived>
double min_singular_value(const Eigen::MatrixBase<Derived>& m) {
  if (!m.allFinite()) throw std::invalid_argument("min_singular_value: non-finite entries");
  if (m.size() == 0) return 0.0;
  Eigen::MatrixXd g = m.rows() <= m.cols() ? Eigen::MatrixXd(m * m.transpose()) : Eigen::MatrixXd(m.transpose() * m);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(g, Eigen::EigenvaluesOnly);
  return std::sqrt(std::max(es.eigenvalues().minCoeff(), 0.0));
}

/// ||A_S^T A_S - I||_2.
template <typename Derived>
double conditioning_check(const Eigen::MatrixBase<Derived>& a_s) {
  Eigen::MatrixXd g = a_s.transpose() * a_s;
  g.diagonal().array() -= 1.0;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(g, Eigen::EigenvaluesOnly);
  return es.eigenvalues().cwiseAbs().maxCoeff();
}

/// Projection of q onto the ellipsoid {p : ||diag(s) p - c||_2 <= rho}, s > 0.
/// The minimizer is p = (q + mu s o c) / (1 + mu s^2) with mu >= 0 the root
/// of the secular equation ||diag(s) p(mu) - c|| = rho.
inline Vector project_ellipsoid(const Vector& q, const Vector& s, const Vector& c, double rho) {
  if (rho < 0) throw std::invalid_argument("project_ellipsoid: radius must be >= 0");
  const Vector r = s.cwiseProduct(q) - c;
  const double r2 = r.squaredNorm();
  if (r2 <= rho * rho) return q;
  if (rho == 0) return c.cwiseQuotient(s);
  const Vector s2 = s.cwiseAbs2();
  const Vector r2i = r.cwiseAbs2();
  auto phi = [&](double mu) { return (r2i.array() / (1.0 + mu * s2.array()).square()).sum(); };
  // psi(mu) = 1/sqrt(phi(mu)) - 1/rho is increasing and close to linear.
  double lo = 0, hi = 1.0 / s2.maxCoeff();
  while (phi(hi) > rho * rho) {
    lo = hi;
    hi *= 2;
    if (!std::isfinite(hi)) break;
  }
  double mu = hi;
  for (int it = 0; it < 100; ++it) {
    const double f = phi(mu);
    const double psi = 1.0 / std::sqrt(f) - 1.0 / rho;
    if (psi > 0)
      hi = mu;
    else
      lo = mu;
    const double dphi = (-2.0 * s2.array() * r2i.array() / (1.0 + mu * s2.array()).cube()).sum();
    const double dpsi = -0.5 * dphi / (f * std::sqrt(f));
    double next = dpsi > 0 ? mu - psi / dpsi : 0.5 * (lo + hi);
    if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
    if (std::abs(next - mu) <= 1e-15 * mu || hi - lo <= 1e-15 * hi) {
      mu = next;
      break;
    }
    mu = next;
  }
  return (q.array() + mu * s.array() * c.array()) / (1.0 + mu * s2.array());
}

// ---------------------------------------------------------------------------
// Weighted quadratically constrained basis pursuit
//
//   min ||d||_{1,w}  s.t.  ||A d - y||_2 <= eta
//
// With the thin SVD A = U S V^T (rank r) the constraint reads
//   ||S V^T d - U^T y||^2 <= eta^2 - ||(I - U U^T) y||^2,
// so the problem is  min g(d) + h(K d)  with K = V^T (orthonormal rows),
// g = ||.||_{1,w} and h the indicator of an axis-aligned ellipsoid E.
// Primal-dual hybrid gradient on that form:
//
//   d+ = prox_{tau g}(d - tau K^T v)            (weighted soft threshold)
//   v+ = u - sigma P_E(u / sigma),  u = v + sigma K (2 d+ - d)
//
// With ||K|| = 1 the step sizes do not depend on the conditioning of A.
// Dual problem of the whitened form:
//   max  -<v, S^{-1} U^T y> - rho ||S^{-1} v||  s.t.  |K^T v|_i <= w_i.

class WeightedBasisPursuit {
 public:
  /// Factorizes A once; solves for any number of (y, w, eta) afterwards.
  explicit WeightedBasisPursuit(Matrix a, double rank_tol = 1e-12) : a_(std::move(a)) {
    if (a_.size() == 0) throw std::invalid_argument("WeightedBasisPursuit: empty matrix");
    if (!a_.allFinite()) throw std::invalid_argument("WeightedBasisPursuit: non-finite matrix");
    const auto m = a_.rows(), n = a_.cols();
    if (m <= n) {
      Eigen::MatrixXd g = a_ * a_.transpose();
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(g);
      const Vector lam = es.eigenvalues();
      const double lmax = std::max(lam.maxCoeff(), 0.0);
      if (!(lmax > 0)) throw std::invalid_argument("WeightedBasisPursuit: zero matrix");
      std::vector<Eigen::Index> keep;
      for (Eigen::Index i = lam.size() - 1; i >= 0; --i)
        if (lam[i] > rank_tol * lmax) keep.push_back(i);
      const auto r = static_cast<Eigen::Index>(keep.size());
      sv_.resize(r);
      u_.resize(m, r);
      for (Eigen::Index j = 0; j < r; ++j) {
        sv_[j] = std::sqrt(lam[keep[static_cast<std::size_t>(j)]]);
        u_.col(j) = es.eigenvectors().col(keep[static_cast<std::size_t>(j)]);
      }
      k_ = sv_.cwiseInverse().asDiagonal() * (u_.transpose() * a_);
    } else {
      Eigen::MatrixXd g = a_.transpose() * a_;
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(g);
      const Vector lam = es.eigenvalues();
      const double lmax = std::max(lam.maxCoeff(), 0.0);
      if (!(lmax > 0)) throw std::invalid_argument("WeightedBasisPursuit: zero matrix");
      std::vector<Eigen::Index> keep;
      for (Eigen::Index i = lam.size() - 1; i >= 0; --i)
        if (lam[i] > rank_tol * lmax) keep.push_back(i);
      const auto r = static_cast<Eigen::Index>(keep.size());
      sv_.resize(r);
      k_.resize(r, n);
      for (Eigen::Index j = 0; j < r; ++j) {
        sv_[j] = std::sqrt(lam[keep[static_cast<std::size_t>(j)]]);
        k_.row(j) = es.eigenvectors().col(keep[static_cast<std::size_t>(j)]).transpose();
      }
      u_ = (a_ * k_.transpose()) * sv_.cwiseInverse().asDiagonal();
    }
  }

  const Matrix& matrix() const noexcept { return a_; }
  std::size_t rank() const noexcept { return static_cast<std::size_t>(sv_.size()); }
  const Vector& singular_values() const noexcept { return sv_; }

  SolverResult solve(const Vector& y_in, const WeightVector& w, double eta_in, const SolverOptions& opts = {}) const;

 private:
  Matrix a_;
  Matrix k_;        // r x n, orthonormal rows
  Eigen::MatrixXd u_;  // m x r
  Vector sv_;       // r, descending
};

namespace detail {

inline double weighted_l1(const Vector& x, const WeightVector& w) { return w.values().cwiseProduct(x.cwiseAbs()).sum(); }

// Largest s in (0,1] with |s z_i| <= w_i for all i.
inline double dual_scale(const Vector& z, const WeightVector& w) {
  const double viol = (z.cwiseAbs().array() / w.values().array()).maxCoeff();
  return viol > 1.0 ? 1.0 / viol : 1.0;
}

inline void soft_threshold_inplace(Vector& x, double tau, const WeightVector& w) {
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double t = tau * w.values()[i];
    const double a = std::abs(x[i]);
    x[i] = a > t ? std::copysign(a - t, x[i]) : 0.0;
  }
}

}  // namespace detail

inline SolverResult WeightedBasisPursuit::solve(const Vector& y_in, const WeightVector& w, double eta_in,
                                                const SolverOptions& opts) const {
  const auto m = a_.rows();
  const auto n = a_.cols();
  const auto r = static_cast<Eigen::Index>(rank());
  if (y_in.size() != m || static_cast<Eigen::Index>(w.size()) != n)
    throw std::invalid_argument("solve_wqcbp: dimension mismatch");
  if (!(eta_in >= 0) || !std::isfinite(eta_in)) throw std::invalid_argument("solve_wqcbp: eta must be finite and >= 0");
  if (!y_in.allFinite()) throw std::invalid_argument("solve_wqcbp: non-finite right-hand side");
  if (opts.max_iterations < 1 || !(opts.tolerance > 0) || !(opts.step_safety > 0 && opts.step_safety < 1))
    throw std::invalid_argument("solve_wqcbp: invalid options");

  const double eta_user = std::max(eta_in, opts.eta_floor);
  const double feas_tol = eta_user * (1 + 1e-6) + 1e-10;

  SolverResult res;
  const double ynorm = y_in.norm();
  if (ynorm <= eta_user) {
    res.coefficients = Vector::Zero(n);
    res.residual_norm = ynorm;
    res.converged = true;
    res.duality_gap = 0;
    res.stop_reason = "zero_feasible";
    return res;
  }

  // Normalize the data so the iteration does not depend on the scale of y.
  const double scale = ynorm;
  const Vector y = y_in / scale;
  const double eta = eta_user / scale;
  const Vector yhat = u_.transpose() * y;
  // Distance from y to range(A), computed directly so round-off stays at eps, not sqrt(eps).
  const double yperp = r == m ? 0.0 : (y - u_ * yhat).norm();
  const Vector c_over_s = yhat.cwiseQuotient(sv_);
  const Vector inv_s = sv_.cwiseInverse();

  if (yperp > eta * (1 + 1e-12) + 1e-12) {
    // y is farther than eta from range(A): no feasible point exists.
    res.coefficients = k_.transpose() * c_over_s * scale;
    res.residual_norm = (a_ * res.coefficients - y_in).norm();
    res.objective = detail::weighted_l1(res.coefficients, w);
    res.stop_reason = "infeasible";
    return res;
  }
  const double rho = std::sqrt(std::max(0.0, eta * eta - yperp * yperp));
  auto proj = [&](const Vector& q) { return project_ellipsoid(q, sv_, yhat, rho); };

  double omega = opts.step_ratio > 0 ? std::sqrt(opts.step_ratio) : w.values().norm() / std::max(yhat.norm(), 1e-300);
  double tau = opts.step_safety / omega, sigma = opts.step_safety * omega;

  Vector x = Vector::Zero(n), q = Vector::Zero(r), v = Vector::Zero(r), ktv = Vector::Zero(n);
  Vector x_new(n), q_new(r), v_new(r), ktv_new(n), u(r);
  // Running sums since the last restart, and the restart anchor.
  Vector xs = Vector::Zero(n), qs = Vector::Zero(r), vs = Vector::Zero(r), ktvs = Vector::Zero(n);
  Vector x0 = x, v0 = v;
  std::size_t since_restart = 0;

  Vector best;
  double best_obj = std::numeric_limits<double>::infinity();
  double best_dual = -std::numeric_limits<double>::infinity();

  const double orig_tol = eta * (1 + 1e-6) + 1e-10 / scale;
  auto consider = [&](const Vector& cand) {
    const double rr = (a_ * cand - y).norm();
    if (rr > orig_tol) return;
    const double obj = detail::weighted_l1(cand, w);
    if (obj < best_obj) {
      best_obj = obj;
      best = cand;
    }
  };
  auto restore = [&](const Vector& xx, const Vector& qq) { return Vector(xx + k_.transpose() * (proj(qq) - qq)); };
  auto whitened_dual = [&](const Vector& vv, const Vector& ktvv) {
    const double s = detail::dual_scale(ktvv, w);
    return s * (-vv.dot(c_over_s) - rho * inv_s.cwiseProduct(vv).norm());
  };

  // Normalized KKT error: constraint violation, dual infeasibility, duality gap.
  auto kkt_error = [&](const Vector& xx, const Vector& qq, const Vector& vv, const Vector& ktvv) {
    const double p_inf = (qq - proj(qq)).norm();
    const double d_inf = ((ktvv.cwiseAbs() - w.values()).cwiseMax(0.0)).norm() / w.values().norm();
    const double obj = detail::weighted_l1(xx, w);
    const double dual = -vv.dot(c_over_s) - rho * inv_s.cwiseProduct(vv).norm();
    const double gap = std::abs(obj - dual) / (1.0 + std::abs(obj) + std::abs(dual));
    return std::sqrt(p_inf * p_inf + d_inf * d_inf + gap * gap);
  };

  // Exact solve on a guessed support S with fixed signs s. Minimizing
  // ||z||_{1,w} over ||A_S z - y|| <= eta with signs fixed has the closed form
  //   z = z_ls - t G^{-1}(w_S o s),  t = sqrt(eta^2 - ||r_ls||^2) / ||A_S G^{-1}(w_S o s)||,
  // G = A_S^T A_S, and nu = q - r_ls / t with q = A_S G^{-1}(w_S o s) is the
  // matching dual point (A_S^T nu = w_S o s). q alone certifies the eta -> 0 limit.
  // The original-coordinate dual reads max <y, nu> - eta ||nu|| s.t. |A^T nu|_i <= w_i.
  // Returns the indices whose sign disagreed with s.
  std::size_t it = 0;
  auto polish_support = [&](const std::vector<Eigen::Index>& support, const Vector& signs, Vector& zs) {
    std::vector<std::size_t> mismatched;
    const auto k = static_cast<Eigen::Index>(support.size());
    if (k == 0 || k > m) return mismatched;
    Eigen::MatrixXd as(m, k);
    for (Eigen::Index j = 0; j < k; ++j) as.col(j) = a_.col(support[static_cast<std::size_t>(j)]);
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(as);
    const auto rdiag = qr.matrixQR().diagonal().cwiseAbs();
    if (rdiag.minCoeff() <= 1e-10 * rdiag.maxCoeff()) return mismatched;
    const auto rt = qr.matrixQR().topLeftCorner(k, k).template triangularView<Eigen::Upper>();
    const Vector z_ls = qr.solve(y);
    const Vector r_ls = as * z_ls - y;
    const double r_ls2 = r_ls.squaredNorm();
    if (r_ls2 > eta * eta) return mismatched;
    Vector ws(k);
    for (Eigen::Index j = 0; j < k; ++j) ws[j] = signs[j] * w.values()[support[static_cast<std::size_t>(j)]];
    Vector p = rt.transpose().solve(ws);
    p = rt.solve(p);
    const Vector qv = as * p;
    const double qn = qv.norm();
    const double t = qn > 0 ? std::sqrt(eta * eta - r_ls2) / qn : 0.0;
    zs = z_ls - t * p;
    for (Eigen::Index j = 0; j < k; ++j)
      if (zs[j] * signs[j] < 0) mismatched.push_back(static_cast<std::size_t>(j));
    Vector z = Vector::Zero(n);
    for (Eigen::Index j = 0; j < k; ++j) z[support[static_cast<std::size_t>(j)]] = zs[j];
    consider(z);
    consider(restore(z, k_ * z));
    auto dual_orig = [&](const Vector& nu) {
      const double sc = detail::dual_scale(a_.transpose() * nu, w);
      return sc * (y.dot(nu) - eta * nu.norm());
    };
    best_dual = std::max(best_dual, dual_orig(qv));
    if (t > 0) best_dual = std::max(best_dual, dual_orig(qv - r_ls / t));
    return mismatched;
  };

  // Support guesses: the m most active dual constraints, the dual
  // constraints active to within delta, and the large entries of the iterate.
  // Signs come from the iterate, or from -sign(K^T v) where it vanishes.
  auto polish = [&]() {
    std::vector<std::pair<double, Eigen::Index>> ratio;
    ratio.reserve(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) ratio.emplace_back(std::abs(ktv[i]) / w.values()[i], i);
    std::sort(ratio.begin(), ratio.end(), [](const auto& lhs, const auto& rhs) { return lhs.first > rhs.first; });
    const double top = std::max(ratio.front().first, 1.0);
    const double xmax = x.cwiseAbs().maxCoeff();
    std::vector<std::vector<Eigen::Index>> guesses;
    auto add_guess = [&](std::vector<Eigen::Index> g) {
      if (g.empty() || static_cast<Eigen::Index>(g.size()) > m) return;
      std::sort(g.begin(), g.end());
      if (std::find(guesses.begin(), guesses.end(), g) == guesses.end()) guesses.push_back(std::move(g));
    };
    {
      std::vector<Eigen::Index> g;
      for (Eigen::Index j = 0; j < std::min(m, n); ++j) g.push_back(ratio[static_cast<std::size_t>(j)].second);
      add_guess(std::move(g));
    }
    for (double delta : {1e-2, 1e-3, 1e-4}) {
      std::vector<Eigen::Index> g;
      for (const auto& [rv, i] : ratio) {
        if (rv < top * (1 - delta)) break;
        g.push_back(i);
      }
      add_guess(std::move(g));
      std::vector<Eigen::Index> h;
      for (Eigen::Index i = 0; i < n; ++i)
        if (std::abs(x[i]) > delta * xmax) h.push_back(i);
      add_guess(std::move(h));
    }
    for (auto support : guesses) {
      Vector signs(static_cast<Eigen::Index>(support.size()));
      for (std::size_t j = 0; j < support.size(); ++j) {
        const auto i = support[j];
        signs[static_cast<Eigen::Index>(j)] = x[i] != 0 ? (x[i] > 0 ? 1.0 : -1.0) : (ktv[i] > 0 ? -1.0 : 1.0);
      }
      for (int round = 0; round < 6 && !support.empty(); ++round) {
        Vector zs;
        const auto bad = polish_support(support, signs, zs);
        if (bad.empty()) break;
        if (round % 2 == 0) {
          // Adopt the signs of the solve, then drop what still disagrees.
          for (auto j : bad) signs[static_cast<Eigen::Index>(j)] = -signs[static_cast<Eigen::Index>(j)];
          continue;
        }
        std::vector<Eigen::Index> kept;
        std::vector<double> kept_signs;
        for (std::size_t j = 0, b = 0; j < support.size(); ++j) {
          if (b < bad.size() && bad[b] == j) {
            ++b;
            continue;
          }
          kept.push_back(support[j]);
          kept_signs.push_back(signs[static_cast<Eigen::Index>(j)]);
        }
        support = std::move(kept);
        signs = Eigen::Map<Vector>(kept_signs.data(), static_cast<Eigen::Index>(kept_signs.size()));
      }
      if (std::isfinite(best_obj) && best_obj - best_dual <= opts.tolerance * best_obj) return;
    }
  };

  std::size_t polish_interval = opts.check_every;
  std::size_t next_polish = opts.check_every;
  std::string reason = "max_iterations";
  bool residual_converged = false;
  double err_anchor = std::numeric_limits<double>::infinity();
  double err_last = std::numeric_limits<double>::infinity();

  while (it < opts.max_iterations) {
    ++it;
    ++since_restart;
    x_new = x - tau * ktv;
    detail::soft_threshold_inplace(x_new, tau, w);
    q_new.noalias() = k_ * x_new;
    u = v + sigma * (2.0 * q_new - q);
    v_new = u - sigma * proj(u / sigma);
    ktv_new.noalias() = k_.transpose() * v_new;

    const double p_abs = ((x - x_new) / tau - (ktv - ktv_new)).norm();
    const double d_abs = ((v - v_new) / sigma - (q - q_new)).norm();
    const double p_rel = p_abs / std::max({ktv_new.norm(), 1e-300});
    const double d_rel = d_abs / std::max({q_new.norm(), yhat.norm(), 1e-300});

    x.swap(x_new);
    q.swap(q_new);
    v.swap(v_new);
    ktv.swap(ktv_new);
    xs += x;
    qs += q;
    vs += v;
    ktvs += ktv;

    if (opts.telemetry && it % opts.telemetry_every == 0) {
      const double constraint2 = (sv_.cwiseProduct(q) - yhat).squaredNorm();
      opts.telemetry({it, p_rel, d_rel, detail::weighted_l1(x, w) * scale, std::sqrt(constraint2 + yperp * yperp) * scale,
                      tau, sigma});
    }

    if (p_rel <= opts.tolerance && d_rel <= opts.tolerance) {
      residual_converged = true;
      reason = "residuals";
      break;
    }

    if (it % opts.check_every == 0) {
      const double inv = 1.0 / static_cast<double>(since_restart);
      const Vector xa = xs * inv, qa = qs * inv, va = vs * inv, ktva = ktvs * inv;
      const double err_cur = kkt_error(x, q, v, ktv);
      const double err_avg = kkt_error(xa, qa, va, ktva);
      const bool use_avg = err_avg < err_cur;
      const double err = std::min(err_cur, err_avg);
      consider(restore(x, q));
      best_dual = std::max(best_dual, whitened_dual(v, ktv));
      if (use_avg) {
        consider(restore(xa, qa));
        best_dual = std::max(best_dual, whitened_dual(va, ktva));
      }

      if (opts.restarts &&
          (err <= 0.2 * err_anchor || (err <= 0.8 * err_anchor && err > err_last) || since_restart >= it * 36 / 100)) {
        if (use_avg) {
          x = xa;
          q = qa;
          v = va;
          ktv = ktva;
        }
        const double dx = (x - x0).norm(), dv = (v - v0).norm();
        if (dx > 1e-10 && dv > 1e-10) {
          omega = std::exp(0.5 * std::log(dv / dx) + 0.5 * std::log(omega));
          tau = opts.step_safety / omega;
          sigma = opts.step_safety * omega;
        }
        x0 = x;
        v0 = v;
        xs.setZero();
        qs.setZero();
        vs.setZero();
        ktvs.setZero();
        since_restart = 0;
        err_anchor = err;
        err_last = std::numeric_limits<double>::infinity();
      } else {
        err_last = err;
      }

      if (opts.polish && it >= next_polish) {
        polish();
        if (best_obj - best_dual > opts.tolerance * best_obj)
          polish_interval = std::min<std::size_t>(polish_interval * 2, 32 * opts.check_every);
        next_polish = it + polish_interval;
      }
      if (std::isfinite(best_obj) && best_obj - best_dual <= opts.tolerance * best_obj) {
        reason = "duality_gap";
        break;
      }
    }
  }

  consider(restore(x, q));
  best_dual = std::max(best_dual, whitened_dual(v, ktv));

  res.iterations = it;
  res.stop_reason = reason;
  if (best.size() == n) {
    res.coefficients = best * scale;
    res.duality_gap = std::max(0.0, best_obj - best_dual) / std::max(best_obj, 1e-300);
  } else {
    res.coefficients = x * scale;
  }
  res.residual_norm = (a_ * res.coefficients - y_in).norm();
  res.objective = detail::weighted_l1(res.coefficients, w);
  res.converged = res.residual_norm <= feas_tol && (residual_converged || reason == "duality_gap");
  return res;
}

/// One-shot convenience around WeightedBasisPursuit.
inline SolverResult solve_wqcbp(const Matrix& a, const Vector& y, const WeightVector& w, double eta,
                                const SolverOptions& opts = {}) {
  if (!a.allFinite()) throw std::invalid_argument("solve_wqcbp: non-finite matrix");
  return WeightedBasisPursuit(a).solve(y, w, eta, opts);
}

}  // namespace sparsepce
