#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "basis_spec.hpp"
#include "multiindex.hpp"
#include "rng.hpp"

namespace sparsepce {

/// m x d block of sample points, one point per row.
using PointSet = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

namespace detail {

inline void check_unit_interval(double z) {
  if (!(std::abs(z) <= 1.0)) throw std::domain_error("polynomial argument outside [-1,1]: " + std::to_string(z));
}

// Coefficients of the orthonormal Legendre recurrence
//   q_{n+1} = a_n z q_n - b_n q_{n-1},  q_n = sqrt(2n+1) P_n.
inline double legendre_a(unsigned n) {
  return std::sqrt((2.0 * n + 3.0) * (2.0 * n + 1.0)) / (n + 1.0);
}
inline double legendre_b(unsigned n) {
  return n == 0 ? 0.0 : n * std::sqrt((2.0 * n + 3.0) / (2.0 * n - 1.0)) / (n + 1.0);
}

}  // namespace detail

/// Orthonormal univariate polynomial of the given degree at z in [-1,1].
inline double eval_1d(Family family, unsigned degree, double z) {
  detail::check_unit_interval(z);
  if (degree == 0) return 1.0;
  if (family == Family::chebyshev) return std::numbers::sqrt2 * std::cos(degree * std::acos(z));
  double prev = 1.0;
  double cur = std::sqrt(3.0) * z;
  for (unsigned n = 1; n < degree; ++n) {
    const double next = detail::legendre_a(n) * z * cur - detail::legendre_b(n) * prev;
    prev = cur;
    cur = next;
  }
  return cur;
}

/// Fills out[0..max_degree] with phi_0(z), ..., phi_max_degree(z).
inline void eval_1d_all(Family family, unsigned max_degree, double z, std::span<double> out) {
  detail::check_unit_interval(z);
  if (out.size() < max_degree + 1u) throw std::invalid_argument("eval_1d_all: output too small");
  out[0] = 1.0;
  if (max_degree == 0) return;
  if (family == Family::chebyshev) {
    const double theta = std::acos(z);
    for (unsigned n = 1; n <= max_degree; ++n) out[n] = std::numbers::sqrt2 * std::cos(n * theta);
    return;
  }
  out[1] = std::sqrt(3.0) * z;
  for (unsigned n = 1; n < max_degree; ++n)
    out[n + 1] = detail::legendre_a(n) * z * out[n] - detail::legendre_b(n) * out[n - 1];
}

inline double eval_tensor(const MultiIndex& i, std::span<const double> z, const BasisSpec& basis) {
  if (i.dim() != basis.dim || z.size() != basis.dim)
    throw std::invalid_argument("eval_tensor: dimension mismatch");
  double v = 1.0;
  for (std::size_t j = 0; j < basis.dim; ++j) v *= eval_1d(basis.family, i[j], z[j]);
  return v;
}

/// Evaluates every basis function of `set` at every row of `points`:
/// out(r, k) = phi_{set[k]}(points.row(r)).
template <typename Out>
void eval_basis_matrix(const IndexSet& set, const PointSet& points, const BasisSpec& basis, Out& out) {
  if (set.dim() != basis.dim || static_cast<std::size_t>(points.cols()) != basis.dim)
    throw std::invalid_argument("eval_basis_matrix: dimension mismatch");
  const unsigned maxdeg = set.max_degree();
  const auto d = static_cast<Eigen::Index>(basis.dim);
  const auto stride = static_cast<Eigen::Index>(maxdeg) + 1;
  std::vector<double> table(static_cast<std::size_t>(d * stride));
  for (Eigen::Index r = 0; r < points.rows(); ++r) {
    for (Eigen::Index j = 0; j < d; ++j)
      eval_1d_all(basis.family, maxdeg, points(r, j),
                  std::span<double>(table.data() + j * stride, static_cast<std::size_t>(stride)));
    for (std::size_t k = 0; k < set.size(); ++k) {
      const auto& idx = set[k];
      double v = 1.0;
      for (Eigen::Index j = 0; j < d; ++j) v *= table[static_cast<std::size_t>(j * stride + idx[static_cast<std::size_t>(j)])];
      out(r, static_cast<Eigen::Index>(k)) = v;
    }
  }
}

/// Grid maximum of |phi_i| over [-1,1]^d. The tensor structure lets the
/// search factor per coordinate: sup |prod f_j| = prod sup |f_j|.
inline double sup_norm_consistency(const MultiIndex& i, const BasisSpec& basis, std::size_t grid_points = 10'000) {
  if (i.dim() != basis.dim) throw std::invalid_argument("sup_norm_consistency: dimension mismatch");
  if (grid_points < 2) throw std::invalid_argument("sup_norm_consistency: need at least 2 grid points");
  double result = 1.0;
  for (auto deg : i) {
    double best = 0.0;
    for (std::size_t g = 0; g < grid_points; ++g) {
      const double z = std::clamp(-1.0 + 2.0 * static_cast<double>(g) / static_cast<double>(grid_points - 1), -1.0, 1.0);
      best = std::max(best, std::abs(eval_1d(basis.family, deg, z)));
    }
    result *= best;
  }
  return result;
}

/// m i.i.d. draws from the basis measure. Legendre: uniform on (-1,1)^d.
/// Chebyshev: z = cos(pi U) with U uniform on (0,1), which has the arcsine law.
inline PointSet sample_measure(const BasisSpec& basis, std::size_t m, Rng& rng) {
  if (m == 0) throw std::invalid_argument("sample_measure: m must be >= 1");
  PointSet pts(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(basis.dim));
  for (Eigen::Index r = 0; r < pts.rows(); ++r)
    for (Eigen::Index j = 0; j < pts.cols(); ++j) {
      const double u = rng.uniform();
      double z = basis.family == Family::legendre ? 2.0 * u - 1.0 : std::cos(std::numbers::pi * u);
      // cos can round to +-1 for U within 1e-16 of the ends; keep points interior.
      if (std::abs(z) >= 1.0) z = std::nextafter(z, 0.0);
      pts(r, j) = z;
    }
  return pts;
}

/// Uniform points on (-1,1)^d regardless of family.
inline PointSet sample_uniform(std::size_t d, std::size_t m, Rng& rng) {
  return sample_measure(BasisSpec(Family::legendre, d), m, rng);
}

}  // namespace sparsepce
