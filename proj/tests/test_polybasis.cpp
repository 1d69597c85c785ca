#include <cmath>
#include <numbers>
#include <vector>

#include <gtest/gtest.h>

#include "sparsepce/multiindex.hpp"
#include "sparsepce/polybasis.hpp"

using namespace sparsepce;

namespace {

// sqrt(2) T_n by the monomial recurrence T_{n+1} = 2 z T_n - T_{n-1}.
double chebyshev_oracle(unsigned n, double z) {
  if (n == 0) return 1.0;
  double t0 = 1, t1 = z;
  for (unsigned k = 1; k < n; ++k) {
    const double t2 = 2 * z * t1 - t0;
    t0 = t1;
    t1 = t2;
  }
  return std::sqrt(2.0) * t1;
}

// sqrt(2n+1) P_n from P_n(z) = 2^-n sum_k C(n,k)^2 (z-1)^(n-k) (z+1)^k.
double legendre_oracle(unsigned n, double z) {
  double s = 0, binom = 1;
  for (unsigned k = 0; k <= n; ++k) {
    s += binom * binom * std::pow(z - 1, n - k) * std::pow(z + 1, k);
    binom = binom * (n - k) / (k + 1);
  }
  return std::sqrt(2.0 * n + 1) * s / std::pow(2.0, n);
}

// Gauss-Legendre nodes/weights on [-1,1] for dz/2, by Newton on P_N.
void gauss_legendre(unsigned n, std::vector<double>& x, std::vector<double>& w) {
  x.assign(n, 0);
  w.assign(n, 0);
  for (unsigned i = 0; i < n; ++i) {
    double z = std::cos(std::numbers::pi * (i + 0.75) / (n + 0.5));
    for (int it = 0; it < 100; ++it) {
      double p0 = 1, p1 = z;
      for (unsigned k = 2; k <= n; ++k) {
        const double p2 = ((2.0 * k - 1) * z * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
      }
      const double dp = n * (z * p1 - p0) / (z * z - 1);
      const double dz = p1 / dp;
      z -= dz;
      if (std::abs(dz) < 1e-16) {
        x[i] = z;
        w[i] = 1.0 / ((1 - z * z) * dp * dp);  // 2/((1-z^2)P'^2) halved
        break;
      }
    }
  }
}

}  // namespace

TEST(Eval1d, Examples) {
  for (Family f : {Family::chebyshev, Family::legendre})
    for (double z : {-1.0, -0.3, 0.0, 0.7, 1.0}) EXPECT_EQ(eval_1d(f, 0, z), 1.0);
  EXPECT_NEAR(eval_1d(Family::chebyshev, 1, 1.0), std::sqrt(2.0), 1e-15);
  EXPECT_NEAR(eval_1d(Family::legendre, 2, 1.0), std::sqrt(5.0), 1e-14);
}

TEST(Eval1d, MatchesIndependentFormulas) {
  for (unsigned n = 0; n <= 20; ++n)
    for (int g = 0; g <= 40; ++g) {
      const double z = -1.0 + g / 20.0;
      EXPECT_NEAR(eval_1d(Family::chebyshev, n, z), chebyshev_oracle(n, z), 1e-11) << n << " " << z;
      EXPECT_NEAR(eval_1d(Family::legendre, n, z), legendre_oracle(n, z), 1e-9) << n << " " << z;
    }
}

TEST(Eval1d, RejectsOutOfRange) {
  EXPECT_THROW(eval_1d(Family::legendre, 2, 1.5), std::domain_error);
  EXPECT_THROW(eval_1d(Family::chebyshev, 1, std::nan("")), std::domain_error);
}

TEST(Eval1dAll, AgreesWithSingleEvaluations) {
  std::vector<double> out(16);
  for (Family f : {Family::chebyshev, Family::legendre})
    for (double z : {-0.99, -0.2, 0.5, 1.0}) {
      eval_1d_all(f, 15, z, out);
      for (unsigned n = 0; n <= 15; ++n) EXPECT_NEAR(out[n], eval_1d(f, n, z), 1e-12);
    }
}

TEST(Orthonormality, LegendreGaussQuadrature) {
  std::vector<double> x, w;
  gauss_legendre(24, x, w);
  for (unsigned i = 0; i <= 10; ++i)
    for (unsigned j = 0; j <= 10; ++j) {
      double s = 0;
      for (std::size_t q = 0; q < x.size(); ++q) s += w[q] * eval_1d(Family::legendre, i, x[q]) * eval_1d(Family::legendre, j, x[q]);
      EXPECT_NEAR(s, i == j ? 1.0 : 0.0, 1e-12) << i << "," << j;
    }
}

TEST(Orthonormality, ChebyshevGaussQuadrature) {
  // Gauss-Chebyshev: nodes cos((2q-1) pi / 2N), equal weights 1/N for the arcsine law.
  const unsigned n = 24;
  for (unsigned i = 0; i <= 10; ++i)
    for (unsigned j = 0; j <= 10; ++j) {
      double s = 0;
      for (unsigned q = 1; q <= n; ++q) {
        const double z = std::cos((2.0 * q - 1) * std::numbers::pi / (2.0 * n));
        s += eval_1d(Family::chebyshev, i, z) * eval_1d(Family::chebyshev, j, z) / n;
      }
      EXPECT_NEAR(s, i == j ? 1.0 : 0.0, 1e-12) << i << "," << j;
    }
}

TEST(EvalTensor, Examples) {
  const BasisSpec c2(Family::chebyshev, 2), l2(Family::legendre, 2);
  const std::vector<double> ones{1.0, 1.0}, z{1.0, 0.3};
  EXPECT_EQ(eval_tensor(MultiIndex(2), z, c2), 1.0);
  EXPECT_NEAR(eval_tensor(MultiIndex{1, 1}, ones, c2), 2.0, 1e-14);
  EXPECT_NEAR(eval_tensor(MultiIndex{2, 0}, z, l2), std::sqrt(5.0), 1e-14);
  EXPECT_THROW(eval_tensor(MultiIndex{1, 0, 0}, z, l2), std::invalid_argument);
}

TEST(EvalBasisMatrix, MatchesTensorEvaluation) {
  const BasisSpec b(Family::legendre, 3);
  const IndexSet s = hyperbolic_cross(3, 8);
  Rng rng(5);
  const PointSet p = sample_measure(b, 7, rng);
  Eigen::MatrixXd out(p.rows(), static_cast<Eigen::Index>(s.size()));
  eval_basis_matrix(s, p, b, out);
  for (Eigen::Index r = 0; r < p.rows(); ++r)
    for (std::size_t k = 0; k < s.size(); ++k) {
      const std::vector<double> z(p.row(r).data(), p.row(r).data() + 3);
      EXPECT_NEAR(out(r, static_cast<Eigen::Index>(k)), eval_tensor(s[k], z, b), 1e-12);
    }
}

TEST(SupNormConsistency, Examples) {
  EXPECT_NEAR(sup_norm_consistency(MultiIndex(2), BasisSpec(Family::legendre, 2)), 1.0, 1e-12);
  EXPECT_NEAR(sup_norm_consistency(MultiIndex{3}, BasisSpec(Family::legendre, 1)), std::sqrt(7.0), 1e-6);
  EXPECT_NEAR(sup_norm_consistency(MultiIndex{5, 2}, BasisSpec(Family::chebyshev, 2)), 2.0, 1e-6);
}

TEST(SupNormConsistency, AgreesWithIntrinsicWeights) {
  for (Family f : {Family::chebyshev, Family::legendre}) {
    const BasisSpec b(f, 2);
    for (const auto& i : hyperbolic_cross(2, 12))
      EXPECT_NEAR(sup_norm_consistency(i, b), intrinsic_weight(i, f), 1e-6) << i.to_string();
  }
}

TEST(SampleMeasure, InteriorAndMoments) {
  const std::size_t m = 20000;
  Rng rng(11);
  const PointSet leg = sample_measure(BasisSpec(Family::legendre, 3), m, rng);
  const PointSet che = sample_measure(BasisSpec(Family::chebyshev, 3), m, rng);
  EXPECT_LT(leg.cwiseAbs().maxCoeff(), 1.0);
  EXPECT_LT(che.cwiseAbs().maxCoeff(), 1.0);
  const double tol = 4.0 / std::sqrt(static_cast<double>(m));
  for (Eigen::Index j = 0; j < 3; ++j) {
    EXPECT_NEAR(leg.col(j).mean(), 0.0, tol);
    const double below = (che.col(j).array() < 0).cast<double>().mean();
    EXPECT_NEAR(below, 0.5, tol);
    // Arcsine law: E[z^2] = 1/2, uniform: 1/3.
    EXPECT_NEAR(che.col(j).squaredNorm() / m, 0.5, 4 * tol);
    EXPECT_NEAR(leg.col(j).squaredNorm() / m, 1.0 / 3.0, 4 * tol);
  }
}

TEST(SampleMeasure, DeterministicPerSeed) {
  Rng a(3), b(3), c(4);
  const BasisSpec basis(Family::chebyshev, 2);
  const PointSet pa = sample_measure(basis, 50, a), pb = sample_measure(basis, 50, b), pc = sample_measure(basis, 50, c);
  EXPECT_EQ(pa, pb);
  EXPECT_NE(pa, pc);
  EXPECT_THROW(sample_measure(basis, 0, a), std::invalid_argument);
}
