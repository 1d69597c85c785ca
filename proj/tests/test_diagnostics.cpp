#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "sparsepce/diagnostics.hpp"
#include "sparsepce/experiment.hpp"

using namespace sparsepce;

namespace {

Surrogate zero_surrogate(const BasisSpec& b, const IndexSet& s) {
  return Surrogate(b, s, Vector::Zero(static_cast<Eigen::Index>(s.size())));
}

TargetFunction single_basis_function(const BasisSpec& b, const IndexSet& s, const MultiIndex& i) {
  Vector c = Vector::Zero(static_cast<Eigen::Index>(s.size()));
  c[static_cast<Eigen::Index>(s.find(i))] = 1.0;
  return TargetFunction::from_expansion(b, s, c);
}

// max ||A_S^T A_S - I|| over all column subsets passing `admit`, by bitmask.
template <typename Admit>
double bitmask_ric(const Matrix& a, Admit admit) {
  const auto n = a.cols();
  double best = 0;
  for (std::uint32_t mask = 1; mask < (1u << n); ++mask) {
    std::vector<Eigen::Index> cols;
    for (Eigen::Index j = 0; j < n; ++j)
      if (mask & (1u << j)) cols.push_back(j);
    if (!admit(cols)) continue;
    Eigen::MatrixXd as(a.rows(), static_cast<Eigen::Index>(cols.size()));
    for (std::size_t c = 0; c < cols.size(); ++c) as.col(static_cast<Eigen::Index>(c)) = a.col(cols[c]);
    Eigen::MatrixXd g = as.transpose() * as - Eigen::MatrixXd::Identity(as.cols(), as.cols());
    best = std::max(best, Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(g).eigenvalues().cwiseAbs().maxCoeff());
  }
  return best;
}

Matrix sampled_matrix(const BasisSpec& b, const IndexSet& s, std::size_t m, Rng& rng) {
  Matrix a = basis_matrix(s, b, sample_measure(b, m, rng));
  a /= std::sqrt(static_cast<double>(m));
  return a;
}

}  // namespace

TEST(ErrorL2, ExactSurrogateHasNoError) {
  const BasisSpec b(Family::chebyshev, 3);
  const IndexSet s = hyperbolic_cross(3, 8);
  Rng rng(1);
  const TargetFunction f = planted_function(s, b, 4, rng);
  const Surrogate sur(b, s, f.reference->coefficients);
  EXPECT_LE(error_l2_mc(f, sur, 5000, rng), 1e-8);
  EXPECT_LE(error_linf_mc(f, sur, 5000, rng), 1e-8);
}

TEST(ErrorL2, SingleBasisFunctionHasUnitNorm) {
  for (Family fam : {Family::chebyshev, Family::legendre}) {
    const BasisSpec b(fam, 2);
    const IndexSet s = hyperbolic_cross(2, 6);
    const TargetFunction f = single_basis_function(b, s, MultiIndex{1, 2});
    const std::size_t n = 100'000;
    Rng rng(2);
    EXPECT_NEAR(error_l2_mc(f, zero_surrogate(b, s), n, rng), 1.0, 5.0 / std::sqrt(double(n)));
  }
}

TEST(ErrorL2, DoublingSamplesShrinksSpreadBySqrtTwo) {
  const BasisSpec b(Family::legendre, 1);
  const IndexSet s = hyperbolic_cross(1, 4);
  const TargetFunction f = single_basis_function(b, s, MultiIndex{2});
  const Surrogate z = zero_surrogate(b, s);
  auto spread = [&](std::size_t n) {
    std::vector<double> v;
    for (std::uint64_t t = 0; t < 400; ++t) {
      Rng rng(100 + t, n);
      v.push_back(error_l2_mc(f, z, n, rng));
    }
    double mean = 0, var = 0;
    for (double x : v) mean += x / v.size();
    for (double x : v) var += (x - mean) * (x - mean) / (v.size() - 1);
    return std::sqrt(var);
  };
  const double ratio = spread(500) / spread(1000);
  EXPECT_NEAR(ratio, std::sqrt(2.0), 0.2);
}

TEST(ErrorLinf, LegendreDegreeThreeSupNorm) {
  const BasisSpec b(Family::legendre, 1);
  const IndexSet s = hyperbolic_cross(1, 4);
  const TargetFunction f = single_basis_function(b, s, MultiIndex{3});
  Rng rng(3);
  const double e = error_linf_mc(f, zero_surrogate(b, s), 100'000, rng);
  EXPECT_LE(e, std::sqrt(7.0));
  EXPECT_GE(e, 0.9 * std::sqrt(7.0));
}

TEST(ErrorLinf, NondecreasingOverNestedSamples) {
  const BasisSpec b(Family::chebyshev, 2);
  const IndexSet s = hyperbolic_cross(2, 6);
  const TargetFunction f = test_function("f2", 2);
  const Surrogate z = zero_surrogate(b, s);
  double prev = 0;
  for (std::size_t n : {10u, 100u, 1000u, 10000u}) {
    Rng rng(4);  // same stream: the first n points are shared
    const double e = error_linf_mc(f, z, n, rng);
    EXPECT_GE(e, prev);
    prev = e;
  }
}

TEST(ErrorReport, DeterministicAndConsistent) {
  const BasisSpec b(Family::legendre, 2);
  const IndexSet s = hyperbolic_cross(2, 6);
  const TargetFunction f = test_function("f3", 2);
  const Surrogate z = zero_surrogate(b, s);
  const ErrorReport r1 = error_report(f, z, 2000, Rng(5)), r2 = error_report(f, z, 2000, Rng(5));
  EXPECT_EQ(r1.l2_error, r2.l2_error);
  EXPECT_EQ(r1.linf_error, r2.linf_error);
  EXPECT_LE(r1.l2_error, r1.linf_error);
}

TEST(QuConstant, Examples) {
  const BasisSpec b(Family::legendre, 1);
  const IndexSet zero(1, {MultiIndex(1)});
  Matrix one(1, 1);
  one(0, 0) = 1;
  EXPECT_NEAR(qu_constant(one, zero, b), 1.0, 1e-14);
  const IndexSet s = hyperbolic_cross(1, 3);
  Rng rng(6);
  EXPECT_THROW(qu_constant(sampled_matrix(b, s, 5, rng), s, b), std::invalid_argument);
  Matrix dup = sampled_matrix(b, s, 2, rng);
  dup.row(1) = dup.row(0);
  EXPECT_THROW(qu_constant(dup, s, b), RankDeficientError);
}

TEST(QuConstant, FormulaAgainstSvdAndRowPermutation) {
  const BasisSpec b(Family::chebyshev, 3);
  const IndexSet s = hyperbolic_cross(3, 10);
  Rng rng(7);
  const std::size_t m = 20;
  const Matrix a = sampled_matrix(b, s, m, rng);
  const double n = static_cast<double>(s.size());
  const double smin = Eigen::JacobiSVD<Eigen::MatrixXd>(a).singularValues().minCoeff() * std::sqrt(m / n);
  const WeightVector u = intrinsic_weights(s, b.family, 1.0);
  EXPECT_NEAR(qu_constant(a, s, b), std::sqrt(u.values().sum() / n) / smin, 1e-9);
  EXPECT_NEAR(qu_constant(a, s, b, QuMass::sum_squared_weights), std::sqrt(u.values().squaredNorm() / n) / smin, 1e-9);
  Matrix p = a;
  p.row(0).swap(p.row(7));
  p.row(3).swap(p.row(19));
  EXPECT_NEAR(qu_constant(p, s, b), qu_constant(a, s, b), 1e-10);
}

TEST(EmpiricalGram, Examples) {
  const BasisSpec b(Family::chebyshev, 2);
  Rng rng(8);
  EXPECT_NEAR(empirical_gram_min_eig(b, IndexSet(2, {MultiIndex(2)}), 3, 10, rng), 0.0, 1e-12);
  const IndexSet s = hyperbolic_cross(2, 3);
  ASSERT_EQ(s.size(), 5u);
  EXPECT_NEAR(empirical_gram_min_eig(b, s, 4, 5000, rng), 0.8, 0.05);
}

TEST(EmpiricalGram, ApproachesLimitAsTrialsGrow) {
  const BasisSpec b(Family::legendre, 2);
  const IndexSet s = hyperbolic_cross(2, 3);
  double few = 0, many = 0;
  for (std::uint64_t t = 0; t < 10; ++t) {
    Rng r1(t, 1), r2(t, 2);
    few += empirical_gram_min_eig(b, s, 4, 5, r1) / 10;
    many += empirical_gram_min_eig(b, s, 4, 500, r2) / 10;
  }
  EXPECT_LT(few, many);
  EXPECT_LT(std::abs(many - 0.8), std::abs(few - 0.8));
}

TEST(LowerRic, Examples) {
  const Eigen::MatrixXd q = Eigen::MatrixXd::Identity(6, 4);
  EXPECT_NEAR(lower_ric_bruteforce(q, WeightVector::ones(4), 3.0), 0.0, 1e-14);
  Eigen::MatrixXd d = Eigen::MatrixXd::Identity(3, 3);
  d(1, 1) = std::sqrt(1.0 + 0.3);
  Vector w(3);
  w << 1.0, 1.0, 10.0;
  EXPECT_NEAR(lower_ric_bruteforce(d, WeightVector(w), 2.0), 0.3, 1e-12);
}

TEST(LowerRic, MatchesBitmaskEnumeration) {
  for (Family fam : {Family::chebyshev, Family::legendre}) {
    const BasisSpec b(fam, 2);
    const IndexSet s = hyperbolic_cross(2, 6);
    Rng rng(9);
    const Matrix a = sampled_matrix(b, s, 30, rng);
    const WeightVector u = intrinsic_weights(s, fam, 1.0);
    for (std::size_t k = 1; k <= 4; ++k) {
      const double sk = max_lower_weighted_cardinality(2, k, fam, SkMode::brute_force);
      const double ref = bitmask_ric(a, [&](const std::vector<Eigen::Index>& cols) {
        double cost = 0;
        for (auto c : cols) cost += u[static_cast<std::size_t>(c)] * u[static_cast<std::size_t>(c)];
        return cost <= sk + 1e-9;
      });
      EXPECT_NEAR(lower_ric_bruteforce(a, s, k, b), ref, 1e-12) << "k=" << k;
      const double classical = bitmask_ric(a, [&](const std::vector<Eigen::Index>& cols) { return cols.size() <= k; });
      EXPECT_NEAR(classical_ric_bruteforce(a, k), classical, 1e-12) << "k=" << k;
    }
  }
}

TEST(LowerRic, GuardRejectsWideMatrices) {
  const Matrix a = Matrix::Identity(61, 61);
  EXPECT_THROW(lower_ric_bruteforce(a, WeightVector::ones(61), 2.0), std::length_error);
  EXPECT_THROW(classical_ric_bruteforce(a, 2), std::length_error);
}

TEST(TailTermBound, Examples) {
  const BasisSpec b(Family::legendre, 2);
  const IndexSet s = hyperbolic_cross(2, 6);
  Rng rng(10);
  const Matrix a = sampled_matrix(b, s, 8, rng);
  const double q = qu_constant(a, s, b);
  EXPECT_EQ(tail_term_bound(a, s, b, 0.1, 0.2, 4), 0.0);
  EXPECT_EQ(tail_term_bound(a, s, b, 0.1, 0.1, 4), 0.0);
  const double eta = 0.05;
  EXPECT_NEAR(tail_term_bound(a, s, b, 2 * eta, eta, 4), q * eta * 4.0, 1e-12);
  const BasisSpec c(Family::chebyshev, 2);
  const Matrix ac = sampled_matrix(c, s, 8, rng);
  EXPECT_NEAR(tail_term_bound(ac, s, c, 2 * eta, eta, 4), qu_constant(ac, s, c) * eta * 2.0, 1e-12);
  // Affine in eta on [0, e_norm].
  const double t0 = tail_term_bound(a, s, b, 1.0, 0.0, 4), t1 = tail_term_bound(a, s, b, 1.0, 0.25, 4),
               t2 = tail_term_bound(a, s, b, 1.0, 0.5, 4);
  EXPECT_NEAR(t0 - t1, t1 - t2, 1e-12);
  EXPECT_GT(t1, t2);
}
