#include "seqmem/numerics.hpp"

#include "test_util.hpp"

#include <gtest/gtest.h>

#include <Eigen/SVD>

using namespace seqmem;
using testutil::gaussian;

namespace {

// Independent reference: full SVD through Eigen's one-sided Jacobi.
Vector jacobi_singular_values(const Matrix& m) {
  Eigen::JacobiSVD<Matrix> svd(m);
  return svd.singularValues();
}

Matrix reconstruct(const SvdResult& r) { return r.v * r.s.asDiagonal() * r.u.transpose(); }

Matrix low_rank(Index n, Index d, Index rank, std::uint64_t seed) {
  return gaussian(n, rank, seed) * gaussian(rank, d, seed + 1);
}

const SvdMethod kMethods[] = {SvdMethod::Auto, SvdMethod::Dense, SvdMethod::Gram, SvdMethod::Randomized};

}  // namespace

TEST(TruncatedSvd, IdentityHasUnitSpectrum) {
  const SvdResult r = truncated_svd(Matrix::Identity(3, 3), 3);
  EXPECT_NEAR((r.s - Vector::Ones(3)).norm(), 0.0, 1e-12);
}

TEST(TruncatedSvd, DiagonalTopTwo) {
  Matrix m = Vector(Eigen::Vector3d(3, 2, 1)).asDiagonal();
  for (SvdMethod method : kMethods) {
    const SvdResult r = truncated_svd(m, 2, method);
    EXPECT_NEAR(r.s(0), 3.0, 1e-10);
    EXPECT_NEAR(r.s(1), 2.0, 1e-10);
    EXPECT_NEAR((m - reconstruct(r)).squaredNorm(), 1.0, 1e-9);
  }
}

TEST(TruncatedSvd, FullRankReconstructionMatchesGramOracle) {
  const Matrix m = gaussian(8, 5, 11);
  // Gram oracle: eigenvalues of m^T m are the squared singular values.
  Eigen::SelfAdjointEigenSolver<Matrix> eig(m.transpose() * m);
  Vector oracle = eig.eigenvalues().reverse().cwiseMax(0.0).cwiseSqrt();
  for (SvdMethod method : kMethods) {
    const SvdResult r = truncated_svd(m, 5, method);
    EXPECT_LE((m - reconstruct(r)).norm(), 1e-8);
    EXPECT_LE((r.s - oracle).norm(), 1e-9);
  }
}

TEST(TruncatedSvd, FactorsAreOrthonormalAndSorted) {
  const Matrix m = gaussian(40, 25, 3);
  for (SvdMethod method : kMethods) {
    const SvdResult r = truncated_svd(m, 10, method);
    EXPECT_LE((r.u.transpose() * r.u - Matrix::Identity(10, 10)).norm(), 1e-10);
    EXPECT_LE((r.v.transpose() * r.v - Matrix::Identity(10, 10)).norm(), 1e-10);
    for (Index i = 1; i < 10; ++i) EXPECT_GE(r.s(i - 1), r.s(i));
    EXPECT_GE(r.s(9), 0.0);
  }
}

TEST(TruncatedSvd, TailEnergyMatchesEckartYoung) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const Matrix m = gaussian(30 + Index(seed) * 4, 20, 100 + seed);
    const Vector sigma = jacobi_singular_values(m);
    for (Index k : {1, 5, 12, 20}) {
      const double tail = sigma.tail(sigma.size() - k).squaredNorm();
      for (SvdMethod method : kMethods) {
        const SvdResult r = truncated_svd(m, k, method);
        const double err = (m - reconstruct(r)).squaredNorm();
        // The range finder is approximate on flat spectra.
        const double tol = method == SvdMethod::Randomized ? 1e-4 : 1e-6;
        EXPECT_NEAR(err, tail, tol * std::max(1.0, tail)) << "k=" << k;
      }
    }
  }
}

TEST(TruncatedSvd, ExactRankReconstructsLowRankInput) {
  const Matrix m = low_rank(50, 30, 6, 9);
  for (SvdMethod method : kMethods) {
    const SvdResult r = truncated_svd(m, 6, method);
    EXPECT_LE((m - reconstruct(r)).norm() / m.norm(), 1e-8);
  }
}

TEST(TruncatedSvd, Deterministic) {
  const Matrix m = gaussian(300, 40, 5);
  for (SvdMethod method : kMethods) {
    const SvdResult a = truncated_svd(m, 8, method);
    const SvdResult b = truncated_svd(m, 8, method);
    EXPECT_TRUE(a.u == b.u);
    EXPECT_TRUE(a.s == b.s);
  }
}

TEST(TruncatedSvd, SignConvention) {
  const SvdResult r = truncated_svd(gaussian(20, 10, 1), 4);
  for (Index j = 0; j < 4; ++j) {
    Index arg = 0;
    r.u.col(j).cwiseAbs().maxCoeff(&arg);
    EXPECT_GT(r.u(arg, j), 0.0);
  }
}

TEST(TruncatedSvd, RejectsBadRankAndNonFinite) {
  const Matrix m = gaussian(4, 3, 1);
  EXPECT_THROW(truncated_svd(m, 0), std::invalid_argument);
  EXPECT_THROW(truncated_svd(m, 4), std::invalid_argument);
  Matrix bad = m;
  bad(1, 1) = std::nan("");
  EXPECT_THROW(truncated_svd(bad, 2), NumericalError);
}

TEST(RandomOrthogonal, OneByOne) {
  const Matrix w = random_orthogonal(1, 42);
  EXPECT_DOUBLE_EQ(std::abs(w(0, 0)), 1.0);
}

TEST(RandomOrthogonal, OrthogonalDeterministicUnitDeterminant) {
  const Matrix w = random_orthogonal(64, 7);
  EXPECT_LE((w.transpose() * w - Matrix::Identity(64, 64)).norm(), 1e-10);
  EXPECT_NEAR(std::abs(w.determinant()), 1.0, 1e-8);
  EXPECT_TRUE(w == random_orthogonal(64, 7));
  EXPECT_FALSE(w == random_orthogonal(64, 8));
}

TEST(RandomOrthogonal, RejectsZero) { EXPECT_THROW(random_orthogonal(0, 1), std::invalid_argument); }

TEST(LeastSquares, IdentityInputsReturnTargets) {
  const Matrix t = gaussian(3, 2, 4);
  EXPECT_LE((least_squares_fit(Matrix::Identity(3, 3), t, 0.0) - t).norm(), 1e-12);
}

TEST(LeastSquares, RankDeficientMatchesPseudoinverseOracle) {
  const Matrix x = low_rank(12, 6, 3, 21);
  const Matrix y = gaussian(12, 2, 22);
  // Explicit pseudoinverse from a full Jacobi SVD: V S^+ U^T.
  Eigen::JacobiSVD<Matrix> svd(x, Eigen::ComputeThinU | Eigen::ComputeThinV);
  Vector inv = svd.singularValues();
  for (Index i = 0; i < inv.size(); ++i) inv(i) = inv(i) > 1e-10 * inv(0) ? 1.0 / inv(i) : 0.0;
  const Matrix oracle = svd.matrixV() * inv.asDiagonal() * svd.matrixU().transpose() * y;
  EXPECT_LE((least_squares_fit(x, y, 0.0) - oracle).norm(), 1e-8);
}

TEST(LeastSquares, RidgeSolvesNormalEquations) {
  const Matrix x = gaussian(20, 5, 2);
  const Matrix y = gaussian(20, 3, 3);
  const Matrix w = least_squares_fit(x, y, 0.5);
  const Matrix residual = (x.transpose() * x + 0.5 * Matrix::Identity(5, 5)) * w - x.transpose() * y;
  EXPECT_LE(residual.norm(), 1e-10);
}

TEST(LeastSquares, HugeRidgeShrinksToZero) {
  const Matrix x = gaussian(20, 5, 2);
  const Matrix y = gaussian(20, 3, 3);
  const double base = least_squares_fit(x, y, 0.0).norm();
  EXPECT_LE(least_squares_fit(x, y, 1e12).norm(), 1e-6 * base);
}

TEST(LeastSquares, RejectsMismatch) {
  EXPECT_THROW(least_squares_fit(Matrix::Zero(4, 2), Matrix::Zero(3, 1), 0.0), DimensionError);
}
