#include "seqmem/numerics.hpp"

#include "seqmem/rng.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/QR>
#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <sstream>
#include <vector>

namespace seqmem {

namespace {

constexpr Index kDenseEntryLimit = 4'000'000;
constexpr Index kGramSideLimit = 2000;
constexpr Index kOversample = 10;
constexpr int kPowerIterations = 4;
constexpr std::uint64_t kRangeFinderSeed = 0x5eed5eed5eedULL;

Matrix gaussian(Index rows, Index cols, std::uint64_t seed) {
  SplitMix64 g(seed);
  Matrix out(rows, cols);
  for (Index i = 0; i < rows; ++i)
    for (Index j = 0; j < cols; ++j) out(i, j) = g.normal();
  return out;
}

Matrix orthonormal_basis(const Matrix& y) {
  Eigen::HouseholderQR<Matrix> qr(y);
  return qr.householderQ() * Matrix::Identity(y.rows(), y.cols());
}

// Completes columns of `q` whose norm collapsed (singular value ~ 0) with unit
// vectors orthogonal to the rest, then re-orthogonalizes everything by MGS.
void complete_orthonormal(Matrix& q, const std::vector<bool>& degenerate, std::uint64_t seed) {
  SplitMix64 g(seed);
  for (Index j = 0; j < q.cols(); ++j) {
    if (degenerate[static_cast<std::size_t>(j)]) {
      for (Index i = 0; i < q.rows(); ++i) q(i, j) = g.normal();
    }
  }
  for (int pass = 0; pass < 2; ++pass) {
    for (Index j = 0; j < q.cols(); ++j) {
      for (Index i = 0; i < j; ++i) q.col(j) -= q.col(i).dot(q.col(j)) * q.col(i);
      const double n = q.col(j).norm();
      if (n > 0.0) q.col(j) /= n;
    }
  }
}

SvdResult svd_dense(const Matrix& m, Index k) {
  Eigen::BDCSVD<Matrix> svd(m, Eigen::ComputeThinU | Eigen::ComputeThinV);
  SvdResult r;
  r.s = svd.singularValues().head(k);
  r.v = svd.matrixU().leftCols(k);
  r.u = svd.matrixV().leftCols(k);
  return r;
}

SvdResult svd_gram(const Matrix& m, Index k) {
  const bool right_side = m.cols() <= m.rows();
  const Index side = right_side ? m.cols() : m.rows();
  Matrix gram = Matrix::Zero(side, side);
  if (right_side)
    gram.selfadjointView<Eigen::Lower>().rankUpdate(m.transpose());
  else
    gram.selfadjointView<Eigen::Lower>().rankUpdate(m);
  gram.triangularView<Eigen::StrictlyUpper>() = gram.transpose();

  SvdResult small = svd_from_gram(gram, k);
  Matrix other = right_side ? Matrix(m * small.u) : Matrix(m.transpose() * small.u);
  const double tol = (small.s.size() ? small.s(0) : 0.0) * 1e-12 * static_cast<double>(side);
  std::vector<bool> degenerate(static_cast<std::size_t>(k), false);
  for (Index j = 0; j < k; ++j) {
    if (small.s(j) > tol && small.s(j) > 0.0)
      other.col(j) /= small.s(j);
    else
      degenerate[static_cast<std::size_t>(j)] = true;
  }
  complete_orthonormal(other, degenerate, kRangeFinderSeed);

  SvdResult r;
  r.s = small.s;
  if (right_side) {
    r.u = std::move(small.u);
    r.v = std::move(other);
  } else {
    r.v = std::move(small.u);
    r.u = std::move(other);
  }
  return r;
}

SvdResult svd_randomized(const Matrix& m, Index k) {
  const Index l = std::min<Index>(k + kOversample, std::min(m.rows(), m.cols()));
  Matrix q = orthonormal_basis(m * gaussian(m.cols(), l, kRangeFinderSeed));
  for (int it = 0; it < kPowerIterations; ++it) {
    Matrix z = orthonormal_basis(m.transpose() * q);
    q = orthonormal_basis(m * z);
  }
  Matrix small = q.transpose() * m;  // l x D
  Eigen::BDCSVD<Matrix> svd(small, Eigen::ComputeThinU | Eigen::ComputeThinV);
  SvdResult r;
  r.s = svd.singularValues().head(k);
  r.v = q * svd.matrixU().leftCols(k);
  r.u = svd.matrixV().leftCols(k);
  return r;
}

}  // namespace

void require_finite(const Matrix& m, std::string_view what) {
  if (!m.allFinite()) throw NumericalError(std::string(what) + ": non-finite entries");
}

void require_shape(const Matrix& m, Index rows, Index cols, std::string_view what) {
  if (m.rows() != rows || m.cols() != cols) {
    std::ostringstream os;
    os << what << ": expected " << rows << "x" << cols << ", got " << m.rows() << "x" << m.cols();
    throw DimensionError(os.str());
  }
}

void fix_signs(SvdResult& r) {
  for (Index j = 0; j < r.u.cols(); ++j) {
    Index arg = 0;
    r.u.col(j).cwiseAbs().maxCoeff(&arg);
    if (r.u(arg, j) < 0.0) {
      r.u.col(j) *= -1.0;
      if (r.v.cols() > j) r.v.col(j) *= -1.0;
    }
  }
}

SvdResult svd_from_gram(const Matrix& gram, Index k, Vector* all_eigenvalues) {
  if (gram.rows() != gram.cols()) throw DimensionError("svd_from_gram: Gram matrix must be square");
  if (k < 1 || k > gram.rows()) throw DimensionError("svd_from_gram: k out of range");
  require_finite(gram, "svd_from_gram");
  Eigen::SelfAdjointEigenSolver<Matrix> eig(gram);
  if (eig.info() != Eigen::Success) throw NumericalError("svd_from_gram: eigensolver failed");
  // Eigen sorts ascending.
  const Index n = gram.rows();
  SvdResult r;
  r.u.resize(n, k);
  r.s.resize(k);
  for (Index j = 0; j < k; ++j) {
    r.u.col(j) = eig.eigenvectors().col(n - 1 - j);
    r.s(j) = std::sqrt(std::max(0.0, eig.eigenvalues()(n - 1 - j)));
  }
  if (all_eigenvalues) *all_eigenvalues = eig.eigenvalues().reverse().cwiseMax(0.0);
  fix_signs(r);
  return r;
}

SvdResult truncated_svd(const Matrix& m, Index k, SvdMethod method) {
  const Index short_side = std::min(m.rows(), m.cols());
  if (k < 1 || k > short_side) {
    std::ostringstream os;
    os << "truncated_svd: k=" << k << " outside [1, " << short_side << "]";
    throw DimensionError(os.str());
  }
  require_finite(m, "truncated_svd");

  if (method == SvdMethod::Auto) {
    if (m.rows() * m.cols() <= kDenseEntryLimit)
      method = SvdMethod::Dense;
    else if (short_side <= kGramSideLimit)
      method = SvdMethod::Gram;
    else
      method = SvdMethod::Randomized;
  }
  SvdResult r;
  switch (method) {
    case SvdMethod::Dense: r = svd_dense(m, k); break;
    case SvdMethod::Gram: r = svd_gram(m, k); break;
    default: r = svd_randomized(m, k); break;
  }
  fix_signs(r);
  return r;
}

Matrix random_orthogonal(Index n, std::uint64_t seed) {
  if (n < 1) throw DimensionError("random_orthogonal: n must be >= 1");
  Matrix g = gaussian(n, n, seed);
  Eigen::HouseholderQR<Matrix> qr(g);
  Matrix q = qr.householderQ();
  const Matrix& packed = qr.matrixQR();
  for (Index j = 0; j < n; ++j)
    if (packed(j, j) < 0.0) q.col(j) *= -1.0;
  return q;
}

Matrix least_squares_fit(const Matrix& inputs, const Matrix& targets, double ridge) {
  if (inputs.rows() < 1) throw DimensionError("least_squares_fit: no rows");
  if (inputs.rows() != targets.rows()) throw DimensionError("least_squares_fit: row count mismatch");
  if (!(ridge >= 0.0)) throw std::invalid_argument("least_squares_fit: ridge must be >= 0");
  require_finite(inputs, "least_squares_fit inputs");
  require_finite(targets, "least_squares_fit targets");

  if (ridge == 0.0) {
    Eigen::CompleteOrthogonalDecomposition<Matrix> cod(inputs);
    return cod.solve(targets);
  }
  const Index d = inputs.cols();
  Matrix normal = Matrix::Zero(d, d);
  normal.selfadjointView<Eigen::Lower>().rankUpdate(inputs.transpose());
  normal.triangularView<Eigen::StrictlyUpper>() = normal.transpose();
  normal.diagonal().array() += ridge;
  Eigen::LDLT<Matrix> ldlt(normal);
  if (ldlt.info() != Eigen::Success) throw NumericalError("least_squares_fit: factorization failed");
  return ldlt.solve(inputs.transpose() * targets);
}

Matrix uniform_fan_in(Index rows, Index cols, Index fan_in, std::uint64_t seed) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(std::max<Index>(fan_in, 1)));
  SplitMix64 g(seed);
  Matrix out(rows, cols);
  for (Index i = 0; i < rows; ++i)
    for (Index j = 0; j < cols; ++j) out(i, j) = g.uniform(-bound, bound);
  return out;
}

}  // namespace seqmem
