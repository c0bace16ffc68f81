#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace seqmem {

using Index = Eigen::Index;
using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Raised on shape disagreements between arguments.
class DimensionError : public std::invalid_argument {
public:
  using std::invalid_argument::invalid_argument;
};

/// Raised when a numerical routine meets NaN/Inf input or fails to converge.
class NumericalError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

void require_finite(const Matrix& m, std::string_view what);

void require_shape(const Matrix& m, Index rows, Index cols, std::string_view what);

/// Thin singular triplets of an N x D matrix M in the convention M ~ v * diag(s) * u^T.
///  u: D x k right singular vectors, v: N x k left singular vectors,
///  s: descending, non-negative.
/// The largest-magnitude entry of each u column is made positive.
struct SvdResult {
  Matrix u;
  Vector s;
  Matrix v;
};

/// Top-k singular triplets of `m`. Deterministic for a given (m, k).
///
/// Small problems use a bidiagonal divide-and-conquer SVD, tall/wide problems
/// with a moderate short side use the eigendecomposition of the short-side Gram
/// matrix, and anything larger a seeded randomized range finder with power
/// iterations.
enum class SvdMethod { Auto, Dense, Gram, Randomized };

SvdResult truncated_svd(const Matrix& m, Index k, SvdMethod method = SvdMethod::Auto);

/// Top-k eigenpairs of a symmetric positive semi-definite Gram matrix G = M^T M,
/// returned as right singular vectors of M (u) and singular values (s = sqrt(lambda)).
/// `v` is left empty. Also reports the full eigenvalue spectrum if requested.
SvdResult svd_from_gram(const Matrix& gram, Index k, Vector* all_eigenvalues = nullptr);

/// Flips singular vector pairs so the largest-magnitude entry of each u column is positive.
void fix_signs(SvdResult& r);

/// Haar-distributed orthogonal n x n matrix: QR of a seeded standard normal
/// matrix with the sign of each column chosen so R has a positive diagonal.
Matrix random_orthogonal(Index n, std::uint64_t seed);

/// argmin_W ||inputs W - targets||^2 + ridge ||W||^2  (inputs N x d, targets N x c).
/// ridge == 0 yields the minimum-norm (pseudoinverse) solution.
Matrix least_squares_fit(const Matrix& inputs, const Matrix& targets, double ridge);

/// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) matrix.
Matrix uniform_fan_in(Index rows, Index cols, Index fan_in, std::uint64_t seed);

}  // namespace seqmem
