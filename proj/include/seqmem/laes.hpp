#pragma once

#include "seqmem/data.hpp"
#include "seqmem/numerics.hpp"

#include <cstdint>
#include <functional>

namespace seqmem {

/// Linear autoencoder for sequences.
///
/// Encoder:  m^t = A x^t + B m^{t-1},  m^0 = 0
/// Decoder:  [x~^t ; m~^{t-1}] = C m^t  with  C = [A^T ; B^T]
///
/// `mean` is subtracted from every input before encoding and added back after
/// decoding; it is zero unless the model was fitted with centering.
struct LaesModel {
  Matrix a;     // p x d
  Matrix b;     // p x p
  Vector mean;  // d

  Index hidden() const { return a.rows(); }
  Index input_dim() const { return a.cols(); }
  /// (d + p) x p decoder, always derived from the encoder.
  Matrix decoder() const;
};

/// Prefix-end selection for the prefix matrix: every `stride`-th timestep plus
/// the final one, then at most `max_prefixes` rows drawn uniformly with `seed`
/// (0 means no cap).
struct PrefixSelection {
  Index stride = 1;
  Index max_prefixes = 0;
  std::uint64_t seed = 0;
};

/// (sequence, prefix end) pairs in sequence-major, ascending-time order.
/// `end` is 1-based.
struct PrefixRow {
  Index sequence;
  Index end;
};
std::vector<PrefixRow> select_prefixes(const SequenceBatch& batch, const PrefixSelection& sel);

/// Rows are reversed prefixes [x^t, x^{t-1}, ..., x^1] zero-padded to T_max * d columns.
Matrix build_prefix_matrix(const SequenceBatch& batch, Index prefix_stride, Index max_prefixes,
                           std::uint64_t seed);

struct LaesFitOptions {
  Index hidden = 0;
  PrefixSelection prefixes;
  /// Sequences used for the fit, drawn with `prefixes.seed` (0 = all).
  Index max_sequences = 0;
  bool center = false;
};

struct LaesFitReport {
  Index rows = 0;          // prefix rows used
  Index columns = 0;       // T_max * d
  Index rank_used = 0;     // number of singular values above the numerical-rank tolerance among the first p
  Index numerical_rank = 0;
  Vector singular_values;  // full spectrum when available
  double total_energy = 0.0;
  double tail_energy = 0.0;  // sum of sigma_i^2 for i > p
};

/// Closed-form fit: SVD of the prefix matrix Xi = V S U^T, then A = U^T P and
/// B = U^T R U with P = [I_d; 0; ...] and R the block down-shift by d.
LaesModel fit_laes(const SequenceBatch& batch, const LaesFitOptions& options,
                   LaesFitReport* report = nullptr);

/// All states m^1..m^T, one row per timestep (T x p).
Matrix laes_encode(const LaesModel& model, const Matrix& seq);

/// Final states of every sequence as columns (p x N), batched over equal-length runs.
Matrix laes_final_states(const LaesModel& model, const SequenceBatch& batch);

/// Unrolls the decoder from `m`: row k estimates x^{t-k}.
Matrix laes_decode_unroll(const LaesModel& model, const Vector& m, Index steps);

using DecodeFn = std::function<Matrix(const Vector& state, Index steps)>;

/// E(x) = sum_k || dec^k(h^T) - x^{T-k} ||^2 for the final state (last row of `states`).
double stm_error(const Matrix& states, const DecodeFn& decode, const Matrix& seq);

}  // namespace seqmem
