#pragma once

#include "seqmem/laes.hpp"
#include "seqmem/models.hpp"

#include <cstdint>
#include <span>

namespace seqmem {

// Networks initialized from a fitted LAES. The LAES must be uncentered since
// the networks have no input bias.

/// V = A, U = B, W_o = readout.
RnnParams init_rnn_from_laes(const LaesModel& laes, const Matrix& readout);

/// W_xh = A, W_mh = 0, W_hm = I, W_mm = B, W_o = readout. The nonlinearity
/// then only touches A x^t: m^t = B m^{t-1} + tanh(A x^t).
LmnParams init_lmn_from_laes(const LaesModel& laes, const Matrix& readout);

LinearRnnParams init_linear_rnn_from_laes(const LaesModel& laes, const Matrix& readout);

// Orthogonal recurrent matrix, uniform(+-1/sqrt(fan_in)) everywhere else.
RnnParams init_orthogonal_rnn(Index p, Index d, Index c, std::uint64_t seed);
LmnParams init_orthogonal_lmn(Index p, Index d, Index c, std::uint64_t seed);
LinearRnnParams init_orthogonal_linear_rnn(Index p, Index d, Index c, std::uint64_t seed);

/// Uniform(+-1/sqrt(d+p)) gates, zero biases except the forget gate (1.0).
LstmParams init_lstm(Index p, Index d, Index c, std::uint64_t seed);

/// One-hot targets (N x classes).
Matrix one_hot(std::span<const int> labels, Index classes);

/// Least-squares readout from final states (N x p) to one-hot labels; returns classes x p.
Matrix fit_linear_head(const Matrix& states, std::span<const int> labels, double ridge, Index classes);

}  // namespace seqmem
