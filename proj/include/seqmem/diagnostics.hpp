#pragma once

#include "seqmem/data.hpp"
#include "seqmem/laes.hpp"
#include "seqmem/models.hpp"
#include "seqmem/training.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace seqmem {

// ---- gradient propagation through time --------------------------------------

struct GradientPoint {
  Index t = 0;
  double grad_norm = 0.0;
};

/// One row per timestep, from t = T down to 0.
using GradientCurve = std::vector<GradientPoint>;

/// Injects the cross-entropy error (softmax - onehot) at the final step only
/// and records ||dE/ds^t|| averaged over the batch, where s is the probed
/// state. Sequences must share one length.
GradientCurve gradient_through_time(const Params& params, const LabeledSequences& data, double trunc_p,
                                    std::uint64_t seed);

// ---- lag reconstruction probe -------------------------------------------------

struct LagProbeResult {
  Index lag = 0;
  double mse = 0.0;
  std::string model_tag;
};

struct LagProbeOptions {
  double ridge = 1e-8;
  /// Fraction of sequences (taken from the end) used to score each fit.
  double holdout = 0.2;
  std::string model_tag;
};

/// For each lag k a separate affine least-squares map from s^t to x^{t-k}
/// over all valid (sequence, t); reports the held-out mean squared error per
/// input coordinate. `states[i]` is p x T_i, `inputs[i]` is T_i x d.
std::vector<LagProbeResult> lag_reconstruction_probe(const std::vector<Matrix>& states,
                                                     const std::vector<Matrix>& inputs, const std::vector<Index>& lags,
                                                     const LagProbeOptions& options = {});

// ---- image reconstructions ----------------------------------------------------

/// Reassembles a decoder unroll (row k estimates x^{T-k}) into a rows x cols image.
Matrix unroll_to_image(const Matrix& unroll, Index rows, Index cols);

/// LAES reconstruction of one d=1 image sequence from its final state.
Matrix laes_image_reconstruction(const LaesModel& model, const Matrix& seq, Index rows, Index cols);

double mean_absolute_error(const Matrix& a, const Matrix& b);

/// Binary PGM (P5, maxval 255); values are clamped to [0, 1].
void write_pgm(const std::filesystem::path& path, const Matrix& image);

/// Sequence-to-sequence reconstruction model: one recurrent cell reads the T
/// inputs, then keeps running on zero inputs for T-1 more steps; a linear
/// output layer on states T..2T-1 emits x^T, x^{T-1}, ..., x^1.
struct ReconstructionModel {
  Params cell;     // RNN or LSTM; the readout w_o (d x p) is the output layer
  Matrix out_bias;  // d x 1
};

/// Replaces the cell's readout with a uniform d x p output layer and a zero bias.
ReconstructionModel make_reconstruction_model(Params cell, std::uint64_t seed);

/// Reversed reconstruction (T x d, row k estimates x^{T-k}) of every sequence.
std::vector<Matrix> reconstruct_sequences(const ReconstructionModel& model, const SequenceBatch& batch);

struct ReconstructionGradient {
  double loss = 0.0;  // mean over sequences of the per-element squared error
  Params grads;
  Matrix bias_grad;
};

/// Loss and exact gradients for a batch of equal-length sequences.
ReconstructionGradient reconstruction_loss_and_grad(const ReconstructionModel& model,
                                                    std::span<const Matrix* const> seqs);

/// Adam on the reconstruction loss (lr, epochs, batch_size, lambda_ortho,
/// clip_norm and seed from `config`).
ReconstructionModel train_reconstruction(const ReconstructionModel& init, const SequenceBatch& data,
                                         const TrainConfig& config, std::vector<double>* loss_history = nullptr);

// ---- CSV ------------------------------------------------------------------------

/// Header `t,grad_norm`; every `stride`-th row plus t = T and t = 0.
void write_gradient_csv(const std::filesystem::path& path, const GradientCurve& curve, Index stride = 1);
/// Header `k,mse,model_tag`.
void write_lag_csv(const std::filesystem::path& path, const std::vector<LagProbeResult>& rows);
/// Header `epoch,train_loss,val_acc,seconds`.
void write_history_csv(const std::filesystem::path& path, const TrainHistory& history, bool with_timing = true);

}  // namespace seqmem
