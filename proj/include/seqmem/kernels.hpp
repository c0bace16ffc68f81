#pragma once

// Batched forward/backward kernels. A batch of equal-length sequences is
// advanced in lock-step with one GEMM per weight matrix per timestep; work is
// split into fixed-size shards processed under OpenMP and reduced in shard
// order, so results never depend on the thread count. The per-sequence
// functions in models.hpp / training.hpp are the serial reference these
// kernels are tested against.

#include "seqmem/models.hpp"
#include "seqmem/training.hpp"

#include <cstdint>
#include <span>
#include <vector>

namespace seqmem {

/// Timestep-major truncation flags for a batch (t = 1..T, column b).
class TruncationMask {
public:
  TruncationMask() = default;
  TruncationMask(Index steps, Index batch) : steps_(steps), batch_(batch), bits_(static_cast<std::size_t>(steps * batch), 0) {}

  /// Mask whose column b follows `samplers[b]`.
  static TruncationMask from_samplers(Index steps, std::span<const TruncationSampler> samplers);

  bool empty() const { return bits_.empty(); }
  bool drop(Index t, Index b) const { return bits_[static_cast<std::size_t>((t - 1) * batch_ + b)] != 0; }
  void set(Index t, Index b, bool v) { bits_[static_cast<std::size_t>((t - 1) * batch_ + b)] = v ? 1 : 0; }
  /// 0/1 keep-multipliers for step t (1 x batch).
  Eigen::RowVectorXd keep_row(Index t) const;
  bool all_dropped(Index t) const;
  bool none_dropped(Index t) const;

private:
  Index steps_ = 0;
  Index batch_ = 0;
  std::vector<std::uint8_t> bits_;
};

/// Stored activations of a batched forward pass. Index t = 0..T; entry 0 is the zero initial state.
struct BatchTrace {
  ModelKind kind = ModelKind::Rnn;
  Index batch = 0;
  std::vector<Matrix> state;  // probed state (m or h), p x B
  std::vector<Matrix> aux;    // LMN: hidden h; LSTM: cell c
  std::vector<Matrix> gates;  // LSTM activated gates (4p x B), entry 0 unused

  Index steps() const { return static_cast<Index>(state.size()) - 1; }
};

/// `inputs[t-1]` is the d x B input at step t.
BatchTrace batch_forward(const Params& params, const std::vector<Matrix>& inputs);

/// Gradients w.r.t. the recurrent parameters (readout gradient left at zero).
/// `state_grads[t-1]` is the external gradient on the probed state at step t
/// (an empty matrix means zero). `norm_sums`, when given, receives
/// sum_b ||dE/ds^t_b|| for t = 0..T.
Params batch_backward(const Params& params, const BatchTrace& trace, const std::vector<Matrix>& inputs,
                      const std::vector<Matrix>& state_grads, const TruncationMask& mask,
                      std::vector<double>* norm_sums = nullptr);

/// Packs step t of every sequence into d x B matrices.
std::vector<Matrix> pack_inputs(std::span<const Matrix* const> seqs);

struct BatchGradient {
  double loss_sum = 0.0;
  Index correct = 0;
  Params grads;  // summed over the batch
};

/// Summed cross-entropy (+ activation term) and gradients over a minibatch.
/// `streams[b]` keys the truncation decisions of sequence b.
BatchGradient batch_loss_and_grad(const Params& params, std::span<const Matrix* const> seqs,
                                  std::span<const int> labels, std::span<const std::uint64_t> streams,
                                  double alpha_act, double trunc_p, std::uint64_t trunc_seed, Index shard_size);

/// Final logits (c x N) without storing a trace.
Matrix batch_final_logits(const Params& params, const SequenceBatch& batch, Index block = 256);

/// All probed states per sequence (p x T each).
std::vector<Matrix> batch_states(const Params& params, const SequenceBatch& batch, Index block = 256);

}  // namespace seqmem
