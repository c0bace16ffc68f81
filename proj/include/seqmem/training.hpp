#pragma once

#include "seqmem/data.hpp"
#include "seqmem/models.hpp"
#include "seqmem/rng.hpp"

#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <vector>

namespace seqmem {

struct TrainConfig {
  double lr = 1e-3;
  Index epochs = 10;
  Index batch_size = 64;
  double lambda_ortho = 0.0;
  double alpha_act = 0.0;
  double trunc_p = 0.0;
  std::uint64_t seed = 0;
  double ridge = 1e-6;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  double clip_norm = 10.0;  // global-norm clip; <= 0 disables
  Index shard_size = 64;    // sequences per kernel call; fixes the reduction order
  Index eval_batch = 256;
  bool verbose = false;
};

/// Non-finite loss during training.
class DivergenceError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

// ---- losses and penalties -------------------------------------------------

/// Softmax cross-entropy; writes dE/dlogits when `grad` is non-null.
double cross_entropy(const Vector& logits, int label, Vector* grad);

/// lambda * ||W^T W - I||_F^2, gradient 4 lambda W (W^T W - I).
double orthogonality_penalty(const Matrix& w, double lambda, Matrix* grad);

/// The recurrent matrix under the soft-orthogonality penalty (B, U, W_mm);
/// null for the LSTM.
const Matrix* recurrent_matrix(const Params& params);
Matrix* recurrent_matrix(Params& params);

struct PenaltyTerms {
  double loss = 0.0;
  Params grads;        // orthogonality-penalty gradient (zeros elsewhere)
  Matrix state_grads;  // p x T gradient of the activation term on the probed states
};

/// Orthogonality penalty on the recurrent matrix plus the activation term
/// alpha * (1/T) * sum_t ||s^t||^2 on the probed states of `trace`.
PenaltyTerms penalty_terms(const Params& params, double lambda_ortho, double alpha_act, const ForwardTrace& trace);

// ---- serial reference BPTT ------------------------------------------------

/// Per-sequence truncation decisions. With probability p the gradient on the
/// nonlinear recurrent edge into step t is dropped (LMN: m^{t-1} -> h^t,
/// RNN: h^{t-1} -> h^t, LSTM: h^{t-1} -> gates). The linear RNN and the LMN
/// memory-to-memory path are never truncated. Decisions are a pure function of
/// (seed, stream, t); p = 0 never consults the hash.
struct TruncationSampler {
  double p = 0.0;
  std::uint64_t seed = 0;
  std::uint64_t stream = 0;

  bool drop(Index t) const {
    if (p <= 0.0) return false;
    if (p >= 1.0) return true;
    return hash_uniform(seed, stream, static_cast<std::uint64_t>(t)) < p;
  }
};

/// Exact reverse-mode gradients of a loss whose dependence on the forward pass
/// is given by `logit_grad` (dE/dlogits at the final step, may be empty) and
/// `state_grads` (p x T external gradients on the probed states, may be empty).
/// When `state_grad_norms` is non-null it receives ||dE/ds^t|| for t = 0..T.
Params bptt_backward(const Params& params, const ForwardTrace& trace, const Vector& logit_grad,
                     const Matrix& state_grads, const TruncationSampler& sampler,
                     std::vector<double>* state_grad_norms = nullptr);

struct SequenceGradient {
  double loss = 0.0;
  bool correct = false;
  Params grads;
};

/// Cross-entropy on the final logits plus the activation term, through the
/// reference forward and backward passes.
SequenceGradient sequence_loss_and_grad(const Params& params, const Matrix& seq, int label, double alpha_act,
                                        const TruncationSampler& sampler);

// ---- parameter arithmetic and Adam ----------------------------------------

/// Parameter matrices in `for_each_param` order.
std::vector<Matrix*> param_matrices(Params& p);
std::vector<const Matrix*> param_matrices(const Params& p);

double squared_norm(const Params& p);
void scale_params(Params& p, double factor);
/// a += factor * b (same alternative required).
void axpy_params(Params& a, double factor, const Params& b);
Params zeros_like(const Params& p);
bool all_finite(const Params& p);

struct AdamState {
  std::vector<Matrix> first;
  std::vector<Matrix> second;
  long long step = 0;
};

struct AdamOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Bias-corrected Adam update in place. Lazily sizes `state` on first use.
void adam_step(Params& params, const Params& grads, AdamState& state, const AdamOptions& options);
/// Same update over an arbitrary list of matrices.
void adam_update(std::span<Matrix* const> params, std::span<const Matrix* const> grads, AdamState& state,
                 const AdamOptions& options);

// ---- training loop -----------------------------------------------------------

struct EpochRecord {
  Index epoch = 0;
  double train_loss = 0.0;
  double val_acc = 0.0;
  double seconds = 0.0;
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
  Index best_epoch = 0;
};

struct TrainResult {
  Params params;
  TrainHistory history;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Minibatch BPTT + Adam with seeded shuffling, global-norm clipping and the
/// penalties in `config`. Returns the parameters of the best validation epoch
/// (the initial parameters when `config.epochs == 0`).
TrainResult train_model(const Params& init, const LabeledSequences& train, const LabeledSequences& val,
                        const TrainConfig& config, const EpochCallback& on_epoch = {});

/// Fraction of sequences whose argmax final logit equals the label.
double evaluate_accuracy(const Params& params, const LabeledSequences& data, Index eval_batch = 256);

}  // namespace seqmem
