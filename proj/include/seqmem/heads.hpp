#pragma once

// Classifiers on frozen encoder states. All heads take states as columns (p x N).

#include "seqmem/numerics.hpp"

#include <cstdint>
#include <span>
#include <vector>

namespace seqmem {

/// scores = W s + b.
struct LinearClassifier {
  Matrix w;  // c x p
  Vector b;  // c

  Matrix scores(const Matrix& states) const;
  std::vector<int> predict(const Matrix& states) const;
};

/// Per-feature mean / standard deviation (constant features get scale 1).
struct Standardizer {
  Vector mean;
  Vector scale;

  static Standardizer fit(const Matrix& states);
  Matrix apply(const Matrix& states) const;
};

double accuracy(std::span<const int> predicted, std::span<const int> labels);

/// Least-squares readout with an intercept.
LinearClassifier fit_ridge_head(const Matrix& states, std::span<const int> labels, double ridge, Index classes);

struct SvmOptions {
  double c_reg = 1.0;  // regularization lambda = 1 / (c_reg * N)
  Index epochs = 20;
  Index batch_size = 64;
  std::uint64_t seed = 0;
};

/// One-vs-rest linear SVM: minibatch subgradient descent on the L2-regularized
/// hinge loss with 1/(lambda t) steps, returning the averaged iterate.
/// Features are standardized internally and a constant feature provides the bias;
/// the result is expressed on the raw states. `objective_trace`, when given,
/// receives the mean one-vs-rest objective of the averaged iterate after each epoch.
LinearClassifier fit_svm_head(const Matrix& states, std::span<const int> labels, Index classes,
                              const SvmOptions& options, std::vector<double>* objective_trace = nullptr);

/// logits = W2 tanh(W1 s + b1) + b2, or W2 s + b2 without a hidden layer.
struct FeedForwardHead {
  Matrix w1;  // h x p (empty when linear)
  Matrix b1;  // h x 1
  Matrix w2;  // c x h (c x p when linear)
  Matrix b2;  // c x 1

  Index hidden() const { return w1.rows(); }
  Matrix logits(const Matrix& states) const;
  std::vector<int> predict(const Matrix& states) const;
};

struct FfLossGrad {
  double loss = 0.0;  // mean cross-entropy
  FeedForwardHead grads;
};

FfLossGrad ff_loss_and_grad(const FeedForwardHead& head, const Matrix& states, std::span<const int> labels);

struct FfOptions {
  Index hidden = 256;
  double lr = 1e-3;
  Index epochs = 30;
  Index batch_size = 64;
  std::uint64_t seed = 0;
};

/// Adam on the cross-entropy of a one-hidden-layer tanh network. When
/// validation states are given the best validation epoch is kept.
FeedForwardHead fit_ff_head(const Matrix& states, std::span<const int> labels, Index classes, const FfOptions& options,
                            const Matrix* val_states = nullptr, std::span<const int> val_labels = {});

}  // namespace seqmem
