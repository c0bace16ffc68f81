#pragma once

// Dataset assembly and the end-to-end pipelines shared by the CLI and the
// acceptance runner.

#include "seqmem/config.hpp"
#include "seqmem/heads.hpp"
#include "seqmem/laes.hpp"
#include "seqmem/models.hpp"
#include "seqmem/training.hpp"

#include <optional>

namespace seqmem {

struct Dataset {
  LabeledSequences train;
  LabeledSequences val;
  LabeledSequences test;
  Index classes = 0;
  Index image_rows = 0;  // 0 for non-image tasks
  Index image_cols = 0;
};

/// MNIST: seeded stratified validation split of the training file, then the
/// first `train_count` remaining images; the first `test_count` test images.
/// Synthetic: one generated pool sliced into train / val / test.
Dataset load_dataset(const ExperimentConfig& config);

ModelKind recurrent_kind(const std::string& model);

LaesFitOptions laes_fit_options(const ExperimentConfig& config, bool center);

/// Uncentered LAES on the training sequences plus a least-squares readout on its final states.
struct LaesInit {
  LaesModel laes;
  Matrix readout;
  LaesFitReport report;
};
LaesInit fit_laes_init(const ExperimentConfig& config, const Dataset& data);

/// Initial parameters for a backprop model: from `laes` when given, otherwise
/// the orthogonal (RNN, LMN, linear RNN) or uniform (LSTM) scheme.
Params initial_params(const ExperimentConfig& config, const Dataset& data, const LaesInit* laes);

struct LaesClassifier {
  LaesModel laes;
  LaesFitReport report;
  std::optional<LinearClassifier> linear;  // laes_linear, laes_svm
  std::optional<FeedForwardHead> ff;       // laes_ff

  std::vector<int> predict(const SequenceBatch& batch) const;
};

/// LAES fit followed by the configured head.
LaesClassifier fit_laes_classifier(const ExperimentConfig& config, const Dataset& data);

double accuracy_on(const LaesClassifier& model, const LabeledSequences& data);

}  // namespace seqmem
