#pragma once

// Flat key=value experiment configuration: one assignment per line, `#`
// starts a comment, blank lines are ignored. Unknown keys are errors.

#include "seqmem/data.hpp"
#include "seqmem/training.hpp"

#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace seqmem {

class ConfigError : public std::runtime_error {
public:
  ConfigError(const std::string& key, const std::string& what)
      : std::runtime_error(key.empty() ? what : key + ": " + what), key_(key) {}
  const std::string& key() const { return key_; }

private:
  std::string key_;
};

struct ExperimentConfig {
  // data
  std::string task = "seq_mnist";  // seq_mnist | perm_mnist | synthetic
  std::filesystem::path data_dir;
  std::filesystem::path train_images, train_labels, test_images, test_labels;
  Index downsample = 1;
  ScaleMode scale = ScaleMode::Unit;
  Index train_count = 0;  // 0 = everything left after the validation split
  Index val_count = -1;   // -1 = task default
  Index test_count = 0;   // 0 = whole test set
  std::uint64_t perm_seed = 2020;
  std::uint64_t split_seed = 7;
  Index synthetic_n = 512;
  Index synthetic_t = 20;
  Index synthetic_d = 1;

  // model
  std::string model = "lmn";  // laes_linear | laes_svm | laes_ff | rnn | lmn | lstm | linear_rnn
  std::string init = "ortho";  // ortho | laes
  std::string objective = "classify";  // classify | reconstruct
  Index hidden = 128;
  TrainConfig train;

  // LAES fit
  Index laes_stride = 1;
  Index laes_max_prefixes = 0;
  Index laes_max_sequences = 4096;
  std::optional<bool> laes_center;  // unset: centered for the laes_* classifiers only

  // heads
  Index ff_hidden = 256;
  Index ff_epochs = 30;
  double ff_lr = 1e-3;
  double svm_c = 1.0;
  Index svm_epochs = 20;

  // probes
  std::vector<Index> probe_lags = {1, 5, 10, 25, 50, 100, 200, 300};
  double probe_ridge = 1e-8;
  Index probe_sequences = 500;
  Index grad_batch = 16;
  Index grad_stride = 1;
  Index sample = 0;

  // output
  std::filesystem::path output_dir = "out";
  bool history_timing = false;  // wall-clock seconds in the history CSV (breaks byte-identical reruns)

  bool is_mnist() const { return task != "synthetic"; }
  bool is_laes_classifier() const { return model.rfind("laes_", 0) == 0; }
  Index resolved_val_count() const;
  bool resolved_laes_center() const;
};

/// Applies one `key=value` assignment.
void apply_setting(ExperimentConfig& config, const std::string& key, const std::string& value);
void apply_assignment(ExperimentConfig& config, const std::string& assignment);

ExperimentConfig parse_config(const std::string& text, const std::string& source = "<config>");
ExperimentConfig load_config(const std::filesystem::path& path);

/// Fills dataset paths from `data_dir` (or SEQMEM_DATA_DIR) and checks that
/// every referenced file exists and values are in range.
void finalize_config(ExperimentConfig& config);

/// Every key with its current value, in a stable order (round-trips through parse_config).
std::string format_config(const ExperimentConfig& config);

}  // namespace seqmem
