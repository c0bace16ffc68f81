#include "seqmem/experiment.hpp"

#include "seqmem/init.hpp"

namespace seqmem {

namespace {

Matrix final_states_rows(const LaesModel& laes, const SequenceBatch& batch) {
  return laes_final_states(laes, batch).transpose();
}

}  // namespace

Dataset load_dataset(const ExperimentConfig& config) {
  Dataset out;
  const Index val_count = config.resolved_val_count();
  if (!config.is_mnist()) {
    const Index test_count = config.test_count > 0 ? config.test_count : std::max<Index>(1, config.synthetic_n / 4);
    const Index total = config.synthetic_n + val_count + test_count;
    const LabeledSequences pool = synthetic_copy_task(total, config.synthetic_t, config.synthetic_d, config.perm_seed);
    std::vector<Index> tr, va, te;
    for (Index i = 0; i < total; ++i)
      (i < config.synthetic_n ? tr : i < config.synthetic_n + val_count ? va : te).push_back(i);
    out.train = pool.subset(tr);
    out.val = pool.subset(va);
    out.test = pool.subset(te);
    out.classes = 2;
    return out;
  }

  const ImageSet train_images = load_idx(config.train_images, config.train_labels);
  ImageSet test_images = load_idx(config.test_images, config.test_labels);
  if (config.test_count > 0 && config.test_count < test_images.count) {
    std::vector<Index> idx(static_cast<std::size_t>(config.test_count));
    for (Index i = 0; i < config.test_count; ++i) idx[static_cast<std::size_t>(i)] = i;
    test_images = subset_images(test_images, idx);
  }

  const std::vector<int> labels(train_images.labels.begin(), train_images.labels.end());
  auto [train_idx, val_idx] = split_indices(labels, val_count, config.split_seed);
  if (config.train_count > 0 && config.train_count < static_cast<Index>(train_idx.size()))
    train_idx.resize(static_cast<std::size_t>(config.train_count));
  const ImageSet train_part = subset_images(train_images, train_idx);
  const ImageSet val_part = subset_images(train_images, val_idx);

  const ScaleStats stats =
      config.scale == ScaleMode::Centered ? compute_scale_stats(train_part, config.downsample) : ScaleStats{};
  out.image_rows = train_images.rows / config.downsample;
  out.image_cols = train_images.cols / config.downsample;
  std::optional<std::vector<Index>> perm;
  if (config.task == "perm_mnist") perm = fixed_permutation(out.image_rows * out.image_cols, config.perm_seed);
  const std::vector<Index>* pp = perm ? &*perm : nullptr;
  out.train = make_sequences(train_part, pp, config.scale, config.downsample, stats);
  out.val = make_sequences(val_part, pp, config.scale, config.downsample, stats);
  out.test = make_sequences(test_images, pp, config.scale, config.downsample, stats);
  out.classes = 10;
  return out;
}

ModelKind recurrent_kind(const std::string& model) {
  if (model == "rnn") return ModelKind::Rnn;
  if (model == "lmn") return ModelKind::Lmn;
  if (model == "lstm") return ModelKind::Lstm;
  if (model == "linear_rnn") return ModelKind::LinearRnn;
  throw ConfigError("model", "'" + model + "' is not a recurrent network");
}

LaesFitOptions laes_fit_options(const ExperimentConfig& config, bool center) {
  LaesFitOptions opts;
  opts.hidden = config.hidden;
  opts.prefixes.stride = config.laes_stride;
  opts.prefixes.max_prefixes = config.laes_max_prefixes;
  opts.prefixes.seed = hash_keys(config.train.seed, 0x6c616573ULL);
  opts.max_sequences = config.laes_max_sequences;
  opts.center = center;
  return opts;
}

LaesInit fit_laes_init(const ExperimentConfig& config, const Dataset& data) {
  LaesInit out;
  out.laes = fit_laes(data.train.batch, laes_fit_options(config, false), &out.report);
  out.readout = fit_linear_head(final_states_rows(out.laes, data.train.batch), data.train.labels, config.train.ridge,
                                data.classes);
  return out;
}

Params initial_params(const ExperimentConfig& config, const Dataset& data, const LaesInit* laes) {
  const ModelKind kind = recurrent_kind(config.model);
  const Index d = data.train.batch.dim();
  const Index p = config.hidden;
  const Index c = data.classes;
  const std::uint64_t seed = config.train.seed;
  if (laes) {
    switch (kind) {
      case ModelKind::Rnn: return init_rnn_from_laes(laes->laes, laes->readout);
      case ModelKind::Lmn: return init_lmn_from_laes(laes->laes, laes->readout);
      case ModelKind::LinearRnn: return init_linear_rnn_from_laes(laes->laes, laes->readout);
      case ModelKind::Lstm: throw ConfigError("init", "laes initialization is not defined for the LSTM");
    }
  }
  switch (kind) {
    case ModelKind::Rnn: return init_orthogonal_rnn(p, d, c, seed);
    case ModelKind::Lmn: return init_orthogonal_lmn(p, d, c, seed);
    case ModelKind::LinearRnn: return init_orthogonal_linear_rnn(p, d, c, seed);
    case ModelKind::Lstm: return init_lstm(p, d, c, seed);
  }
  throw ConfigError("model", "unsupported model");
}

std::vector<int> LaesClassifier::predict(const SequenceBatch& batch) const {
  const Matrix states = laes_final_states(laes, batch);
  if (linear) return linear->predict(states);
  if (ff) return ff->predict(states);
  throw std::logic_error("LaesClassifier: no head");
}

LaesClassifier fit_laes_classifier(const ExperimentConfig& config, const Dataset& data) {
  LaesClassifier out;
  out.laes = fit_laes(data.train.batch, laes_fit_options(config, config.resolved_laes_center()), &out.report);
  const Matrix states = laes_final_states(out.laes, data.train.batch);
  const std::uint64_t seed = hash_keys(config.train.seed, 0x68656164ULL);
  if (config.model == "laes_linear") {
    out.linear = fit_ridge_head(states, data.train.labels, config.train.ridge, data.classes);
  } else if (config.model == "laes_svm") {
    out.linear = fit_svm_head(states, data.train.labels, data.classes,
                              SvmOptions{config.svm_c, config.svm_epochs, config.train.batch_size, seed});
  } else if (config.model == "laes_ff") {
    std::optional<Matrix> val_states;
    if (!data.val.batch.empty()) val_states = laes_final_states(out.laes, data.val.batch);
    out.ff = fit_ff_head(states, data.train.labels, data.classes,
                         FfOptions{config.ff_hidden, config.ff_lr, config.ff_epochs, config.train.batch_size, seed},
                         val_states ? &*val_states : nullptr, data.val.labels);
  } else {
    throw ConfigError("model", "'" + config.model + "' is not a LAES classifier");
  }
  return out;
}

double accuracy_on(const LaesClassifier& model, const LabeledSequences& data) {
  return accuracy(model.predict(data.batch), data.labels);
}

}  // namespace seqmem
