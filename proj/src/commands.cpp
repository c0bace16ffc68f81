#include "seqmem/commands.hpp"

#include "seqmem/checkpoint.hpp"
#include "seqmem/diagnostics.hpp"
#include "seqmem/experiment.hpp"
#include "seqmem/init.hpp"
#include "seqmem/kernels.hpp"

#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>

namespace seqmem {

namespace {

namespace fs = std::filesystem;

fs::path output_path(const ExperimentConfig& config, const std::string& name) {
  fs::create_directories(config.output_dir);
  return config.output_dir / name;
}

const fs::path& require_checkpoint(const CommandOptions& opts) {
  if (opts.checkpoint) return *opts.checkpoint;
  if (opts.init_from) return *opts.init_from;
  throw ConfigError("--checkpoint", "this command needs a checkpoint");
}

LabeledSequences head_of(const LabeledSequences& data, Index n) {
  n = std::min(n, data.size());
  std::vector<Index> idx(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) idx[static_cast<std::size_t>(i)] = i;
  return data.subset(idx);
}

/// Recurrent parameters stored in a checkpoint, or built from a LAES it holds.
Params params_from(const Checkpoint& ckpt, const ExperimentConfig& config, const Dataset& data) {
  if (const auto kind = stored_model_kind(ckpt)) return params_from_checkpoint(ckpt, *kind);
  if (const auto laes = laes_from_checkpoint(ckpt)) {
    LaesInit li;
    li.laes = *laes;
    li.readout = fit_linear_head(laes_final_states(li.laes, data.train.batch).transpose(), data.train.labels,
                                 config.train.ridge, data.classes);
    return initial_params(config, data, &li);
  }
  throw CheckpointError("checkpoint holds neither a recurrent model nor a LAES");
}

Params config_params(const ExperimentConfig& config, const Dataset& data) {
  if (config.init == "laes") {
    const LaesInit li = fit_laes_init(config, data);
    return initial_params(config, data, &li);
  }
  return initial_params(config, data, nullptr);
}

std::optional<LaesClassifier> laes_classifier_from(const Checkpoint& ckpt) {
  auto laes = laes_from_checkpoint(ckpt);
  if (!laes) return std::nullopt;
  LaesClassifier m;
  m.laes = *laes;
  m.linear = linear_head_from_checkpoint(ckpt);
  m.ff = ff_head_from_checkpoint(ckpt);
  if (!m.linear && !m.ff) return std::nullopt;
  return m;
}

std::optional<ReconstructionModel> reconstruction_from(const Checkpoint& ckpt) {
  const Matrix* bias = find_entry(ckpt, "reco.out_bias");
  const auto kind = stored_model_kind(ckpt);
  if (!bias || !kind) return std::nullopt;
  return ReconstructionModel{params_from_checkpoint(ckpt, *kind), *bias};
}

double reconstruction_mae(const std::vector<Matrix>& reversed, const SequenceBatch& batch) {
  double sum = 0.0;
  double count = 0.0;
  for (std::size_t i = 0; i < reversed.size(); ++i) {
    const Matrix& seq = batch.sequences[i];
    sum += (reversed[i] - seq.colwise().reverse()).cwiseAbs().sum();
    count += static_cast<double>(seq.size());
  }
  return sum / count;
}

void emit(std::ostream& out, const std::string& key, double value) {
  out << key << '=' << std::setprecision(9) << value << '\n';
}

}  // namespace

void cmd_fit_laes(const CommandOptions& opts, std::ostream& out) {
  const ExperimentConfig& config = opts.config;
  const Dataset data = load_dataset(config);
  LaesFitReport report;
  const LaesModel laes = fit_laes(data.train.batch, laes_fit_options(config, config.resolved_laes_center()), &report);
  Checkpoint ckpt;
  append_laes(ckpt, laes);
  write_checkpoint(output_path(config, "laes.ckpt"), ckpt);

  const Index sample = std::min<Index>(16, data.train.size());
  double err = 0.0;
  double energy = 0.0;
  const DecodeFn decode = [&](const Vector& m, Index steps) { return laes_decode_unroll(laes, m, steps); };
  for (Index i = 0; i < sample; ++i) {
    const Matrix& seq = data.train.batch.sequences[static_cast<std::size_t>(i)];
    err += stm_error(laes_encode(laes, seq), decode, seq);
    energy += seq.squaredNorm();
  }
  std::ostringstream lines;
  lines << "rows=" << report.rows << "\ncolumns=" << report.columns << "\nhidden=" << laes.hidden()
        << "\nrank_used=" << report.rank_used << "\nnumerical_rank=" << report.numerical_rank << '\n';
  emit(lines, "total_energy", report.total_energy);
  emit(lines, "tail_energy", report.tail_energy);
  emit(lines, "stm_error", err / static_cast<double>(std::max<Index>(sample, 1)));
  emit(lines, "stm_error_relative", energy > 0 ? err / energy : 0.0);
  std::ofstream(output_path(config, "fit_report.txt")) << lines.str();
  out << lines.str();
}

void cmd_train(const CommandOptions& opts, std::ostream& out) {
  const ExperimentConfig& config = opts.config;
  const Dataset data = load_dataset(config);

  if (config.is_laes_classifier()) {
    const LaesClassifier m = fit_laes_classifier(config, data);
    Checkpoint ckpt;
    append_laes(ckpt, m.laes);
    if (m.linear) append_linear_head(ckpt, *m.linear);
    if (m.ff) append_ff_head(ckpt, *m.ff);
    write_checkpoint(output_path(config, "model.ckpt"), ckpt);
    if (!data.val.batch.empty()) emit(out, "val_acc", accuracy_on(m, data.val));
    emit(out, "test_acc", accuracy_on(m, data.test));
    return;
  }

  Params init = opts.init_from ? params_from(read_checkpoint(*opts.init_from), config, data) : config_params(config, data);

  if (config.objective == "reconstruct") {
    std::vector<double> losses;
    const ReconstructionModel trained = train_reconstruction(
        make_reconstruction_model(std::move(init), hash_keys(config.train.seed, 0x72ULL)), data.train.batch,
        config.train, &losses);
    Checkpoint ckpt;
    append_params(ckpt, trained.cell);
    ckpt.push_back({"reco.out_bias", trained.out_bias});
    write_checkpoint(output_path(config, "model.ckpt"), ckpt);
    std::ofstream csv(output_path(config, "reco_history.csv"));
    csv << "epoch,train_loss\n" << std::setprecision(9);
    for (std::size_t e = 0; e < losses.size(); ++e) csv << e + 1 << ',' << losses[e] << '\n';
    emit(out, "test_mae", reconstruction_mae(reconstruct_sequences(trained, data.test.batch), data.test.batch));
    return;
  }

  if (kind_of(init) != recurrent_kind(config.model))
    throw ConfigError("model", "checkpoint holds a " + std::string(to_string(kind_of(init))) + " model");
  const TrainResult result = train_model(init, data.train, data.val, config.train);
  Checkpoint ckpt;
  append_params(ckpt, result.params);
  write_checkpoint(output_path(config, "model.ckpt"), ckpt);
  write_history_csv(output_path(config, "history.csv"), result.history, config.history_timing);
  if (!data.val.batch.empty()) emit(out, "val_acc", evaluate_accuracy(result.params, data.val, config.train.eval_batch));
  emit(out, "test_acc", evaluate_accuracy(result.params, data.test, config.train.eval_batch));
}

void cmd_eval(const CommandOptions& opts, std::ostream& out) {
  const Dataset data = load_dataset(opts.config);
  const Checkpoint ckpt = read_checkpoint(require_checkpoint(opts));
  if (const auto m = laes_classifier_from(ckpt)) {
    emit(out, "test_acc", accuracy_on(*m, data.test));
    return;
  }
  const auto kind = stored_model_kind(ckpt);
  if (!kind) throw CheckpointError("checkpoint holds no classifier");
  emit(out, "test_acc", evaluate_accuracy(params_from_checkpoint(ckpt, *kind), data.test, opts.config.train.eval_batch));
}

void cmd_probe_grad(const CommandOptions& opts, std::ostream& out) {
  const ExperimentConfig& config = opts.config;
  const Dataset data = load_dataset(config);
  const Params params = (opts.checkpoint || opts.init_from) ? params_from(read_checkpoint(require_checkpoint(opts)), config, data)
                                                            : config_params(config, data);
  const LabeledSequences probe = head_of(data.test, config.grad_batch);
  const GradientCurve curve = gradient_through_time(params, probe, config.train.trunc_p, hash_keys(config.train.seed, 0x67ULL));
  write_gradient_csv(output_path(config, "grad_curve.csv"), curve, config.grad_stride);
  const double last = curve.front().grad_norm;
  emit(out, "grad_T", last);
  emit(out, "grad_0", curve.back().grad_norm);
  if (curve.size() > 50) emit(out, "ratio_50", last > 0 ? curve[50].grad_norm / last : 0.0);
}

void cmd_probe_reco(const CommandOptions& opts, std::ostream& out) {
  const ExperimentConfig& config = opts.config;
  const Dataset data = load_dataset(config);
  const Checkpoint ckpt = read_checkpoint(require_checkpoint(opts));
  const LabeledSequences probe = head_of(data.test, config.probe_sequences);
  std::vector<Matrix> states;
  LagProbeOptions po;
  po.ridge = config.probe_ridge;
  if (const auto kind = stored_model_kind(ckpt)) {
    states = batch_states(params_from_checkpoint(ckpt, *kind), probe.batch);
    po.model_tag = std::string(to_string(*kind)) + "-" + config.init;
  } else if (const auto laes = laes_from_checkpoint(ckpt)) {
    for (const auto& seq : probe.batch.sequences) states.push_back(laes_encode(*laes, seq).transpose());
    po.model_tag = "laes";
  } else {
    throw CheckpointError("checkpoint holds neither a recurrent model nor a LAES");
  }
  const auto rows = lag_reconstruction_probe(states, probe.batch.sequences, config.probe_lags, po);
  write_lag_csv(output_path(config, "lag_probe.csv"), rows);
  for (const auto& r : rows) emit(out, "mse_k" + std::to_string(r.lag), r.mse);
}

void cmd_reconstruct(const CommandOptions& opts, std::ostream& out) {
  const ExperimentConfig& config = opts.config;
  const Dataset data = load_dataset(config);
  if (data.image_rows == 0) throw ConfigError("task", "reconstruct needs an image task");
  if (config.sample >= data.test.size())
    throw ConfigError("sample", "index " + std::to_string(config.sample) + " outside the test set");
  const Matrix& seq = data.test.batch.sequences[static_cast<std::size_t>(config.sample)];
  const Checkpoint ckpt = read_checkpoint(require_checkpoint(opts));
  Matrix image;
  if (const auto reco = reconstruction_from(ckpt)) {
    SequenceBatch one;
    one.sequences.push_back(seq);
    image = unroll_to_image(reconstruct_sequences(*reco, one).front(), data.image_rows, data.image_cols);
  } else if (const auto laes = laes_from_checkpoint(ckpt)) {
    image = laes_image_reconstruction(*laes, seq, data.image_rows, data.image_cols);
  } else {
    throw CheckpointError("checkpoint holds neither a reconstruction model nor a LAES");
  }
  const Matrix original = unroll_to_image(seq.colwise().reverse(), data.image_rows, data.image_cols);
  const std::string stem = "sample_" + std::to_string(config.sample);
  write_pgm(output_path(config, stem + "_original.pgm"), original);
  write_pgm(output_path(config, stem + "_reconstruction.pgm"), image);
  emit(out, "mae", mean_absolute_error(original, image));
}

int run_command(const std::string& name, const CommandOptions& opts, std::ostream& out, std::ostream& err) {
  try {
    if (name == "fit-laes") cmd_fit_laes(opts, out);
    else if (name == "train") cmd_train(opts, out);
    else if (name == "eval") cmd_eval(opts, out);
    else if (name == "probe-grad") cmd_probe_grad(opts, out);
    else if (name == "probe-reco") cmd_probe_reco(opts, out);
    else if (name == "reconstruct") cmd_reconstruct(opts, out);
    else throw ConfigError("command", "unknown command '" + name + "'");
    return kExitOk;
  } catch (const DivergenceError& e) {
    err << "error: " << e.what() << '\n';
    return kExitDiverged;
  } catch (const NumericalError& e) {
    err << "error: " << e.what() << '\n';
    return kExitDiverged;
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const IdxError& e) {
    err << "error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const CheckpointError& e) {
    err << "error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::invalid_argument& e) {
    err << "error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << '\n';
    return kExitConfig;
  }
}

}  // namespace seqmem
