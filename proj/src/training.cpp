#include "seqmem/training.hpp"

#include "seqmem/kernels.hpp"

#include <chrono>
#include <cmath>
#include <iostream>
#include <numeric>
#include <sstream>

namespace seqmem {

std::vector<Matrix*> param_matrices(Params& p) {
  std::vector<Matrix*> out;
  std::visit([&](auto& q) { for_each_param(q, [&](std::string_view, Matrix& m) { out.push_back(&m); }); }, p);
  return out;
}

std::vector<const Matrix*> param_matrices(const Params& p) {
  std::vector<const Matrix*> out;
  std::visit([&](const auto& q) { for_each_param(q, [&](std::string_view, const Matrix& m) { out.push_back(&m); }); }, p);
  return out;
}

namespace {

void require_same_layout(const std::vector<Matrix*>& a, const std::vector<const Matrix*>& b, const char* what) {
  if (a.size() != b.size()) throw DimensionError(std::string(what) + ": parameter bundles differ");
  for (std::size_t i = 0; i < a.size(); ++i)
    if (a[i]->rows() != b[i]->rows() || a[i]->cols() != b[i]->cols())
      throw DimensionError(std::string(what) + ": parameter shapes differ");
}

}  // namespace

double squared_norm(const Params& p) {
  double s = 0.0;
  for (const Matrix* m : param_matrices(p)) s += m->squaredNorm();
  return s;
}

void scale_params(Params& p, double factor) {
  for (Matrix* m : param_matrices(p)) *m *= factor;
}

void axpy_params(Params& a, double factor, const Params& b) {
  if (a.index() != b.index()) throw DimensionError("axpy_params: different model kinds");
  auto dst = param_matrices(a);
  require_same_layout(dst, param_matrices(b), "axpy_params");
  const auto src = param_matrices(b);
  for (std::size_t i = 0; i < dst.size(); ++i) *dst[i] += factor * *src[i];
}

Params zeros_like(const Params& p) {
  return std::visit([](const auto& q) -> Params { return zeros_like(q); }, p);
}

bool all_finite(const Params& p) {
  for (const Matrix* m : param_matrices(p))
    if (!m->allFinite()) return false;
  return true;
}

void adam_update(std::span<Matrix* const> w, std::span<const Matrix* const> g, AdamState& state,
                 const AdamOptions& options) {
  if (w.size() != g.size()) throw DimensionError("adam_update: parameter and gradient counts differ");
  for (std::size_t i = 0; i < w.size(); ++i)
    if (w[i]->rows() != g[i]->rows() || w[i]->cols() != g[i]->cols())
      throw DimensionError("adam_update: gradient shape differs from parameter");
  if (state.first.empty()) {
    for (const Matrix* m : w) {
      state.first.push_back(Matrix::Zero(m->rows(), m->cols()));
      state.second.push_back(Matrix::Zero(m->rows(), m->cols()));
    }
  }
  if (state.first.size() != w.size()) throw DimensionError("adam_update: optimizer state does not match parameters");
  ++state.step;
  const double bc1 = 1.0 - std::pow(options.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(options.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < w.size(); ++i) {
    Matrix& m1 = state.first[i];
    Matrix& m2 = state.second[i];
    if (m1.rows() != w[i]->rows() || m1.cols() != w[i]->cols()) throw DimensionError("adam_update: moment shape");
    m1 = options.beta1 * m1 + (1.0 - options.beta1) * *g[i];
    m2 = options.beta2 * m2 + (1.0 - options.beta2) * g[i]->cwiseProduct(*g[i]);
    w[i]->array() -= options.lr * (m1.array() / bc1) / ((m2.array() / bc2).sqrt() + options.eps);
  }
}

void adam_step(Params& params, const Params& grads, AdamState& state, const AdamOptions& options) {
  if (params.index() != grads.index()) throw DimensionError("adam_step: gradient kind differs from parameters");
  const auto w = param_matrices(params);
  const auto g = param_matrices(grads);
  adam_update(w, g, state, options);
}

double evaluate_accuracy(const Params& params, const LabeledSequences& data, Index eval_batch) {
  if (data.batch.empty()) throw std::invalid_argument("evaluate_accuracy: empty dataset");
  const Matrix logits = batch_final_logits(params, data.batch, eval_batch);
  Index correct = 0;
  for (Index i = 0; i < logits.cols(); ++i) {
    Index arg = 0;
    logits.col(i).maxCoeff(&arg);
    if (arg == data.labels[static_cast<std::size_t>(i)]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(logits.cols());
}

TrainResult train_model(const Params& init, const LabeledSequences& train, const LabeledSequences& val,
                        const TrainConfig& config, const EpochCallback& on_epoch) {
  const Index n = train.batch.size();
  if (n == 0) throw std::invalid_argument("train_model: empty training set");
  if (static_cast<Index>(train.labels.size()) != n) throw DimensionError("train_model: label count mismatch");
  if (config.batch_size < 1) throw std::invalid_argument("train_model: batch_size must be >= 1");

  TrainResult result{init, {}};
  Params params = init;
  AdamState adam;
  const AdamOptions opts{config.lr, config.adam_beta1, config.adam_beta2, config.adam_eps};
  const std::uint64_t trunc_seed = hash_keys(config.seed, 0x7472756e63ULL);
  double best_acc = -1.0;

  std::vector<Index> order(static_cast<std::size_t>(n));
  std::vector<const Matrix*> seqs;
  std::vector<int> labels;
  std::vector<std::uint64_t> streams;

  for (Index epoch = 1; epoch <= config.epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    std::iota(order.begin(), order.end(), Index{0});
    SplitMix64 rng(hash_keys(config.seed, 0x73687566ULL, static_cast<std::uint64_t>(epoch)));
    for (Index i = n - 1; i > 0; --i)
      std::swap(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(rng.below(static_cast<std::uint64_t>(i + 1)))]);

    double loss_sum = 0.0;
    Index batches = 0;
    for (Index begin = 0; begin < n; begin += config.batch_size) {
      const Index len = std::min(config.batch_size, n - begin);
      seqs.clear();
      labels.clear();
      streams.clear();
      for (Index j = begin; j < begin + len; ++j) {
        const Index idx = order[static_cast<std::size_t>(j)];
        seqs.push_back(&train.batch.sequences[static_cast<std::size_t>(idx)]);
        labels.push_back(train.labels[static_cast<std::size_t>(idx)]);
        streams.push_back(hash_keys(static_cast<std::uint64_t>(epoch), static_cast<std::uint64_t>(idx)));
      }
      BatchGradient bg = batch_loss_and_grad(params, seqs, labels, streams, config.alpha_act, config.trunc_p,
                                             trunc_seed, config.shard_size);
      Params grads = std::move(bg.grads);
      scale_params(grads, 1.0 / static_cast<double>(len));
      double loss = bg.loss_sum / static_cast<double>(len);
      if (const Matrix* w = recurrent_matrix(params); w && config.lambda_ortho != 0.0) {
        Matrix g;
        loss += orthogonality_penalty(*w, config.lambda_ortho, &g);
        *recurrent_matrix(grads) += g;
      }
      if (!std::isfinite(loss) || !all_finite(grads)) {
        std::ostringstream msg;
        msg << "train_model: non-finite loss at epoch " << epoch << ", minibatch " << batches + 1 << " (loss=" << loss
            << ", lr=" << config.lr << ")";
        throw DivergenceError(msg.str());
      }
      if (config.clip_norm > 0.0) {
        const double norm = std::sqrt(squared_norm(grads));
        if (norm > config.clip_norm) scale_params(grads, config.clip_norm / norm);
      }
      adam_step(params, grads, adam, opts);
      loss_sum += loss;
      ++batches;
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(batches);
    rec.val_acc = val.batch.empty() ? 0.0 : evaluate_accuracy(params, val, config.eval_batch);
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    result.history.epochs.push_back(rec);
    if (val.batch.empty() || rec.val_acc > best_acc) {
      best_acc = rec.val_acc;
      result.params = params;
      result.history.best_epoch = epoch;
    }
    if (config.verbose)
      std::cerr << "epoch " << epoch << " loss=" << rec.train_loss << " val_acc=" << rec.val_acc << " ("
                << rec.seconds << "s)\n";
    if (on_epoch) on_epoch(rec);
  }
  return result;
}

}  // namespace seqmem
