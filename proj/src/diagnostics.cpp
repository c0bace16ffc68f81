#include "seqmem/diagnostics.hpp"

#include "seqmem/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <numeric>

namespace seqmem {

namespace {

const Matrix& readout(const Params& p) {
  return std::visit([](const auto& q) -> const Matrix& { return q.w_o; }, p);
}

Matrix& readout(Params& p) {
  return std::visit([](auto& q) -> Matrix& { return q.w_o; }, p);
}

Index common_length(std::span<const Matrix* const> seqs, const char* who) {
  if (seqs.empty()) throw std::invalid_argument(std::string(who) + ": empty batch");
  const Index t = seqs[0]->rows();
  for (const Matrix* s : seqs)
    if (s->rows() != t) throw DimensionError(std::string(who) + ": sequences must share one length");
  return t;
}

std::vector<const Matrix*> pointers(const SequenceBatch& batch) {
  std::vector<const Matrix*> out;
  out.reserve(batch.sequences.size());
  for (const auto& s : batch.sequences) out.push_back(&s);
  return out;
}

std::ofstream open_csv(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << std::setprecision(9);
  return out;
}

}  // namespace

GradientCurve gradient_through_time(const Params& params, const LabeledSequences& data, double trunc_p,
                                    std::uint64_t seed) {
  const auto seqs = pointers(data.batch);
  const Index steps = common_length(seqs, "gradient_through_time");
  if (steps == 0) throw std::invalid_argument("gradient_through_time: zero-length sequences");
  const auto batch = static_cast<Index>(seqs.size());
  const auto inputs = pack_inputs(seqs);
  const BatchTrace tr = batch_forward(params, inputs);

  const Matrix& w_o = readout(params);
  const Matrix logits = w_o * tr.state.back();
  Matrix dlogits(logits.rows(), batch);
  for (Index b = 0; b < batch; ++b) {
    Vector g;
    cross_entropy(logits.col(b), data.labels[static_cast<std::size_t>(b)], &g);
    dlogits.col(b) = g;
  }
  std::vector<Matrix> ext(static_cast<std::size_t>(steps));
  ext.back() = w_o.transpose() * dlogits;

  TruncationMask mask;
  if (trunc_p > 0.0 && kind_of(params) != ModelKind::LinearRnn) {
    std::vector<TruncationSampler> samplers;
    for (Index b = 0; b < batch; ++b) samplers.push_back({trunc_p, seed, static_cast<std::uint64_t>(b)});
    mask = TruncationMask::from_samplers(steps, samplers);
  }
  std::vector<double> norms;
  batch_backward(params, tr, inputs, ext, mask, &norms);

  GradientCurve curve;
  curve.reserve(static_cast<std::size_t>(steps + 1));
  for (Index t = steps; t >= 0; --t)
    curve.push_back({t, norms[static_cast<std::size_t>(t)] / static_cast<double>(batch)});
  return curve;
}

std::vector<LagProbeResult> lag_reconstruction_probe(const std::vector<Matrix>& states,
                                                     const std::vector<Matrix>& inputs, const std::vector<Index>& lags,
                                                     const LagProbeOptions& options) {
  if (states.empty() || states.size() != inputs.size())
    throw DimensionError("lag_reconstruction_probe: states and inputs must be non-empty and paired");
  const Index p = states[0].rows();
  const Index d = inputs[0].cols();
  Index min_len = inputs[0].rows();
  for (std::size_t i = 0; i < states.size(); ++i) {
    if (states[i].rows() != p || states[i].cols() != inputs[i].rows() || inputs[i].cols() != d)
      throw DimensionError("lag_reconstruction_probe: state/input shapes disagree");
    min_len = std::min(min_len, inputs[i].rows());
  }
  for (Index k : lags)
    if (k < 1 || k >= min_len)
      throw std::invalid_argument("lag_reconstruction_probe: lag " + std::to_string(k) + " outside [1, " +
                                  std::to_string(min_len - 1) + "]");

  const auto n = static_cast<Index>(states.size());
  Index held = n < 2 ? 0 : std::clamp<Index>(static_cast<Index>(std::lround(options.holdout * static_cast<double>(n))), 1, n - 1);
  const Index fit_end = n - held;
  const Index test_begin = held == 0 ? 0 : fit_end;

  auto design = [&](Index k, Index begin, Index end, Matrix& x, Matrix& y) {
    Index rows = 0;
    for (Index i = begin; i < end; ++i) rows += inputs[static_cast<std::size_t>(i)].rows() - k;
    x.resize(rows, p + 1);
    y.resize(rows, d);
    Index r = 0;
    for (Index i = begin; i < end; ++i) {
      const Matrix& s = states[static_cast<std::size_t>(i)];
      const Matrix& in = inputs[static_cast<std::size_t>(i)];
      const Index len = in.rows() - k;
      // step t (1-based, t > k) predicts x^{t-k}
      x.block(r, 0, len, p) = s.rightCols(len).transpose();
      y.middleRows(r, len) = in.topRows(len);
      r += len;
    }
    x.col(p).setOnes();
  };

  std::vector<LagProbeResult> out(lags.size());
  for (std::size_t li = 0; li < lags.size(); ++li) {
    const Index k = lags[li];
    Matrix x;
    Matrix y;
    design(k, 0, fit_end, x, y);
    const Matrix w = least_squares_fit(x, y, options.ridge);
    design(k, test_begin, n, x, y);
    const double mse = (x * w - y).squaredNorm() / static_cast<double>(y.size());
    out[li] = {k, mse, options.model_tag};
  }
  return out;
}

Matrix unroll_to_image(const Matrix& unroll, Index rows, Index cols) {
  const Index steps = rows * cols;
  if (unroll.rows() != steps || unroll.cols() != 1)
    throw DimensionError("unroll_to_image: expected " + std::to_string(steps) + " scalar steps, got " +
                         std::to_string(unroll.rows()) + "x" + std::to_string(unroll.cols()));
  Matrix img(rows, cols);
  for (Index k = 0; k < steps; ++k) {
    const Index pixel = steps - 1 - k;
    img(pixel / cols, pixel % cols) = unroll(k, 0);
  }
  return img;
}

Matrix laes_image_reconstruction(const LaesModel& model, const Matrix& seq, Index rows, Index cols) {
  if (seq.rows() != rows * cols || seq.cols() != 1) throw DimensionError("laes_image_reconstruction: length mismatch");
  const Matrix states = laes_encode(model, seq);
  return unroll_to_image(laes_decode_unroll(model, states.row(seq.rows() - 1).transpose(), seq.rows()), rows, cols);
}

double mean_absolute_error(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols() || a.size() == 0)
    throw DimensionError("mean_absolute_error: shape mismatch");
  return (a - b).cwiseAbs().sum() / static_cast<double>(a.size());
}

void write_pgm(const std::filesystem::path& path, const Matrix& image) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "P5\n" << image.cols() << ' ' << image.rows() << "\n255\n";
  for (Index r = 0; r < image.rows(); ++r)
    for (Index c = 0; c < image.cols(); ++c) {
      const double v = std::clamp(image(r, c), 0.0, 1.0);
      out.put(static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0))));
    }
}

ReconstructionModel make_reconstruction_model(Params cell, std::uint64_t seed) {
  const Index d = input_size(cell);
  const Index p = state_size(cell);
  readout(cell) = uniform_fan_in(d, p, p, hash_keys(seed, 0x6f7574ULL));
  return {std::move(cell), Matrix::Zero(d, 1)};
}

namespace {

std::vector<Matrix> reconstruction_inputs(std::span<const Matrix* const> seqs, Index steps) {
  auto inputs = pack_inputs(seqs);
  const Index d = seqs[0]->cols();
  for (Index k = 1; k < steps; ++k) inputs.push_back(Matrix::Zero(d, static_cast<Index>(seqs.size())));
  return inputs;
}

}  // namespace

std::vector<Matrix> reconstruct_sequences(const ReconstructionModel& model, const SequenceBatch& batch) {
  std::vector<Matrix> out(batch.sequences.size());
  const Matrix& w_o = readout(model.cell);
  constexpr std::size_t block = 64;
  for (std::size_t begin = 0; begin < batch.sequences.size(); begin += block) {
    std::vector<const Matrix*> seqs;
    for (std::size_t i = begin; i < std::min(batch.sequences.size(), begin + block); ++i) seqs.push_back(&batch.sequences[i]);
    const Index steps = common_length(seqs, "reconstruct_sequences");
    const BatchTrace tr = batch_forward(model.cell, reconstruction_inputs(seqs, steps));
    for (std::size_t j = 0; j < seqs.size(); ++j) out[begin + j].resize(steps, w_o.rows());
    for (Index k = 0; k < steps; ++k) {
      Matrix y = w_o * tr.state[static_cast<std::size_t>(steps + k)];
      y.colwise() += model.out_bias.col(0);
      for (std::size_t j = 0; j < seqs.size(); ++j) out[begin + j].row(k) = y.col(static_cast<Index>(j)).transpose();
    }
  }
  return out;
}

ReconstructionGradient reconstruction_loss_and_grad(const ReconstructionModel& model,
                                                    std::span<const Matrix* const> seqs) {
  const Index steps = common_length(seqs, "reconstruction_loss_and_grad");
  if (steps == 0) throw std::invalid_argument("reconstruction_loss_and_grad: zero-length sequences");
  const auto batch = static_cast<Index>(seqs.size());
  const Matrix& w_o = readout(model.cell);
  const Index d = w_o.rows();
  const auto inputs = reconstruction_inputs(seqs, steps);
  const BatchTrace tr = batch_forward(model.cell, inputs);

  const double count = static_cast<double>(steps * d * batch);
  ReconstructionGradient out;
  Matrix gw = Matrix::Zero(w_o.rows(), w_o.cols());
  out.bias_grad = Matrix::Zero(d, 1);
  std::vector<Matrix> ext(inputs.size());
  Matrix target(d, batch);
  for (Index k = 0; k < steps; ++k) {
    const Matrix& s = tr.state[static_cast<std::size_t>(steps + k)];
    for (Index b = 0; b < batch; ++b) target.col(b) = seqs[static_cast<std::size_t>(b)]->row(steps - 1 - k).transpose();
    Matrix r = w_o * s;
    r.colwise() += model.out_bias.col(0);
    r -= target;
    out.loss += r.squaredNorm();
    const Matrix dy = (2.0 / count) * r;
    ext[static_cast<std::size_t>(steps + k - 1)] = w_o.transpose() * dy;
    gw.noalias() += dy * s.transpose();
    out.bias_grad += dy.rowwise().sum();
  }
  out.loss /= count;
  out.grads = batch_backward(model.cell, tr, inputs, ext, TruncationMask());
  readout(out.grads) = std::move(gw);
  return out;
}

ReconstructionModel train_reconstruction(const ReconstructionModel& init, const SequenceBatch& data,
                                         const TrainConfig& config, std::vector<double>* loss_history) {
  const Index n = data.size();
  if (n == 0) throw std::invalid_argument("train_reconstruction: empty dataset");
  if (config.batch_size < 1) throw std::invalid_argument("train_reconstruction: batch_size must be >= 1");
  ReconstructionModel model = init;
  AdamState adam;
  const AdamOptions opts{config.lr, config.adam_beta1, config.adam_beta2, config.adam_eps};
  std::vector<Index> order(static_cast<std::size_t>(n));
  if (loss_history) loss_history->clear();

  for (Index epoch = 1; epoch <= config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), Index{0});
    SplitMix64 rng(hash_keys(config.seed, 0x7265636fULL, static_cast<std::uint64_t>(epoch)));
    for (Index i = n - 1; i > 0; --i)
      std::swap(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(rng.below(static_cast<std::uint64_t>(i + 1)))]);
    double loss_sum = 0.0;
    Index batches = 0;
    for (Index begin = 0; begin < n; begin += config.batch_size) {
      std::vector<const Matrix*> seqs;
      for (Index j = begin; j < std::min(n, begin + config.batch_size); ++j)
        seqs.push_back(&data.sequences[static_cast<std::size_t>(order[static_cast<std::size_t>(j)])]);
      ReconstructionGradient rg = reconstruction_loss_and_grad(model, seqs);
      double loss = rg.loss;
      if (const Matrix* w = recurrent_matrix(model.cell); w && config.lambda_ortho != 0.0) {
        Matrix g;
        loss += orthogonality_penalty(*w, config.lambda_ortho, &g);
        *recurrent_matrix(rg.grads) += g;
      }
      if (!std::isfinite(loss) || !all_finite(rg.grads))
        throw DivergenceError("train_reconstruction: non-finite loss at epoch " + std::to_string(epoch));
      auto w = param_matrices(model.cell);
      auto g = param_matrices(static_cast<const Params&>(rg.grads));
      w.push_back(&model.out_bias);
      g.push_back(&rg.bias_grad);
      if (config.clip_norm > 0.0) {
        double sq = 0.0;
        for (const Matrix* m : g) sq += m->squaredNorm();
        const double norm = std::sqrt(sq);
        if (norm > config.clip_norm) {
          scale_params(rg.grads, config.clip_norm / norm);
          rg.bias_grad *= config.clip_norm / norm;
        }
      }
      adam_update(w, g, adam, opts);
      loss_sum += loss;
      ++batches;
    }
    if (loss_history) loss_history->push_back(loss_sum / static_cast<double>(batches));
    if (config.verbose) std::fprintf(stderr, "reco epoch %lld loss=%.6g\n", static_cast<long long>(epoch), loss_sum / static_cast<double>(batches));
  }
  return model;
}

void write_gradient_csv(const std::filesystem::path& path, const GradientCurve& curve, Index stride) {
  if (stride < 1) throw std::invalid_argument("write_gradient_csv: stride must be >= 1");
  auto out = open_csv(path);
  out << "t,grad_norm\n";
  for (std::size_t i = 0; i < curve.size(); ++i)
    if (i % static_cast<std::size_t>(stride) == 0 || i + 1 == curve.size())
      out << curve[i].t << ',' << curve[i].grad_norm << '\n';
}

void write_lag_csv(const std::filesystem::path& path, const std::vector<LagProbeResult>& rows) {
  auto out = open_csv(path);
  out << "k,mse,model_tag\n";
  for (const auto& r : rows) out << r.lag << ',' << r.mse << ',' << r.model_tag << '\n';
}

void write_history_csv(const std::filesystem::path& path, const TrainHistory& history, bool with_timing) {
  auto out = open_csv(path);
  out << "epoch,train_loss,val_acc,seconds\n";
  for (const auto& e : history.epochs)
    out << e.epoch << ',' << e.train_loss << ',' << e.val_acc << ',' << (with_timing ? e.seconds : 0.0) << '\n';
}

}  // namespace seqmem
