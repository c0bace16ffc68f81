#include "seqmem/kernels.hpp"

#include <algorithm>
#include <map>
#include <optional>

namespace seqmem {

TruncationMask TruncationMask::from_samplers(Index steps, std::span<const TruncationSampler> samplers) {
  TruncationMask mask(steps, static_cast<Index>(samplers.size()));
  for (Index b = 0; b < mask.batch_; ++b)
    for (Index t = 1; t <= steps; ++t) mask.set(t, b, samplers[static_cast<std::size_t>(b)].drop(t));
  return mask;
}

Eigen::RowVectorXd TruncationMask::keep_row(Index t) const {
  Eigen::RowVectorXd keep(batch_);
  for (Index b = 0; b < batch_; ++b) keep(b) = drop(t, b) ? 0.0 : 1.0;
  return keep;
}

bool TruncationMask::all_dropped(Index t) const {
  for (Index b = 0; b < batch_; ++b)
    if (!drop(t, b)) return false;
  return true;
}

bool TruncationMask::none_dropped(Index t) const {
  for (Index b = 0; b < batch_; ++b)
    if (drop(t, b)) return false;
  return true;
}

namespace {

Matrix sigmoid(const Matrix& x) { return (1.0 + (-x.array()).exp()).inverse().matrix(); }

struct StackedLstm {
  Matrix wx;    // 4p x d
  Matrix wh;    // 4p x p
  Vector bias;  // 4p

  explicit StackedLstm(const LstmParams& w) {
    const Index p = w.gate_i.rows();
    const Index d = w.gate_i.cols() - p;
    wx.resize(4 * p, d);
    wh.resize(4 * p, p);
    bias.resize(4 * p);
    const Matrix* gates[] = {&w.gate_i, &w.gate_f, &w.gate_g, &w.gate_o};
    const Matrix* biases[] = {&w.bias_i, &w.bias_f, &w.bias_g, &w.bias_o};
    for (Index k = 0; k < 4; ++k) {
      wx.middleRows(k * p, p) = gates[k]->leftCols(d);
      wh.middleRows(k * p, p) = gates[k]->rightCols(p);
      bias.segment(k * p, p) = biases[k]->col(0);
    }
  }
};

// Advances a batch one timestep at a time. `state` is the probed state,
// `aux` the LMN hidden / LSTM cell, `gates` the LSTM activations.
class Stepper {
public:
  Stepper(const Params& params, Index batch) : params_(params) {
    const Index p = state_size(params);
    state = Matrix::Zero(p, batch);
    if (kind_of(params) == ModelKind::Lmn) aux = Matrix::Zero(std::get<LmnParams>(params).w_xh.rows(), batch);
    if (kind_of(params) == ModelKind::Lstm) {
      aux = Matrix::Zero(p, batch);
      lstm_.emplace(std::get<LstmParams>(params));
    }
  }

  void step(const Matrix& x) {
    switch (kind_of(params_)) {
      case ModelKind::LinearRnn: {
        const auto& w = std::get<LinearRnnParams>(params_);
        scratch_.noalias() = w.a * x;
        scratch_.noalias() += w.b * state;
        state.swap(scratch_);
        break;
      }
      case ModelKind::Rnn: {
        const auto& w = std::get<RnnParams>(params_);
        scratch_.noalias() = w.v * x;
        scratch_.noalias() += w.u * state;
        state = scratch_.array().tanh();
        break;
      }
      case ModelKind::Lmn: {
        const auto& w = std::get<LmnParams>(params_);
        scratch_.noalias() = w.w_xh * x;
        scratch_.noalias() += w.w_mh * state;
        aux = scratch_.array().tanh();
        scratch_.noalias() = w.w_hm * aux;
        scratch_.noalias() += w.w_mm * state;
        state.swap(scratch_);
        break;
      }
      case ModelKind::Lstm: {
        const Index p = state.rows();
        scratch_.noalias() = lstm_->wx * x;
        scratch_.noalias() += lstm_->wh * state;
        scratch_.colwise() += lstm_->bias;
        gates.resize(4 * p, state.cols());
        gates.topRows(2 * p) = sigmoid(scratch_.topRows(2 * p));
        gates.middleRows(2 * p, p) = scratch_.middleRows(2 * p, p).array().tanh();
        gates.bottomRows(p) = sigmoid(scratch_.bottomRows(p));
        aux = gates.middleRows(p, p).cwiseProduct(aux) + gates.topRows(p).cwiseProduct(gates.middleRows(2 * p, p));
        state = gates.bottomRows(p).cwiseProduct(Matrix(aux.array().tanh()));
        break;
      }
    }
  }

  Matrix state;
  Matrix aux;
  Matrix gates;

private:
  const Params& params_;
  std::optional<StackedLstm> lstm_;
  Matrix scratch_;
};

void record_norms(std::vector<double>* norms, Index t, const Matrix& ds) {
  if (norms) (*norms)[static_cast<std::size_t>(t)] = ds.colwise().norm().sum();
}

void add_external(Matrix& ds, const std::vector<Matrix>& ext, Index t) {
  if (t >= 1 && ext[static_cast<std::size_t>(t - 1)].size() != 0) ds += ext[static_cast<std::size_t>(t - 1)];
}

void apply_mask(Matrix& m, const TruncationMask& mask, Index t) {
  if (mask.empty() || mask.none_dropped(t)) return;
  m.array().rowwise() *= mask.keep_row(t).array();
}

}  // namespace

std::vector<Matrix> pack_inputs(std::span<const Matrix* const> seqs) {
  if (seqs.empty()) return {};
  const Index steps = seqs[0]->rows();
  const Index d = seqs[0]->cols();
  const auto batch = static_cast<Index>(seqs.size());
  std::vector<Matrix> out(static_cast<std::size_t>(steps), Matrix(d, batch));
  for (Index b = 0; b < batch; ++b) {
    const Matrix& s = *seqs[static_cast<std::size_t>(b)];
    if (s.rows() != steps || s.cols() != d) throw DimensionError("pack_inputs: sequences differ in shape");
    for (Index t = 0; t < steps; ++t) out[static_cast<std::size_t>(t)].col(b) = s.row(t).transpose();
  }
  return out;
}

BatchTrace batch_forward(const Params& params, const std::vector<Matrix>& inputs) {
  const Index batch = inputs.empty() ? 0 : inputs.front().cols();
  const ModelKind kind = kind_of(params);
  for (const auto& x : inputs)
    if (x.rows() != input_size(params)) throw DimensionError("batch_forward: input dimension mismatch");
  Stepper stepper(params, batch);
  BatchTrace tr;
  tr.kind = kind;
  tr.batch = batch;
  const std::size_t n = inputs.size() + 1;
  tr.state.reserve(n);
  tr.state.push_back(stepper.state);
  const bool has_aux = kind == ModelKind::Lmn || kind == ModelKind::Lstm;
  if (has_aux) {
    tr.aux.reserve(n);
    tr.aux.push_back(stepper.aux);
  }
  if (kind == ModelKind::Lstm) {
    tr.gates.reserve(n);
    tr.gates.emplace_back();
  }
  for (const auto& x : inputs) {
    stepper.step(x);
    tr.state.push_back(stepper.state);
    if (has_aux) tr.aux.push_back(stepper.aux);
    if (kind == ModelKind::Lstm) tr.gates.push_back(stepper.gates);
  }
  return tr;
}

Params batch_backward(const Params& params, const BatchTrace& tr, const std::vector<Matrix>& inputs,
                      const std::vector<Matrix>& ext, const TruncationMask& mask, std::vector<double>* norms) {
  const Index steps = tr.steps();
  if (static_cast<Index>(inputs.size()) != steps || static_cast<Index>(ext.size()) != steps)
    throw DimensionError("batch_backward: inputs/gradients do not match the trace length");
  Params grads = zeros_like(params);
  if (norms) norms->assign(static_cast<std::size_t>(steps + 1), 0.0);
  const Index batch = tr.batch;
  const Index p = state_size(params);
  Matrix ds = Matrix::Zero(p, batch);
  add_external(ds, ext, steps);

  switch (tr.kind) {
    case ModelKind::LinearRnn: {
      const auto& w = std::get<LinearRnnParams>(params);
      auto& g = std::get<LinearRnnParams>(grads);
      for (Index t = steps; t >= 1; --t) {
        record_norms(norms, t, ds);
        g.a.noalias() += ds * inputs[static_cast<std::size_t>(t - 1)].transpose();
        g.b.noalias() += ds * tr.state[static_cast<std::size_t>(t - 1)].transpose();
        Matrix prev = w.b.transpose() * ds;
        ds.swap(prev);
        add_external(ds, ext, t - 1);
      }
      break;
    }
    case ModelKind::Rnn: {
      const auto& w = std::get<RnnParams>(params);
      auto& g = std::get<RnnParams>(grads);
      Matrix da(p, batch);
      for (Index t = steps; t >= 1; --t) {
        record_norms(norms, t, ds);
        const Matrix& h = tr.state[static_cast<std::size_t>(t)];
        da = ds.cwiseProduct(Matrix((1.0 - h.array().square())));
        g.v.noalias() += da * inputs[static_cast<std::size_t>(t - 1)].transpose();
        g.u.noalias() += da * tr.state[static_cast<std::size_t>(t - 1)].transpose();
        if (!mask.empty() && mask.all_dropped(t)) {
          ds.setZero();
        } else {
          ds.noalias() = w.u.transpose() * da;
          apply_mask(ds, mask, t);
        }
        add_external(ds, ext, t - 1);
      }
      break;
    }
    case ModelKind::Lmn: {
      const auto& w = std::get<LmnParams>(params);
      auto& g = std::get<LmnParams>(grads);
      Matrix dh;
      Matrix da;
      Matrix prev;
      Matrix back;
      for (Index t = steps; t >= 1; --t) {
        record_norms(norms, t, ds);
        const Matrix& h = tr.aux[static_cast<std::size_t>(t)];
        const Matrix& m_prev = tr.state[static_cast<std::size_t>(t - 1)];
        g.w_hm.noalias() += ds * h.transpose();
        g.w_mm.noalias() += ds * m_prev.transpose();
        dh.noalias() = w.w_hm.transpose() * ds;
        da = dh.cwiseProduct(Matrix(1.0 - h.array().square()));
        g.w_xh.noalias() += da * inputs[static_cast<std::size_t>(t - 1)].transpose();
        g.w_mh.noalias() += da * m_prev.transpose();
        prev.noalias() = w.w_mm.transpose() * ds;
        if (mask.empty() || !mask.all_dropped(t)) {
          back.noalias() = w.w_mh.transpose() * da;
          apply_mask(back, mask, t);
          prev += back;
        }
        ds.swap(prev);
        add_external(ds, ext, t - 1);
      }
      break;
    }
    case ModelKind::Lstm: {
      const auto& w = std::get<LstmParams>(params);
      auto& g = std::get<LstmParams>(grads);
      const StackedLstm stacked(w);
      const Index d = stacked.wx.cols();
      Matrix gwx = Matrix::Zero(4 * p, d);
      Matrix gwh = Matrix::Zero(4 * p, p);
      Vector gb = Vector::Zero(4 * p);
      Matrix dc = Matrix::Zero(p, batch);
      Matrix dpre(4 * p, batch);
      for (Index t = steps; t >= 1; --t) {
        record_norms(norms, t, ds);
        const Matrix& gates = tr.gates[static_cast<std::size_t>(t)];
        const Matrix& c = tr.aux[static_cast<std::size_t>(t)];
        const Matrix& c_prev = tr.aux[static_cast<std::size_t>(t - 1)];
        const auto i = gates.topRows(p).array();
        const auto f = gates.middleRows(p, p).array();
        const auto gg = gates.middleRows(2 * p, p).array();
        const auto o = gates.bottomRows(p).array();
        const Eigen::ArrayXXd tc = c.array().tanh();

        dc.array() += ds.array() * o * (1.0 - tc.square());
        dpre.topRows(p) = (dc.array() * gg * i * (1.0 - i)).matrix();
        dpre.middleRows(p, p) = (dc.array() * c_prev.array() * f * (1.0 - f)).matrix();
        dpre.middleRows(2 * p, p) = (dc.array() * i * (1.0 - gg.square())).matrix();
        dpre.bottomRows(p) = (ds.array() * tc * o * (1.0 - o)).matrix();
        dc.array() *= f;

        gwx.noalias() += dpre * inputs[static_cast<std::size_t>(t - 1)].transpose();
        gwh.noalias() += dpre * tr.state[static_cast<std::size_t>(t - 1)].transpose();
        gb += dpre.rowwise().sum();
        if (!mask.empty() && mask.all_dropped(t)) {
          ds.setZero();
        } else {
          ds.noalias() = stacked.wh.transpose() * dpre;
          apply_mask(ds, mask, t);
        }
        add_external(ds, ext, t - 1);
      }
      Matrix* gate_grads[] = {&g.gate_i, &g.gate_f, &g.gate_g, &g.gate_o};
      Matrix* bias_grads[] = {&g.bias_i, &g.bias_f, &g.bias_g, &g.bias_o};
      for (Index k = 0; k < 4; ++k) {
        gate_grads[k]->leftCols(d) = gwx.middleRows(k * p, p);
        gate_grads[k]->rightCols(p) = gwh.middleRows(k * p, p);
        bias_grads[k]->col(0) = gb.segment(k * p, p);
      }
      break;
    }
  }
  record_norms(norms, 0, ds);
  return grads;
}

namespace {

BatchGradient shard_gradient(const Params& params, std::span<const Matrix* const> seqs, std::span<const int> labels,
                             std::span<const std::uint64_t> streams, double alpha_act, double trunc_p,
                             std::uint64_t trunc_seed) {
  BatchGradient out;
  const auto batch = static_cast<Index>(seqs.size());
  bool uniform = true;
  for (const Matrix* s : seqs) uniform = uniform && s->rows() == seqs[0]->rows();

  if (!uniform || seqs[0]->rows() == 0) {
    out.grads = zeros_like(params);
    for (Index b = 0; b < batch; ++b) {
      const TruncationSampler sampler{trunc_p, trunc_seed, streams[static_cast<std::size_t>(b)]};
      const auto r = sequence_loss_and_grad(params, *seqs[static_cast<std::size_t>(b)], labels[static_cast<std::size_t>(b)],
                                            alpha_act, sampler);
      out.loss_sum += r.loss;
      out.correct += r.correct ? 1 : 0;
      axpy_params(out.grads, 1.0, r.grads);
    }
    return out;
  }

  const auto inputs = pack_inputs(seqs);
  const BatchTrace tr = batch_forward(params, inputs);
  const Index steps = tr.steps();
  const Matrix& w_o = std::visit([](const auto& q) -> const Matrix& { return q.w_o; }, params);
  const Matrix& last = tr.state.back();
  const Matrix logits = w_o * last;

  Matrix dlogits(logits.rows(), batch);
  for (Index b = 0; b < batch; ++b) {
    Vector g;
    out.loss_sum += cross_entropy(logits.col(b), labels[static_cast<std::size_t>(b)], &g);
    dlogits.col(b) = g;
    Index arg = 0;
    logits.col(b).maxCoeff(&arg);
    if (arg == labels[static_cast<std::size_t>(b)]) ++out.correct;
  }

  std::vector<Matrix> ext(static_cast<std::size_t>(steps));
  ext.back() = w_o.transpose() * dlogits;
  if (alpha_act != 0.0) {
    const double scale = alpha_act / static_cast<double>(steps);
    for (Index t = 1; t <= steps; ++t) {
      const Matrix& s = tr.state[static_cast<std::size_t>(t)];
      out.loss_sum += scale * s.squaredNorm();
      auto& e = ext[static_cast<std::size_t>(t - 1)];
      if (e.size() == 0)
        e = 2.0 * scale * s;
      else
        e += 2.0 * scale * s;
    }
  }

  TruncationMask mask;
  if (trunc_p > 0.0 && kind_of(params) != ModelKind::LinearRnn) {
    std::vector<TruncationSampler> samplers;
    samplers.reserve(static_cast<std::size_t>(batch));
    for (Index b = 0; b < batch; ++b) samplers.push_back({trunc_p, trunc_seed, streams[static_cast<std::size_t>(b)]});
    mask = TruncationMask::from_samplers(steps, samplers);
  }

  out.grads = batch_backward(params, tr, inputs, ext, mask);
  std::visit([&](auto& q) { q.w_o.noalias() += dlogits * last.transpose(); }, out.grads);
  return out;
}

}  // namespace

BatchGradient batch_loss_and_grad(const Params& params, std::span<const Matrix* const> seqs,
                                  std::span<const int> labels, std::span<const std::uint64_t> streams,
                                  double alpha_act, double trunc_p, std::uint64_t trunc_seed, Index shard_size) {
  const auto n = static_cast<Index>(seqs.size());
  if (static_cast<Index>(labels.size()) != n || static_cast<Index>(streams.size()) != n)
    throw DimensionError("batch_loss_and_grad: sequences, labels and streams differ in count");
  if (shard_size < 1) throw std::invalid_argument("batch_loss_and_grad: shard size must be >= 1");
  const Index shards = (n + shard_size - 1) / shard_size;
  std::vector<BatchGradient> partial(static_cast<std::size_t>(shards));

#pragma omp parallel for schedule(static)
  for (Index s = 0; s < shards; ++s) {
    const Index begin = s * shard_size;
    const Index len = std::min(shard_size, n - begin);
    const auto b = static_cast<std::size_t>(begin);
    const auto l = static_cast<std::size_t>(len);
    partial[static_cast<std::size_t>(s)] =
        shard_gradient(params, seqs.subspan(b, l), labels.subspan(b, l), streams.subspan(b, l), alpha_act, trunc_p, trunc_seed);
  }

  BatchGradient total;
  total.grads = zeros_like(params);
  for (const auto& part : partial) {
    total.loss_sum += part.loss_sum;
    total.correct += part.correct;
    axpy_params(total.grads, 1.0, part.grads);
  }
  return total;
}

namespace {

// Index blocks of equal-length sequences, each at most `block` long, in input order per length.
std::vector<std::vector<Index>> length_blocks(const SequenceBatch& batch, Index block) {
  std::map<Index, std::vector<Index>> by_length;
  for (Index i = 0; i < batch.size(); ++i) by_length[batch.sequences[static_cast<std::size_t>(i)].rows()].push_back(i);
  std::vector<std::vector<Index>> blocks;
  for (const auto& [len, idx] : by_length)
    for (std::size_t s = 0; s < idx.size(); s += static_cast<std::size_t>(block))
      blocks.emplace_back(idx.begin() + static_cast<std::ptrdiff_t>(s),
                          idx.begin() + static_cast<std::ptrdiff_t>(std::min(idx.size(), s + static_cast<std::size_t>(block))));
  return blocks;
}

std::vector<const Matrix*> gather(const SequenceBatch& batch, const std::vector<Index>& idx) {
  std::vector<const Matrix*> out;
  out.reserve(idx.size());
  for (Index i : idx) out.push_back(&batch.sequences[static_cast<std::size_t>(i)]);
  return out;
}

}  // namespace

Matrix batch_final_logits(const Params& params, const SequenceBatch& batch, Index block) {
  const Matrix& w_o = std::visit([](const auto& q) -> const Matrix& { return q.w_o; }, params);
  Matrix out(w_o.rows(), batch.size());
  const auto blocks = length_blocks(batch, block);
#pragma omp parallel for schedule(dynamic)
  for (std::size_t bi = 0; bi < blocks.size(); ++bi) {
    const auto& idx = blocks[bi];
    const auto seqs = gather(batch, idx);
    const auto inputs = pack_inputs(seqs);
    Stepper stepper(params, static_cast<Index>(idx.size()));
    for (const auto& x : inputs) stepper.step(x);
    const Matrix logits = w_o * stepper.state;
    for (std::size_t j = 0; j < idx.size(); ++j) out.col(idx[j]) = logits.col(static_cast<Index>(j));
  }
  return out;
}

std::vector<Matrix> batch_states(const Params& params, const SequenceBatch& batch, Index block) {
  std::vector<Matrix> out(static_cast<std::size_t>(batch.size()));
  const auto blocks = length_blocks(batch, block);
  const Index p = state_size(params);
#pragma omp parallel for schedule(dynamic)
  for (std::size_t bi = 0; bi < blocks.size(); ++bi) {
    const auto& idx = blocks[bi];
    const auto seqs = gather(batch, idx);
    const auto inputs = pack_inputs(seqs);
    Stepper stepper(params, static_cast<Index>(idx.size()));
    const Index steps = static_cast<Index>(inputs.size());
    for (std::size_t j = 0; j < idx.size(); ++j) out[static_cast<std::size_t>(idx[j])].resize(p, steps);
    for (Index t = 0; t < steps; ++t) {
      stepper.step(inputs[static_cast<std::size_t>(t)]);
      for (std::size_t j = 0; j < idx.size(); ++j) out[static_cast<std::size_t>(idx[j])].col(t) = stepper.state.col(static_cast<Index>(j));
    }
  }
  return out;
}

}  // namespace seqmem
