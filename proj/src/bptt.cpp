#include "seqmem/training.hpp"

#include <cmath>

namespace seqmem {

double cross_entropy(const Vector& logits, int label, Vector* grad) {
  if (label < 0 || label >= logits.size()) throw std::invalid_argument("cross_entropy: label out of range");
  const double mx = logits.maxCoeff();
  const Vector e = (logits.array() - mx).exp();
  const double z = e.sum();
  if (grad) {
    *grad = e / z;
    (*grad)(label) -= 1.0;
  }
  return std::log(z) + mx - logits(label);
}

double orthogonality_penalty(const Matrix& w, double lambda, Matrix* grad) {
  if (lambda == 0.0) {
    if (grad) *grad = Matrix::Zero(w.rows(), w.cols());
    return 0.0;
  }
  Matrix gap = w.transpose() * w;
  gap.diagonal().array() -= 1.0;
  if (grad) *grad = 4.0 * lambda * w * gap;
  return lambda * gap.squaredNorm();
}

const Matrix* recurrent_matrix(const Params& params) {
  struct {
    const Matrix* operator()(const LinearRnnParams& q) const { return &q.b; }
    const Matrix* operator()(const RnnParams& q) const { return &q.u; }
    const Matrix* operator()(const LmnParams& q) const { return &q.w_mm; }
    const Matrix* operator()(const LstmParams&) const { return nullptr; }
  } v;
  return std::visit(v, params);
}

Matrix* recurrent_matrix(Params& params) {
  return const_cast<Matrix*>(recurrent_matrix(static_cast<const Params&>(params)));
}

PenaltyTerms penalty_terms(const Params& params, double lambda_ortho, double alpha_act, const ForwardTrace& trace) {
  PenaltyTerms out;
  out.grads = zeros_like(params);
  if (const Matrix* w = recurrent_matrix(params); w && lambda_ortho != 0.0) {
    Matrix g;
    out.loss += orthogonality_penalty(*w, lambda_ortho, &g);
    *recurrent_matrix(out.grads) = std::move(g);
  }
  const Matrix& states = probed_states(trace, kind_of(params));
  out.state_grads = Matrix::Zero(states.rows(), states.cols());
  if (alpha_act != 0.0 && states.cols() > 0) {
    const double scale = alpha_act / static_cast<double>(states.cols());
    out.loss += scale * states.squaredNorm();
    out.state_grads = 2.0 * scale * states;
  }
  return out;
}

namespace {

// Gradient of the probed state at step t (1-based) coming from outside the recurrence.
Vector external(const Matrix& state_grads, Index t, Index p) {
  if (state_grads.size() == 0) return Vector::Zero(p);
  return state_grads.col(t - 1);
}

Vector column_or_zero(const Matrix& m, Index t, Index p) {
  // State at step t (1-based); step 0 is the zero initial state.
  return t == 0 ? Vector::Zero(p) : Vector(m.col(t - 1));
}

void backward_linear(const LinearRnnParams& w, const ForwardTrace& tr, Vector ds, const Matrix& ext,
                     LinearRnnParams& g, std::vector<double>* norms) {
  const Index p = w.b.rows();
  const Index steps = tr.steps();
  for (Index t = steps; t >= 1; --t) {
    if (norms) (*norms)[static_cast<std::size_t>(t)] = ds.norm();
    const Vector prev = column_or_zero(tr.memory, t - 1, p);
    g.a += ds * tr.input.row(t - 1);
    g.b += ds * prev.transpose();
    ds = w.b.transpose() * ds;
    if (t > 1) ds += external(ext, t - 1, p);
  }
  if (norms) (*norms)[0] = ds.norm();
}

void backward_rnn(const RnnParams& w, const ForwardTrace& tr, Vector ds, const Matrix& ext,
                  const TruncationSampler& sampler, RnnParams& g, std::vector<double>* norms) {
  const Index p = w.u.rows();
  const Index steps = tr.steps();
  for (Index t = steps; t >= 1; --t) {
    if (norms) (*norms)[static_cast<std::size_t>(t)] = ds.norm();
    const Vector h = tr.hidden.col(t - 1);
    const Vector prev = column_or_zero(tr.hidden, t - 1, p);
    const Vector da = ds.cwiseProduct((1.0 - h.array().square()).matrix());
    g.v += da * tr.input.row(t - 1);
    g.u += da * prev.transpose();
    ds = sampler.drop(t) ? Vector::Zero(p) : Vector(w.u.transpose() * da);
    if (t > 1) ds += external(ext, t - 1, p);
  }
  if (norms) (*norms)[0] = ds.norm();
}

void backward_lmn(const LmnParams& w, const ForwardTrace& tr, Vector dm, const Matrix& ext,
                  const TruncationSampler& sampler, LmnParams& g, std::vector<double>* norms) {
  const Index pm = w.w_mm.rows();
  const Index steps = tr.steps();
  for (Index t = steps; t >= 1; --t) {
    if (norms) (*norms)[static_cast<std::size_t>(t)] = dm.norm();
    const Vector h = tr.hidden.col(t - 1);
    const Vector prev = column_or_zero(tr.memory, t - 1, pm);
    g.w_hm += dm * h.transpose();
    g.w_mm += dm * prev.transpose();
    const Vector dh = w.w_hm.transpose() * dm;
    const Vector da = dh.cwiseProduct((1.0 - h.array().square()).matrix());
    g.w_xh += da * tr.input.row(t - 1);
    g.w_mh += da * prev.transpose();
    Vector next = w.w_mm.transpose() * dm;
    if (!sampler.drop(t)) next += w.w_mh.transpose() * da;
    dm = std::move(next);
    if (t > 1) dm += external(ext, t - 1, pm);
  }
  if (norms) (*norms)[0] = dm.norm();
}

void backward_lstm(const LstmParams& w, const ForwardTrace& tr, Vector dh, const Matrix& ext,
                   const TruncationSampler& sampler, LstmParams& g, std::vector<double>* norms) {
  const Index p = w.gate_i.rows();
  const Index d = w.gate_i.cols() - p;
  const Index steps = tr.steps();
  Vector dc = Vector::Zero(p);
  Vector z(d + p);
  for (Index t = steps; t >= 1; --t) {
    if (norms) (*norms)[static_cast<std::size_t>(t)] = dh.norm();
    const auto gates = tr.gates.col(t - 1);
    const Vector i = gates.segment(0, p);
    const Vector f = gates.segment(p, p);
    const Vector gg = gates.segment(2 * p, p);
    const Vector o = gates.segment(3 * p, p);
    const Vector c = tr.memory.col(t - 1);
    const Vector c_prev = column_or_zero(tr.memory, t - 1, p);
    const Vector h_prev = column_or_zero(tr.hidden, t - 1, p);
    const Vector tc = c.array().tanh();

    const Vector d_o = dh.cwiseProduct(tc);
    dc += dh.cwiseProduct(o).cwiseProduct((1.0 - tc.array().square()).matrix());
    const Vector d_i = dc.cwiseProduct(gg);
    const Vector d_g = dc.cwiseProduct(i);
    const Vector d_f = dc.cwiseProduct(c_prev);
    const Vector dc_prev = dc.cwiseProduct(f);

    const Vector a_i = d_i.cwiseProduct((i.array() * (1.0 - i.array())).matrix());
    const Vector a_f = d_f.cwiseProduct((f.array() * (1.0 - f.array())).matrix());
    const Vector a_g = d_g.cwiseProduct((1.0 - gg.array().square()).matrix());
    const Vector a_o = d_o.cwiseProduct((o.array() * (1.0 - o.array())).matrix());

    z.head(d) = tr.input.row(t - 1).transpose();
    z.tail(p) = h_prev;
    g.gate_i += a_i * z.transpose();
    g.gate_f += a_f * z.transpose();
    g.gate_g += a_g * z.transpose();
    g.gate_o += a_o * z.transpose();
    g.bias_i += a_i;
    g.bias_f += a_f;
    g.bias_g += a_g;
    g.bias_o += a_o;

    if (sampler.drop(t)) {
      dh = Vector::Zero(p);
    } else {
      dh = w.gate_i.rightCols(p).transpose() * a_i + w.gate_f.rightCols(p).transpose() * a_f +
           w.gate_g.rightCols(p).transpose() * a_g + w.gate_o.rightCols(p).transpose() * a_o;
    }
    dc = dc_prev;
    if (t > 1) dh += external(ext, t - 1, p);
  }
  if (norms) (*norms)[0] = dh.norm();
}

}  // namespace

Params bptt_backward(const Params& params, const ForwardTrace& trace, const Vector& logit_grad,
                     const Matrix& state_grads, const TruncationSampler& sampler,
                     std::vector<double>* state_grad_norms) {
  const ModelKind kind = kind_of(params);
  const Matrix& states = probed_states(trace, kind);
  const Index p = state_size(params);
  const Index steps = trace.steps();
  if (states.rows() != p || states.cols() != steps)
    throw DimensionError("bptt_backward: trace does not match parameters");
  if (state_grads.size() != 0 && (state_grads.rows() != p || state_grads.cols() != steps))
    throw DimensionError("bptt_backward: state gradient shape");
  if (logit_grad.size() != 0 && logit_grad.size() != class_count(params))
    throw DimensionError("bptt_backward: logit gradient size");

  Params grads = zeros_like(params);
  if (state_grad_norms) state_grad_norms->assign(static_cast<std::size_t>(steps + 1), 0.0);
  if (steps == 0) return grads;

  // Gradient on the final state: readout plus external.
  Vector ds = external(state_grads, steps, p);
  if (logit_grad.size() != 0) {
    const Matrix& w_o = std::visit([](const auto& q) -> const Matrix& { return q.w_o; }, params);
    Matrix& g_o = std::visit([](auto& q) -> Matrix& { return q.w_o; }, grads);
    g_o += logit_grad * states.col(steps - 1).transpose();
    ds += w_o.transpose() * logit_grad;
  }

  struct {
    const ForwardTrace& tr;
    const Vector& ds;
    const Matrix& ext;
    const TruncationSampler& sampler;
    std::vector<double>* norms;
    Params& grads;
    void operator()(const LinearRnnParams& w) { backward_linear(w, tr, ds, ext, std::get<LinearRnnParams>(grads), norms); }
    void operator()(const RnnParams& w) { backward_rnn(w, tr, ds, ext, sampler, std::get<RnnParams>(grads), norms); }
    void operator()(const LmnParams& w) { backward_lmn(w, tr, ds, ext, sampler, std::get<LmnParams>(grads), norms); }
    void operator()(const LstmParams& w) { backward_lstm(w, tr, ds, ext, sampler, std::get<LstmParams>(grads), norms); }
  } visitor{trace, ds, state_grads, sampler, state_grad_norms, grads};
  std::visit(visitor, params);
  return grads;
}

SequenceGradient sequence_loss_and_grad(const Params& params, const Matrix& seq, int label, double alpha_act,
                                        const TruncationSampler& sampler) {
  const ForwardTrace tr = forward(params, seq);
  SequenceGradient out;
  Vector dlogits;
  out.loss = cross_entropy(tr.logits, label, &dlogits);
  Index arg = 0;
  tr.logits.maxCoeff(&arg);
  out.correct = arg == label;
  PenaltyTerms pen = penalty_terms(params, 0.0, alpha_act, tr);
  out.loss += pen.loss;
  out.grads = bptt_backward(params, tr, dlogits, alpha_act != 0.0 ? pen.state_grads : Matrix(), sampler);
  return out;
}

}  // namespace seqmem
