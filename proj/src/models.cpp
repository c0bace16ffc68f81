#include "seqmem/models.hpp"

#include <stdexcept>

namespace seqmem {

std::string_view to_string(ModelKind kind) {
  switch (kind) {
    case ModelKind::LinearRnn: return "linear_rnn";
    case ModelKind::Rnn: return "rnn";
    case ModelKind::Lmn: return "lmn";
    case ModelKind::Lstm: return "lstm";
  }
  return "unknown";
}

ModelKind parse_model_kind(std::string_view name) {
  if (name == "linear_rnn") return ModelKind::LinearRnn;
  if (name == "rnn") return ModelKind::Rnn;
  if (name == "lmn") return ModelKind::Lmn;
  if (name == "lstm") return ModelKind::Lstm;
  throw std::invalid_argument("unknown model kind '" + std::string(name) + "'");
}

Index state_size(const Params& p) {
  return std::visit([](const auto& q) -> Index { return q.w_o.cols(); }, p);
}

Index class_count(const Params& p) {
  return std::visit([](const auto& q) -> Index { return q.w_o.rows(); }, p);
}

Index input_size(const Params& p) {
  struct {
    Index operator()(const LinearRnnParams& q) const { return q.a.cols(); }
    Index operator()(const RnnParams& q) const { return q.v.cols(); }
    Index operator()(const LmnParams& q) const { return q.w_xh.cols(); }
    Index operator()(const LstmParams& q) const { return q.gate_i.cols() - q.gate_i.rows(); }
  } visitor;
  return std::visit(visitor, p);
}

const Matrix& probed_states(const ForwardTrace& trace, ModelKind kind) {
  return (kind == ModelKind::LinearRnn || kind == ModelKind::Lmn) ? trace.memory : trace.hidden;
}

namespace {

void check_input(const Matrix& seq, Index d, const char* who) {
  if (seq.cols() != d)
    throw DimensionError(std::string(who) + ": sequence dim " + std::to_string(seq.cols()) +
                         " != input size " + std::to_string(d));
}

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

}  // namespace

ForwardTrace linear_rnn_forward(const LinearRnnParams& params, const Matrix& seq) {
  const Index p = params.b.rows();
  check_input(seq, params.a.cols(), "linear_rnn_forward");
  require_shape(params.b, p, p, "linear_rnn_forward B");
  require_shape(params.w_o, params.w_o.rows(), p, "linear_rnn_forward W_o");
  ForwardTrace tr;
  tr.input = seq;
  tr.memory.resize(p, seq.rows());
  Vector m = Vector::Zero(p);
  for (Index t = 0; t < seq.rows(); ++t) {
    m = params.a * seq.row(t).transpose() + params.b * m;
    tr.memory.col(t) = m;
  }
  tr.logits = params.w_o * m;
  return tr;
}

ForwardTrace rnn_forward(const RnnParams& params, const Matrix& seq) {
  const Index p = params.u.rows();
  check_input(seq, params.v.cols(), "rnn_forward");
  require_shape(params.u, p, p, "rnn_forward U");
  require_shape(params.w_o, params.w_o.rows(), p, "rnn_forward W_o");
  ForwardTrace tr;
  tr.input = seq;
  tr.hidden.resize(p, seq.rows());
  Vector h = Vector::Zero(p);
  for (Index t = 0; t < seq.rows(); ++t) {
    h = (params.v * seq.row(t).transpose() + params.u * h).array().tanh();
    tr.hidden.col(t) = h;
  }
  tr.logits = params.w_o * h;
  return tr;
}

ForwardTrace lmn_forward(const LmnParams& params, const Matrix& seq) {
  const Index ph = params.w_xh.rows();
  const Index pm = params.w_mm.rows();
  check_input(seq, params.w_xh.cols(), "lmn_forward");
  require_shape(params.w_mh, ph, pm, "lmn_forward W_mh");
  require_shape(params.w_hm, pm, ph, "lmn_forward W_hm");
  require_shape(params.w_mm, pm, pm, "lmn_forward W_mm");
  require_shape(params.w_o, params.w_o.rows(), pm, "lmn_forward W_o");
  ForwardTrace tr;
  tr.input = seq;
  tr.hidden.resize(ph, seq.rows());
  tr.memory.resize(pm, seq.rows());
  Vector m = Vector::Zero(pm);
  for (Index t = 0; t < seq.rows(); ++t) {
    const Vector h = (params.w_xh * seq.row(t).transpose() + params.w_mh * m).array().tanh();
    m = params.w_hm * h + params.w_mm * m;
    tr.hidden.col(t) = h;
    tr.memory.col(t) = m;
  }
  tr.logits = params.w_o * m;
  return tr;
}

ForwardTrace lstm_forward(const LstmParams& params, const Matrix& seq) {
  const Index p = params.gate_i.rows();
  const Index d = params.gate_i.cols() - p;
  check_input(seq, d, "lstm_forward");
  for (const Matrix* g : {&params.gate_f, &params.gate_g, &params.gate_o}) require_shape(*g, p, d + p, "lstm_forward gate");
  for (const Matrix* b : {&params.bias_i, &params.bias_f, &params.bias_g, &params.bias_o}) require_shape(*b, p, 1, "lstm_forward bias");
  require_shape(params.w_o, params.w_o.rows(), p, "lstm_forward W_o");

  ForwardTrace tr;
  tr.input = seq;
  tr.hidden.resize(p, seq.rows());
  tr.memory.resize(p, seq.rows());
  tr.gates.resize(4 * p, seq.rows());
  Vector h = Vector::Zero(p);
  Vector c = Vector::Zero(p);
  Vector z(d + p);
  for (Index t = 0; t < seq.rows(); ++t) {
    z.head(d) = seq.row(t).transpose();
    z.tail(p) = h;
    const Vector i = (params.gate_i * z + params.bias_i).unaryExpr(&sigmoid);
    const Vector f = (params.gate_f * z + params.bias_f).unaryExpr(&sigmoid);
    const Vector g = (params.gate_g * z + params.bias_g).array().tanh();
    const Vector o = (params.gate_o * z + params.bias_o).unaryExpr(&sigmoid);
    c = f.cwiseProduct(c) + i.cwiseProduct(g);
    h = o.cwiseProduct(Vector(c.array().tanh()));
    tr.gates.col(t) << i, f, g, o;
    tr.hidden.col(t) = h;
    tr.memory.col(t) = c;
  }
  tr.logits = params.w_o * h;
  return tr;
}

ForwardTrace forward(const Params& params, const Matrix& seq) {
  struct {
    const Matrix& seq;
    ForwardTrace operator()(const LinearRnnParams& q) const { return linear_rnn_forward(q, seq); }
    ForwardTrace operator()(const RnnParams& q) const { return rnn_forward(q, seq); }
    ForwardTrace operator()(const LmnParams& q) const { return lmn_forward(q, seq); }
    ForwardTrace operator()(const LstmParams& q) const { return lstm_forward(q, seq); }
  } visitor{seq};
  return std::visit(visitor, params);
}

LmnParams rnn_to_lmn(const RnnParams& rnn) {
  const Index p = rnn.u.rows();
  LmnParams lmn;
  lmn.w_xh = rnn.v;
  lmn.w_mh = rnn.u;
  lmn.w_hm = Matrix::Identity(p, p);
  lmn.w_mm = Matrix::Zero(p, p);
  lmn.w_o = rnn.w_o;
  return lmn;
}

}  // namespace seqmem
