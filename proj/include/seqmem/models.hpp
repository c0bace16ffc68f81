#pragma once

#include "seqmem/numerics.hpp"

#include <concepts>
#include <string>
#include <string_view>
#include <type_traits>
#include <variant>

namespace seqmem {

enum class ModelKind { LinearRnn, Rnn, Lmn, Lstm };

std::string_view to_string(ModelKind kind);
ModelKind parse_model_kind(std::string_view name);

// Parameter bundles. None of the recurrent models except the LSTM carry biases.
// Each bundle enumerates its matrices through `for_each_param`, which fixes the
// order used by the optimizer, gradient clipping and checkpoints.

/// m^t = A x^t + B m^{t-1};  y = W_o m^T
struct LinearRnnParams {
  Matrix a;    // p x d
  Matrix b;    // p x p
  Matrix w_o;  // c x p
  static constexpr ModelKind kind = ModelKind::LinearRnn;
};

/// h^t = tanh(V x^t + U h^{t-1});  y = W_o h^T
struct RnnParams {
  Matrix v;    // p x d
  Matrix u;    // p x p
  Matrix w_o;  // c x p
  static constexpr ModelKind kind = ModelKind::Rnn;
};

/// h^t = tanh(W_xh x^t + W_mh m^{t-1});  m^t = W_hm h^t + W_mm m^{t-1};  y = W_o m^T
struct LmnParams {
  Matrix w_xh;  // p_h x d
  Matrix w_mh;  // p_h x p_m
  Matrix w_hm;  // p_m x p_h
  Matrix w_mm;  // p_m x p_m
  Matrix w_o;   // c x p_m
  static constexpr ModelKind kind = ModelKind::Lmn;
};

/// Gates act on z = [x^t ; h^{t-1}]:
///   i = sig(W_i z + b_i), f = sig(W_f z + b_f), g = tanh(W_g z + b_g), o = sig(W_o z + b_o)
///   c^t = f * c^{t-1} + i * g,  h^t = o * tanh(c^t),  y = W_out h^T
struct LstmParams {
  Matrix gate_i, gate_f, gate_g, gate_o;  // p x (d + p)
  Matrix bias_i, bias_f, bias_g, bias_o;  // p x 1
  Matrix w_o;                             // c x p readout
  static constexpr ModelKind kind = ModelKind::Lstm;
};

using Params = std::variant<LinearRnnParams, RnnParams, LmnParams, LstmParams>;

template <class P, class F>
  requires std::same_as<std::remove_const_t<P>, LinearRnnParams>
void for_each_param(P& p, F&& f) {
  f("a", p.a);
  f("b", p.b);
  f("w_o", p.w_o);
}

template <class P, class F>
  requires std::same_as<std::remove_const_t<P>, RnnParams>
void for_each_param(P& p, F&& f) {
  f("v", p.v);
  f("u", p.u);
  f("w_o", p.w_o);
}

template <class P, class F>
  requires std::same_as<std::remove_const_t<P>, LmnParams>
void for_each_param(P& p, F&& f) {
  f("w_xh", p.w_xh);
  f("w_mh", p.w_mh);
  f("w_hm", p.w_hm);
  f("w_mm", p.w_mm);
  f("w_o", p.w_o);
}

template <class P, class F>
  requires std::same_as<std::remove_const_t<P>, LstmParams>
void for_each_param(P& p, F&& f) {
  f("gate_i", p.gate_i);
  f("gate_f", p.gate_f);
  f("gate_g", p.gate_g);
  f("gate_o", p.gate_o);
  f("bias_i", p.bias_i);
  f("bias_f", p.bias_f);
  f("bias_g", p.bias_g);
  f("bias_o", p.bias_o);
  f("w_o", p.w_o);
}

/// Same-shaped bundle filled with zeros.
template <class P>
P zeros_like(const P& p) {
  P out = p;
  for_each_param(out, [](std::string_view, Matrix& m) { m.setZero(); });
  return out;
}

inline ModelKind kind_of(const Params& p) {
  return std::visit([](const auto& q) { return std::remove_cvref_t<decltype(q)>::kind; }, p);
}

/// Recurrent state size p (memory size for the LMN).
Index state_size(const Params& p);
Index input_size(const Params& p);
Index class_count(const Params& p);

/// Stored per-timestep quantities of one forward pass. Column t-1 holds step t.
///  linear RNN: memory = m
///  RNN:        hidden = h
///  LMN:        hidden = h, memory = m
///  LSTM:       hidden = h, memory = c (cell), gates = [i; f; g; o] (activated)
struct ForwardTrace {
  Matrix input;   // T x d
  Matrix hidden;  // p x T
  Matrix memory;  // p x T
  Matrix gates;   // 4p x T
  Vector logits;  // c

  Index steps() const { return input.rows(); }
};

/// The state read out by the classifier and probed by the diagnostics:
/// memory for the linear RNN and LMN, hidden for the RNN and LSTM.
const Matrix& probed_states(const ForwardTrace& trace, ModelKind kind);

ForwardTrace linear_rnn_forward(const LinearRnnParams& params, const Matrix& seq);
ForwardTrace rnn_forward(const RnnParams& params, const Matrix& seq);
ForwardTrace lmn_forward(const LmnParams& params, const Matrix& seq);
ForwardTrace lstm_forward(const LstmParams& params, const Matrix& seq);
ForwardTrace forward(const Params& params, const Matrix& seq);

/// W_xh = V, W_mh = U, W_hm = I, W_mm = 0, readout copied.
LmnParams rnn_to_lmn(const RnnParams& rnn);

}  // namespace seqmem
