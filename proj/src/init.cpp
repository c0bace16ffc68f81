#include "seqmem/init.hpp"

#include "seqmem/rng.hpp"

namespace seqmem {

namespace {

void check_laes_for_init(const LaesModel& laes, const Matrix& readout, const char* who) {
  if (readout.cols() != laes.hidden())
    throw DimensionError(std::string(who) + ": readout has " + std::to_string(readout.cols()) +
                         " columns, LAES state size is " + std::to_string(laes.hidden()));
  if (laes.mean.size() && laes.mean.cwiseAbs().maxCoeff() != 0.0)
    throw std::invalid_argument(std::string(who) + ": LAES was fitted with centering; networks have no input bias");
}

}  // namespace

RnnParams init_rnn_from_laes(const LaesModel& laes, const Matrix& readout) {
  check_laes_for_init(laes, readout, "init_rnn_from_laes");
  return {laes.a, laes.b, readout};
}

LmnParams init_lmn_from_laes(const LaesModel& laes, const Matrix& readout) {
  check_laes_for_init(laes, readout, "init_lmn_from_laes");
  const Index p = laes.hidden();
  LmnParams lmn;
  lmn.w_xh = laes.a;
  lmn.w_mh = Matrix::Zero(p, p);
  lmn.w_hm = Matrix::Identity(p, p);
  lmn.w_mm = laes.b;
  lmn.w_o = readout;
  return lmn;
}

LinearRnnParams init_linear_rnn_from_laes(const LaesModel& laes, const Matrix& readout) {
  check_laes_for_init(laes, readout, "init_linear_rnn_from_laes");
  return {laes.a, laes.b, readout};
}

RnnParams init_orthogonal_rnn(Index p, Index d, Index c, std::uint64_t seed) {
  RnnParams r;
  r.v = uniform_fan_in(p, d, d, hash_keys(seed, 1));
  r.u = random_orthogonal(p, hash_keys(seed, 2));
  r.w_o = uniform_fan_in(c, p, p, hash_keys(seed, 3));
  return r;
}

LmnParams init_orthogonal_lmn(Index p, Index d, Index c, std::uint64_t seed) {
  LmnParams l;
  l.w_xh = uniform_fan_in(p, d, d, hash_keys(seed, 1));
  l.w_mh = uniform_fan_in(p, p, p, hash_keys(seed, 4));
  l.w_hm = uniform_fan_in(p, p, p, hash_keys(seed, 5));
  l.w_mm = random_orthogonal(p, hash_keys(seed, 2));
  l.w_o = uniform_fan_in(c, p, p, hash_keys(seed, 3));
  return l;
}

LinearRnnParams init_orthogonal_linear_rnn(Index p, Index d, Index c, std::uint64_t seed) {
  LinearRnnParams l;
  l.a = uniform_fan_in(p, d, d, hash_keys(seed, 1));
  l.b = random_orthogonal(p, hash_keys(seed, 2));
  l.w_o = uniform_fan_in(c, p, p, hash_keys(seed, 3));
  return l;
}

LstmParams init_lstm(Index p, Index d, Index c, std::uint64_t seed) {
  LstmParams l;
  l.gate_i = uniform_fan_in(p, d + p, d + p, hash_keys(seed, 11));
  l.gate_f = uniform_fan_in(p, d + p, d + p, hash_keys(seed, 12));
  l.gate_g = uniform_fan_in(p, d + p, d + p, hash_keys(seed, 13));
  l.gate_o = uniform_fan_in(p, d + p, d + p, hash_keys(seed, 14));
  l.bias_i = Matrix::Zero(p, 1);
  l.bias_f = Matrix::Constant(p, 1, 1.0);
  l.bias_g = Matrix::Zero(p, 1);
  l.bias_o = Matrix::Zero(p, 1);
  l.w_o = uniform_fan_in(c, p, p, hash_keys(seed, 3));
  return l;
}

Matrix one_hot(std::span<const int> labels, Index classes) {
  Matrix y = Matrix::Zero(static_cast<Index>(labels.size()), classes);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= classes)
      throw std::invalid_argument("label " + std::to_string(labels[i]) + " outside [0, " + std::to_string(classes) + ")");
    y(static_cast<Index>(i), labels[i]) = 1.0;
  }
  return y;
}

Matrix fit_linear_head(const Matrix& states, std::span<const int> labels, double ridge, Index classes) {
  if (labels.empty()) throw std::invalid_argument("fit_linear_head: no labels");
  if (classes < 1) throw std::invalid_argument("fit_linear_head: class count must be positive");
  if (states.rows() != static_cast<Index>(labels.size()))
    throw DimensionError("fit_linear_head: states and labels disagree in count");
  return least_squares_fit(states, one_hot(labels, classes), ridge).transpose();
}

}  // namespace seqmem
