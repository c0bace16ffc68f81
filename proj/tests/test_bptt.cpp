#include "seqmem/init.hpp"
#include "seqmem/training.hpp"

#include "test_util.hpp"

#include <gtest/gtest.h>

using namespace seqmem;
using testutil::gaussian;
using testutil::max_relative_error;
using testutil::numeric_gradient;
using testutil::random_params;

namespace {

constexpr ModelKind kKinds[] = {ModelKind::LinearRnn, ModelKind::Rnn, ModelKind::Lmn, ModelKind::Lstm};

// Loss oracle built from the forward pass alone: log-sum-exp cross-entropy
// plus alpha * mean squared norm of the probed states.
double oracle_loss(const Params& params, const Matrix& seq, int label, double alpha) {
  const ForwardTrace tr = forward(params, seq);
  const double mx = tr.logits.maxCoeff();
  double z = 0.0;
  for (Index i = 0; i < tr.logits.size(); ++i) z += std::exp(tr.logits(i) - mx);
  double loss = mx + std::log(z) - tr.logits(label);
  const Matrix& s = probed_states(tr, kind_of(params));
  loss += alpha * s.squaredNorm() / static_cast<double>(s.cols());
  return loss;
}

// Independent Elman RNN reverse pass with optional per-step truncation of the recurrent edge.
RnnParams reference_rnn_grad(const RnnParams& w, const Matrix& x, int label, const std::vector<bool>& drop) {
  const Index steps = x.rows();
  const Index p = w.u.rows();
  std::vector<Vector> h(static_cast<std::size_t>(steps + 1), Vector::Zero(p));
  for (Index t = 1; t <= steps; ++t)
    h[t] = (w.v * x.row(t - 1).transpose() + w.u * h[t - 1]).array().tanh().matrix();
  Vector logits = w.w_o * h[steps];
  Vector prob = (logits.array() - logits.maxCoeff()).exp();
  prob /= prob.sum();
  prob(label) -= 1.0;
  RnnParams g{Matrix::Zero(p, x.cols()), Matrix::Zero(p, p), prob * h[steps].transpose()};
  Vector dh = w.w_o.transpose() * prob;
  for (Index t = steps; t >= 1; --t) {
    const Vector da = dh.array() * (1.0 - h[t].array().square());
    g.v += da * x.row(t - 1);
    g.u += da * h[t - 1].transpose();
    dh = drop[static_cast<std::size_t>(t)] ? Vector::Zero(p) : Vector(w.u.transpose() * da);
  }
  return g;
}

}  // namespace

class FiniteDifference : public ::testing::TestWithParam<ModelKind> {};

TEST_P(FiniteDifference, TwentyRandomInstances) {
  const ModelKind kind = GetParam();
  double worst = 0.0;
  for (std::uint64_t inst = 0; inst < 20; ++inst) {
    const Index p = 2 + Index(inst % 7);
    const Index d = 1 + Index(inst % 3);
    const Index steps = 2 + Index(inst % 9);
    const Index classes = 2 + Index(inst % 3);
    const double alpha = inst % 2 ? 0.3 : 0.0;
    const Params params = random_params(kind, p, d, classes, 500 + inst, 1.2);
    const Matrix x = gaussian(steps, d, 900 + inst);
    const int label = static_cast<int>(inst % std::uint64_t(classes));
    const SequenceGradient an = sequence_loss_and_grad(params, x, label, alpha, TruncationSampler{});
    EXPECT_NEAR(an.loss, oracle_loss(params, x, label, alpha), 1e-12);
    const Params num = numeric_gradient(params, [&](const Params& q) { return oracle_loss(q, x, label, alpha); });
    worst = std::max(worst, max_relative_error(an.grads, num, testutil::fd_floor(an.loss)));
  }
  EXPECT_LE(worst, 1e-4) << to_string(kind);
}

INSTANTIATE_TEST_SUITE_P(AllKinds, FiniteDifference, ::testing::ValuesIn(kKinds),
                         [](const auto& info) { return std::string(to_string(info.param)); });

TEST(Bptt, ZeroLossGradientGivesZeroGrads) {
  for (ModelKind kind : kKinds) {
    const Params params = random_params(kind, 4, 2, 3, 1);
    const ForwardTrace tr = forward(params, gaussian(6, 2, 2));
    const Params g = bptt_backward(params, tr, Vector::Zero(3), Matrix(), TruncationSampler{});
    EXPECT_EQ(squared_norm(g), 0.0) << to_string(kind);
  }
}

TEST(Bptt, ZeroProbabilityNeverConsultsSampler) {
  for (ModelKind kind : kKinds) {
    const Params params = random_params(kind, 5, 2, 3, 3);
    const Matrix x = gaussian(8, 2, 4);
    const SequenceGradient a = sequence_loss_and_grad(params, x, 1, 0.0, TruncationSampler{});
    const SequenceGradient b = sequence_loss_and_grad(params, x, 1, 0.0, TruncationSampler{0.0, 123, 456});
    EXPECT_EQ(testutil::max_abs_diff(a.grads, b.grads), 0.0) << to_string(kind);
  }
}

TEST(Bptt, TruncatedRnnMatchesIndependentReversePass) {
  for (std::uint64_t inst = 0; inst < 10; ++inst) {
    const auto w = std::get<RnnParams>(random_params(ModelKind::Rnn, 5, 2, 3, 40 + inst, 1.2));
    const Matrix x = gaussian(9, 2, 60 + inst);
    for (double prob : {0.0, 0.5, 1.0}) {
      const TruncationSampler sampler{prob, 77, inst};
      std::vector<bool> drop(10, false);
      for (Index t = 1; t <= 9; ++t) drop[static_cast<std::size_t>(t)] = sampler.drop(t);
      const SequenceGradient an = sequence_loss_and_grad(w, x, 2, 0.0, sampler);
      const Params ref = reference_rnn_grad(w, x, 2, drop);
      EXPECT_LE(testutil::max_abs_diff(an.grads, ref), 1e-12) << "p=" << prob;
    }
  }
}

TEST(Bptt, LinearRnnIgnoresTruncation) {
  const Params params = random_params(ModelKind::LinearRnn, 4, 2, 3, 9);
  const Matrix x = gaussian(7, 2, 10);
  const auto a = sequence_loss_and_grad(params, x, 0, 0.0, TruncationSampler{});
  const auto b = sequence_loss_and_grad(params, x, 0, 0.0, TruncationSampler{1.0, 1, 1});
  EXPECT_EQ(testutil::max_abs_diff(a.grads, b.grads), 0.0);
}

TEST(Bptt, FullTruncationKeepsLmnMemoryPathConstant) {
  const Params params = init_orthogonal_lmn(16, 1, 10, 3);
  const Matrix x = gaussian(200, 1, 5);
  const ForwardTrace tr = forward(params, x);
  Vector dlogits;
  cross_entropy(tr.logits, 4, &dlogits);
  std::vector<double> norms;
  bptt_backward(params, tr, dlogits, Matrix(), TruncationSampler{1.0, 0, 0}, &norms);
  ASSERT_EQ(norms.size(), 201u);
  for (double n : norms) EXPECT_NEAR(n, norms.back(), 1e-10);
  // Without truncation the curve is not constant.
  bptt_backward(params, tr, dlogits, Matrix(), TruncationSampler{}, &norms);
  double spread = 0.0;
  for (double n : norms) spread = std::max(spread, std::abs(n - norms.back()));
  EXPECT_GT(spread, 1e-6);
}

TEST(Bptt, FullTruncationRnnIsFeedForward) {
  // With every recurrent edge cut, only the final step receives gradient.
  const auto w = std::get<RnnParams>(random_params(ModelKind::Rnn, 4, 1, 2, 21));
  const Matrix x = gaussian(6, 1, 22);
  std::vector<double> norms;
  const ForwardTrace tr = forward(w, x);
  Vector dl;
  cross_entropy(tr.logits, 1, &dl);
  bptt_backward(w, tr, dl, Matrix(), TruncationSampler{1.0, 0, 0}, &norms);
  EXPECT_GT(norms[6], 0.0);
  for (Index t = 0; t < 6; ++t) EXPECT_EQ(norms[static_cast<std::size_t>(t)], 0.0);
}

TEST(Penalty, OrthogonalMatrixHasNoPenalty) {
  Matrix g;
  const Matrix q = random_orthogonal(6, 2);
  EXPECT_NEAR(orthogonality_penalty(q, 1.0, &g), 0.0, 1e-24);
  EXPECT_LE(g.norm(), 1e-12);
}

TEST(Penalty, TwiceIdentityHandValueAndFiniteDifference) {
  Matrix g;
  const Matrix w = 2.0 * Matrix::Identity(2, 2);
  EXPECT_DOUBLE_EQ(orthogonality_penalty(w, 1.0, &g), 18.0);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Matrix v = gaussian(4, 4, seed);
    const double lambda = 0.7;
    orthogonality_penalty(v, lambda, &g);
    Matrix num(4, 4);
    for (Index i = 0; i < v.size(); ++i) {
      const double orig = v.data()[i];
      v.data()[i] = orig + 1e-6;
      const double up = orthogonality_penalty(v, lambda, nullptr);
      v.data()[i] = orig - 1e-6;
      const double down = orthogonality_penalty(v, lambda, nullptr);
      v.data()[i] = orig;
      num.data()[i] = (up - down) / 2e-6;
    }
    EXPECT_LE((g - num).cwiseAbs().maxCoeff(), 1e-6 * std::max(1.0, g.cwiseAbs().maxCoeff()));
  }
}

TEST(Penalty, TermsTargetRecurrentMatrixOnly) {
  const Params params = random_params(ModelKind::Lmn, 4, 2, 3, 8);
  const ForwardTrace tr = forward(params, gaussian(5, 2, 1));
  const PenaltyTerms pen = penalty_terms(params, 0.1, 0.0, tr);
  const auto& g = std::get<LmnParams>(pen.grads);
  EXPECT_GT(g.w_mm.norm(), 0.0);
  EXPECT_EQ(g.w_xh.norm() + g.w_mh.norm() + g.w_hm.norm() + g.w_o.norm(), 0.0);
  EXPECT_EQ(pen.state_grads.norm(), 0.0);
  EXPECT_NEAR(pen.loss, orthogonality_penalty(std::get<LmnParams>(params).w_mm, 0.1, nullptr), 1e-15);
}

TEST(Penalty, ZeroAlphaContributesNothing) {
  const Params params = random_params(ModelKind::Rnn, 4, 2, 3, 8);
  const ForwardTrace tr = forward(params, gaussian(5, 2, 1));
  const PenaltyTerms pen = penalty_terms(params, 0.0, 0.0, tr);
  EXPECT_EQ(pen.loss, 0.0);
  EXPECT_EQ(pen.state_grads.norm(), 0.0);
  EXPECT_EQ(squared_norm(pen.grads), 0.0);
}

TEST(Penalty, LstmHasNoRecurrentPenalty) {
  const Params params = random_params(ModelKind::Lstm, 3, 1, 2, 1);
  EXPECT_EQ(recurrent_matrix(params), nullptr);
}

TEST(CrossEntropy, MatchesLogSoftmax) {
  const Vector logits = (Vector(3) << 1.0, -2.0, 0.5).finished();
  Vector g;
  const double loss = cross_entropy(logits, 2, &g);
  const double z = std::exp(1.0) + std::exp(-2.0) + std::exp(0.5);
  EXPECT_NEAR(loss, std::log(z) - 0.5, 1e-15);
  EXPECT_NEAR(g.sum(), 0.0, 1e-15);
  EXPECT_NEAR(g(2), std::exp(0.5) / z - 1.0, 1e-15);
  EXPECT_THROW(cross_entropy(logits, 3, nullptr), std::invalid_argument);
}
