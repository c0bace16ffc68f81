#include "seqmem/init.hpp"
#include "seqmem/training.hpp"

#include "test_util.hpp"

#include <gtest/gtest.h>

#include <utility>

using namespace seqmem;
using testutil::gaussian;

namespace {

TrainConfig toy_config() {
  TrainConfig c;
  c.lr = 0.01;
  c.epochs = 10;
  c.batch_size = 32;
  c.seed = 3;
  return c;
}

struct Toy {
  LabeledSequences train, val, test;
};

Toy toy_task() {
  const auto pool = synthetic_copy_task(3000, 20, 1, 2020);
  std::vector<Index> a, b, c;
  for (Index i = 0; i < 3000; ++i) (i < 2000 ? a : i < 2500 ? b : c).push_back(i);
  return {pool.subset(a), pool.subset(b), pool.subset(c)};
}

}  // namespace

TEST(Adam, ScalarFirstStepHandEvaluation) {
  Params p = LinearRnnParams{Matrix::Constant(1, 1, 0.5), Matrix::Constant(1, 1, -1.0), Matrix::Constant(1, 1, 2.0)};
  const Params g = LinearRnnParams{Matrix::Constant(1, 1, 0.2), Matrix::Constant(1, 1, -3.0), Matrix::Constant(1, 1, 0.0)};
  AdamState state;
  const AdamOptions opt{0.01, 0.9, 0.999, 1e-8};
  adam_step(p, g, state, opt);
  const auto expect = [&](double w, double grad) {
    const double m = (1 - 0.9) * grad, v = (1 - 0.999) * grad * grad;
    const double mh = m / (1 - 0.9), vh = v / (1 - 0.999);
    return w - 0.01 * mh / (std::sqrt(vh) + 1e-8);
  };
  const auto& q = std::get<LinearRnnParams>(p);
  EXPECT_NEAR(q.a(0, 0), expect(0.5, 0.2), 1e-12);
  EXPECT_NEAR(q.b(0, 0), expect(-1.0, -3.0), 1e-12);
  EXPECT_EQ(q.w_o(0, 0), 2.0);
  EXPECT_EQ(state.step, 1);

  // Second step from the hand-evaluated moments.
  adam_step(p, g, state, opt);
  const double m2 = 0.9 * 0.1 * 0.2 + 0.1 * 0.2;
  const double v2 = 0.999 * 0.001 * 0.04 + 0.001 * 0.04;
  const double step2 = 0.01 * (m2 / (1 - 0.81)) / (std::sqrt(v2 / (1 - 0.999 * 0.999)) + 1e-8);
  EXPECT_NEAR(q.a(0, 0), expect(0.5, 0.2) - step2, 1e-12);
}

TEST(Adam, ZeroGradientsAreIdentity) {
  Params p = testutil::random_params(ModelKind::Lmn, 4, 2, 3, 1);
  const Params before = p;
  AdamState state;
  for (int i = 0; i < 3; ++i) adam_step(p, zeros_like(p), state, AdamOptions{});
  EXPECT_EQ(testutil::max_abs_diff(p, before), 0.0);
  EXPECT_EQ(state.step, 3);
}

TEST(Adam, Deterministic) {
  Params a = testutil::random_params(ModelKind::Rnn, 4, 2, 3, 1);
  Params b = a;
  const Params g = testutil::random_params(ModelKind::Rnn, 4, 2, 3, 2);
  AdamState sa, sb;
  adam_step(a, g, sa, AdamOptions{});
  adam_step(b, g, sb, AdamOptions{});
  EXPECT_EQ(testutil::max_abs_diff(a, b), 0.0);
}

TEST(Adam, RejectsShapeMismatch) {
  Params a = testutil::random_params(ModelKind::Rnn, 4, 2, 3, 1);
  const Params g = testutil::random_params(ModelKind::Rnn, 5, 2, 3, 1);
  AdamState s;
  EXPECT_THROW(adam_step(a, g, s, AdamOptions{}), DimensionError);
}

TEST(ParamArithmetic, NormsAndAxpy) {
  Params a = testutil::random_params(ModelKind::Lstm, 3, 2, 2, 1);
  const Params b = testutil::random_params(ModelKind::Lstm, 3, 2, 2, 2);
  double expect = 0.0;
  for (const Matrix* m : param_matrices(a)) expect += m->squaredNorm();
  EXPECT_NEAR(squared_norm(a), expect, 1e-12);
  Params c = a;
  axpy_params(c, 2.0, b);
  scale_params(c, 0.5);
  const auto ma = param_matrices(std::as_const(a));
  const auto mb = param_matrices(b);
  const auto mc = param_matrices(std::as_const(c));
  for (std::size_t i = 0; i < ma.size(); ++i) EXPECT_LE((*mc[i] - 0.5 * (*ma[i] + 2.0 * *mb[i])).norm(), 1e-14);
  EXPECT_TRUE(all_finite(c));
  param_matrices(c)[0]->data()[0] = std::nan("");
  EXPECT_FALSE(all_finite(c));
}

TEST(TrainModel, ToyTaskReachesNinetyNinePercent) {
  const Toy toy = toy_task();
  const TrainResult r = train_model(init_orthogonal_lmn(16, 1, 2, 3), toy.train, toy.val, toy_config());
  EXPECT_EQ(r.history.epochs.size(), 10u);
  const double best = r.history.epochs[static_cast<std::size_t>(r.history.best_epoch - 1)].val_acc;
  EXPECT_GE(best, 0.99);
  EXPECT_EQ(evaluate_accuracy(r.params, toy.val), best);
  EXPECT_GE(evaluate_accuracy(r.params, toy.test), 0.98);
}

TEST(TrainModel, ZeroLearningRateLeavesParameters) {
  const Toy toy = toy_task();
  const Params init = init_orthogonal_rnn(8, 1, 2, 5);
  TrainConfig c = toy_config();
  c.lr = 0.0;
  c.epochs = 2;
  c.lambda_ortho = 1e-3;
  c.alpha_act = 1.0;
  const TrainResult r = train_model(init, toy.val, toy.val, c);
  EXPECT_EQ(testutil::max_abs_diff(r.params, init), 0.0);
}

TEST(TrainModel, ZeroEpochsReturnsInit) {
  const Toy toy = toy_task();
  const Params init = init_orthogonal_rnn(8, 1, 2, 5);
  TrainConfig c = toy_config();
  c.epochs = 0;
  const TrainResult r = train_model(init, toy.val, toy.val, c);
  EXPECT_EQ(testutil::max_abs_diff(r.params, init), 0.0);
  EXPECT_TRUE(r.history.epochs.empty());
}

TEST(TrainModel, BitReproducible) {
  const Toy toy = toy_task();
  TrainConfig c = toy_config();
  c.epochs = 2;
  c.trunc_p = 0.25;
  c.lambda_ortho = 1e-4;
  c.alpha_act = 1.0;
  const Params init = init_orthogonal_lmn(8, 1, 2, 9);
  const TrainResult a = train_model(init, toy.val, toy.test, c);
  const TrainResult b = train_model(init, toy.val, toy.test, c);
  EXPECT_EQ(testutil::max_abs_diff(a.params, b.params), 0.0);
  for (std::size_t i = 0; i < a.history.epochs.size(); ++i)
    EXPECT_EQ(a.history.epochs[i].train_loss, b.history.epochs[i].train_loss);
}

TEST(TrainModel, DivergenceIsReported) {
  const Toy toy = toy_task();
  TrainConfig c = toy_config();
  c.epochs = 1;
  Params init = init_orthogonal_rnn(8, 1, 2, 5);
  std::get<RnnParams>(init).w_o(0, 0) = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(train_model(init, toy.val, toy.val, c), DivergenceError);
}

TEST(TrainModel, RejectsEmptyData) {
  EXPECT_THROW(train_model(init_orthogonal_rnn(4, 1, 2, 1), LabeledSequences{}, LabeledSequences{}, toy_config()),
               std::invalid_argument);
}

TEST(EvaluateAccuracy, PerfectPredictor) {
  // Readout copies the sign of the first input through an identity memory.
  LabeledSequences data = synthetic_copy_task(10, 1, 1, 4);
  LinearRnnParams w{Matrix::Constant(1, 1, 1.0), Matrix::Zero(1, 1), (Matrix(2, 1) << -1.0, 1.0).finished()};
  EXPECT_EQ(evaluate_accuracy(w, data), 1.0);
}

TEST(EvaluateAccuracy, ConstantPredictorOnBalancedSet) {
  LabeledSequences data;
  for (int i = 0; i < 10; ++i) {
    data.batch.sequences.push_back(Matrix::Constant(3, 1, 0.1 * i));
    data.labels.push_back(i);
  }
  LinearRnnParams w{Matrix::Zero(2, 1), Matrix::Zero(2, 2), Matrix::Zero(10, 2)};  // all logits tie -> class 0
  EXPECT_DOUBLE_EQ(evaluate_accuracy(w, data), 0.1);
}

TEST(EvaluateAccuracy, MatchesConfusionTally) {
  const auto data = synthetic_copy_task(300, 6, 2, 5);
  LabeledSequences multi = data;
  SplitMix64 g(1);
  for (auto& y : multi.labels) y = static_cast<int>(g.below(4));
  const Params params = testutil::random_params(ModelKind::Lmn, 5, 2, 4, 2, 2.0);
  Matrix confusion = Matrix::Zero(4, 4);
  for (Index i = 0; i < multi.size(); ++i) {
    Index pred = 0;
    forward(params, multi.batch.sequences[std::size_t(i)]).logits.maxCoeff(&pred);
    confusion(multi.labels[std::size_t(i)], pred) += 1.0;
  }
  EXPECT_DOUBLE_EQ(evaluate_accuracy(params, multi, 7), confusion.trace() / confusion.sum());
  EXPECT_THROW(evaluate_accuracy(params, LabeledSequences{}), std::invalid_argument);
}
