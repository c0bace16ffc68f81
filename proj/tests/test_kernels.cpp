#include "seqmem/kernels.hpp"

#include "test_util.hpp"

#include <gtest/gtest.h>
#include <omp.h>

using namespace seqmem;
using testutil::gaussian;
using testutil::random_params;

namespace {

constexpr ModelKind kKinds[] = {ModelKind::LinearRnn, ModelKind::Rnn, ModelKind::Lmn, ModelKind::Lstm};

struct Minibatch {
  std::vector<Matrix> seqs;
  std::vector<int> labels;
  std::vector<std::uint64_t> streams;

  std::vector<const Matrix*> ptrs() const {
    std::vector<const Matrix*> out;
    for (const auto& s : seqs) out.push_back(&s);
    return out;
  }
};

Minibatch make_batch(Index n, Index steps, Index d, Index classes, std::uint64_t seed, bool ragged = false) {
  Minibatch mb;
  SplitMix64 g(seed);
  for (Index i = 0; i < n; ++i) {
    const Index len = ragged ? steps - Index(i % 3) : steps;
    mb.seqs.push_back(gaussian(len, d, seed * 1000 + std::uint64_t(i)));
    mb.labels.push_back(static_cast<int>(g.below(std::uint64_t(classes))));
    mb.streams.push_back(hash_keys(seed, std::uint64_t(i)));
  }
  return mb;
}

// Serial reference: per-sequence reverse passes summed in order.
BatchGradient reference(const Params& params, const Minibatch& mb, double alpha, double trunc_p, std::uint64_t seed) {
  BatchGradient out;
  out.grads = zeros_like(params);
  for (std::size_t i = 0; i < mb.seqs.size(); ++i) {
    const SequenceGradient g =
        sequence_loss_and_grad(params, mb.seqs[i], mb.labels[i], alpha, TruncationSampler{trunc_p, seed, mb.streams[i]});
    out.loss_sum += g.loss;
    out.correct += g.correct;
    axpy_params(out.grads, 1.0, g.grads);
  }
  return out;
}

double relative_gap(const Params& a, const Params& b) {
  return testutil::max_abs_diff(a, b) / std::max(1.0, std::sqrt(squared_norm(b)));
}

}  // namespace

class BatchKernel : public ::testing::TestWithParam<ModelKind> {};

TEST_P(BatchKernel, MatchesReferenceAcrossMasksAndPenalties) {
  const ModelKind kind = GetParam();
  for (double trunc_p : {0.0, 0.3, 1.0}) {
    for (double alpha : {0.0, 0.5}) {
      const Params params = random_params(kind, 6, 2, 4, 7, 1.2);
      const Minibatch mb = make_batch(13, 9, 2, 4, 3);
      const auto ptrs = mb.ptrs();
      const BatchGradient ref = reference(params, mb, alpha, trunc_p, 99);
      const BatchGradient got =
          batch_loss_and_grad(params, ptrs, mb.labels, mb.streams, alpha, trunc_p, 99, 5);
      EXPECT_NEAR(got.loss_sum, ref.loss_sum, 1e-10 * std::abs(ref.loss_sum));
      EXPECT_EQ(got.correct, ref.correct);
      EXPECT_LE(relative_gap(got.grads, ref.grads), 1e-11) << "p=" << trunc_p << " alpha=" << alpha;
    }
  }
}

TEST_P(BatchKernel, RaggedShardsFallBack) {
  const ModelKind kind = GetParam();
  const Params params = random_params(kind, 5, 1, 3, 11);
  const Minibatch mb = make_batch(10, 8, 1, 3, 4, true);
  const auto ptrs = mb.ptrs();
  const BatchGradient ref = reference(params, mb, 0.2, 0.5, 5);
  const BatchGradient got = batch_loss_and_grad(params, ptrs, mb.labels, mb.streams, 0.2, 0.5, 5, 4);
  EXPECT_NEAR(got.loss_sum, ref.loss_sum, 1e-10 * std::abs(ref.loss_sum));
  EXPECT_LE(relative_gap(got.grads, ref.grads), 1e-11);
}

TEST_P(BatchKernel, ThreadCountInvariant) {
  const ModelKind kind = GetParam();
  const Params params = random_params(kind, 8, 1, 3, 12);
  const Minibatch mb = make_batch(40, 12, 1, 3, 6);
  const auto ptrs = mb.ptrs();
  const int saved = omp_get_max_threads();
  omp_set_num_threads(1);
  const BatchGradient one = batch_loss_and_grad(params, ptrs, mb.labels, mb.streams, 0.1, 0.25, 8, 8);
  const Matrix logits_one = batch_final_logits(params, SequenceBatch{mb.seqs}, 16);
  omp_set_num_threads(4);
  const BatchGradient four = batch_loss_and_grad(params, ptrs, mb.labels, mb.streams, 0.1, 0.25, 8, 8);
  const Matrix logits_four = batch_final_logits(params, SequenceBatch{mb.seqs}, 16);
  omp_set_num_threads(saved);
  EXPECT_EQ(one.loss_sum, four.loss_sum);
  EXPECT_EQ(testutil::max_abs_diff(one.grads, four.grads), 0.0);
  EXPECT_TRUE(logits_one == logits_four);
}

TEST_P(BatchKernel, FinalLogitsAndStatesMatchForward) {
  const ModelKind kind = GetParam();
  const Params params = random_params(kind, 6, 2, 3, 13);
  const Minibatch mb = make_batch(11, 7, 2, 3, 9, true);
  const SequenceBatch batch{mb.seqs};
  const Matrix logits = batch_final_logits(params, batch, 4);
  const auto states = batch_states(params, batch, 4);
  for (std::size_t i = 0; i < mb.seqs.size(); ++i) {
    const ForwardTrace tr = forward(params, mb.seqs[i]);
    EXPECT_LE((logits.col(Index(i)) - tr.logits).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_LE((states[i] - probed_states(tr, kind)).cwiseAbs().maxCoeff(), 1e-12);
  }
}

INSTANTIATE_TEST_SUITE_P(AllKinds, BatchKernel, ::testing::ValuesIn(kKinds),
                         [](const auto& info) { return std::string(to_string(info.param)); });

TEST(TruncationMask, FollowsSamplers) {
  const std::vector<TruncationSampler> samplers{{0.5, 3, 0}, {0.5, 3, 1}, {0.0, 3, 2}};
  const TruncationMask mask = TruncationMask::from_samplers(20, samplers);
  for (Index t = 1; t <= 20; ++t) {
    for (Index b = 0; b < 3; ++b) EXPECT_EQ(mask.drop(t, b), samplers[std::size_t(b)].drop(t));
    const auto keep = mask.keep_row(t);
    for (Index b = 0; b < 3; ++b) EXPECT_EQ(keep(b), mask.drop(t, b) ? 0.0 : 1.0);
    EXPECT_FALSE(mask.all_dropped(t));
  }
}

TEST(TruncationSampler, DropRateNearProbability) {
  const TruncationSampler s{0.25, 42, 7};
  Index dropped = 0;
  for (Index t = 1; t <= 20000; ++t) dropped += s.drop(t);
  EXPECT_NEAR(double(dropped) / 20000.0, 0.25, 0.015);
}
