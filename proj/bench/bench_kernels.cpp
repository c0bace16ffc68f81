// Serial per-sequence BPTT versus the batched shard kernels on one minibatch.

#include "seqmem/init.hpp"
#include "seqmem/kernels.hpp"

#include <benchmark/benchmark.h>

namespace {

using namespace seqmem;

struct Fixture {
  Params params;
  LabeledSequences data;
  std::vector<const Matrix*> seqs;
  std::vector<std::uint64_t> streams;
};

Fixture make_fixture(ModelKind kind, Index p, Index steps, Index batch) {
  Fixture f;
  switch (kind) {
    case ModelKind::Rnn: f.params = init_orthogonal_rnn(p, 1, 10, 1); break;
    case ModelKind::Lmn: f.params = init_orthogonal_lmn(p, 1, 10, 1); break;
    case ModelKind::Lstm: f.params = init_lstm(p, 1, 10, 1); break;
    case ModelKind::LinearRnn: f.params = init_orthogonal_linear_rnn(p, 1, 10, 1); break;
  }
  f.data = synthetic_copy_task(batch, steps, 1, 2);
  for (Index i = 0; i < batch; ++i) {
    f.seqs.push_back(&f.data.batch.sequences[static_cast<std::size_t>(i)]);
    f.streams.push_back(static_cast<std::uint64_t>(i));
  }
  return f;
}

void serial(benchmark::State& state, ModelKind kind) {
  const Fixture f = make_fixture(kind, state.range(0), state.range(1), 64);
  for (auto _ : state) {
    Params total = zeros_like(f.params);
    for (std::size_t i = 0; i < f.seqs.size(); ++i) {
      const auto g = sequence_loss_and_grad(f.params, *f.seqs[i], f.data.labels[i], 0.0, TruncationSampler{});
      axpy_params(total, 1.0, g.grads);
    }
    benchmark::DoNotOptimize(total);
  }
  state.SetItemsProcessed(state.iterations() * 64);
}

void batched(benchmark::State& state, ModelKind kind) {
  const Fixture f = make_fixture(kind, state.range(0), state.range(1), 64);
  for (auto _ : state) {
    auto g = batch_loss_and_grad(f.params, f.seqs, f.data.labels, f.streams, 0.0, 0.0, 0, state.range(2));
    benchmark::DoNotOptimize(g);
  }
  state.SetItemsProcessed(state.iterations() * 64);
}

void shapes(benchmark::internal::Benchmark* b) {
  b->Args({64, 196, 64})->Args({128, 196, 64})->Args({128, 196, 16})->Unit(benchmark::kMillisecond);
}

BENCHMARK_CAPTURE(serial, lmn, ModelKind::Lmn)->Apply(shapes);
BENCHMARK_CAPTURE(batched, lmn, ModelKind::Lmn)->Apply(shapes);
BENCHMARK_CAPTURE(serial, rnn, ModelKind::Rnn)->Apply(shapes);
BENCHMARK_CAPTURE(batched, rnn, ModelKind::Rnn)->Apply(shapes);
BENCHMARK_CAPTURE(serial, lstm, ModelKind::Lstm)->Apply(shapes);
BENCHMARK_CAPTURE(batched, lstm, ModelKind::Lstm)->Apply(shapes);

}  // namespace

BENCHMARK_MAIN();
