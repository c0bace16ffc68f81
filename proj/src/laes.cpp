#include "seqmem/laes.hpp"

#include "seqmem/rng.hpp"

#include <algorithm>
#include <limits>
#include <map>
#include <numeric>

namespace seqmem {

namespace {

constexpr Index kMaterializeLimit = 4'000'000;  // entries of Xi built explicitly
constexpr Index kGramChunkRows = 2048;
constexpr Index kGramPartitions = 8;  // fixed, so the reduction order never depends on threads
constexpr Index kEncodeBlock = 256;

// Writes the reversed, zero-padded prefix of `seq` ending at 1-based `end` into `row`.
template <class Row>
void fill_prefix_row(const Matrix& seq, const Vector& mean, Index end, Row&& row) {
  const Index d = seq.cols();
  row.setZero();
  for (Index lag = 0; lag < end; ++lag)
    row.segment(lag * d, d) = seq.row(end - 1 - lag).transpose() - mean;
}

std::vector<Index> draw_subset(Index total, Index keep, std::uint64_t seed) {
  std::vector<Index> idx(static_cast<std::size_t>(total));
  std::iota(idx.begin(), idx.end(), Index{0});
  SplitMix64 g(seed);
  for (Index i = 0; i < keep; ++i) {
    const auto j = i + static_cast<Index>(g.below(static_cast<std::uint64_t>(total - i)));
    std::swap(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(j)]);
  }
  idx.resize(static_cast<std::size_t>(keep));
  std::sort(idx.begin(), idx.end());
  return idx;
}

}  // namespace

Matrix LaesModel::decoder() const {
  Matrix c(a.cols() + b.cols(), a.rows());
  c.topRows(a.cols()) = a.transpose();
  c.bottomRows(b.cols()) = b.transpose();
  return c;
}

std::vector<PrefixRow> select_prefixes(const SequenceBatch& batch, const PrefixSelection& sel) {
  if (batch.empty()) throw std::invalid_argument("prefix selection: empty batch");
  if (sel.stride < 1) throw std::invalid_argument("prefix selection: stride must be >= 1");
  std::vector<PrefixRow> rows;
  for (Index s = 0; s < batch.size(); ++s) {
    const Index len = batch.sequences[static_cast<std::size_t>(s)].rows();
    for (Index t = sel.stride; t <= len; t += sel.stride) rows.push_back({s, t});
    if (len > 0 && len % sel.stride != 0) rows.push_back({s, len});
  }
  const auto total = static_cast<Index>(rows.size());
  if (sel.max_prefixes > 0 && total > sel.max_prefixes) {
    std::vector<PrefixRow> kept;
    kept.reserve(static_cast<std::size_t>(sel.max_prefixes));
    for (Index i : draw_subset(total, sel.max_prefixes, sel.seed)) kept.push_back(rows[static_cast<std::size_t>(i)]);
    rows = std::move(kept);
  }
  return rows;
}

Matrix build_prefix_matrix(const SequenceBatch& batch, Index prefix_stride, Index max_prefixes,
                           std::uint64_t seed) {
  const Index d = batch.dim();
  const Index width = batch.max_length() * d;
  const auto rows = select_prefixes(batch, {prefix_stride, max_prefixes, seed});
  const Vector zero_mean = Vector::Zero(d);
  Matrix xi(static_cast<Index>(rows.size()), width);
  for (Index r = 0; r < xi.rows(); ++r) {
    const auto& pr = rows[static_cast<std::size_t>(r)];
    fill_prefix_row(batch.sequences[static_cast<std::size_t>(pr.sequence)], zero_mean, pr.end, xi.row(r));
  }
  return xi;
}

LaesModel fit_laes(const SequenceBatch& input, const LaesFitOptions& options, LaesFitReport* report) {
  if (input.empty()) throw std::invalid_argument("fit_laes: empty batch");
  const Index p = options.hidden;
  const Index d = input.dim();
  const Index width = input.max_length() * d;
  if (p < 1 || p > width)
    throw DimensionError("fit_laes: hidden size " + std::to_string(p) + " exceeds the prefix dimension " +
                         std::to_string(width));
  for (const auto& s : input.sequences) require_finite(s, "fit_laes input");

  // Optional sequence subsample.
  const SequenceBatch* batch = &input;
  SequenceBatch sampled;
  if (options.max_sequences > 0 && input.size() > options.max_sequences) {
    for (Index i : draw_subset(input.size(), options.max_sequences, hash_keys(options.prefixes.seed, 1)))
      sampled.sequences.push_back(input.sequences[static_cast<std::size_t>(i)]);
    batch = &sampled;
  }

  Vector mean = Vector::Zero(d);
  if (options.center) {
    Index count = 0;
    for (const auto& s : batch->sequences) {
      mean += s.colwise().sum().transpose();
      count += s.rows();
    }
    if (count > 0) mean /= static_cast<double>(count);
  }

  const auto rows = select_prefixes(*batch, options.prefixes);
  const auto n_rows = static_cast<Index>(rows.size());

  Matrix u;
  Vector spectrum;  // sigma^2, descending
  double total_energy = 0.0;
  if (n_rows * width <= kMaterializeLimit && p <= std::min(n_rows, width)) {
    Matrix xi(n_rows, width);
    for (Index r = 0; r < n_rows; ++r) {
      const auto& pr = rows[static_cast<std::size_t>(r)];
      fill_prefix_row(batch->sequences[static_cast<std::size_t>(pr.sequence)], mean, pr.end, xi.row(r));
    }
    const SvdResult svd = truncated_svd(xi, std::min(n_rows, width));
    u = svd.u.leftCols(p);
    spectrum = svd.s.array().square();
    total_energy = xi.squaredNorm();
  } else {
    // Streamed Gram accumulation over fixed row partitions.
    std::vector<Matrix> partial(static_cast<std::size_t>(kGramPartitions));
#pragma omp parallel for schedule(static)
    for (Index part = 0; part < kGramPartitions; ++part) {
      const Index begin = n_rows * part / kGramPartitions;
      const Index end = n_rows * (part + 1) / kGramPartitions;
      Matrix g = Matrix::Zero(width, width);
      Matrix chunk(std::min(kGramChunkRows, std::max<Index>(end - begin, 1)), width);
      for (Index r0 = begin; r0 < end; r0 += kGramChunkRows) {
        const Index n = std::min(kGramChunkRows, end - r0);
        for (Index r = 0; r < n; ++r) {
          const auto& pr = rows[static_cast<std::size_t>(r0 + r)];
          fill_prefix_row(batch->sequences[static_cast<std::size_t>(pr.sequence)], mean, pr.end, chunk.row(r));
        }
        g.selfadjointView<Eigen::Lower>().rankUpdate(chunk.topRows(n).transpose());
      }
      partial[static_cast<std::size_t>(part)] = std::move(g);
    }
    Matrix gram = Matrix::Zero(width, width);
    for (const auto& g : partial) gram += g;
    gram.triangularView<Eigen::StrictlyUpper>() = gram.transpose();
    total_energy = gram.trace();
    Vector eig;
    const SvdResult svd = svd_from_gram(gram, p, &eig);
    u = svd.u;
    spectrum = eig;
  }

  LaesModel model;
  model.a = u.topRows(d).transpose();
  model.b = u.bottomRows(width - d).transpose() * u.topRows(width - d);
  model.mean = mean;

  if (report) {
    report->rows = n_rows;
    report->columns = width;
    report->singular_values = spectrum.cwiseMax(0.0).cwiseSqrt();
    report->total_energy = total_energy;
    const Index head = std::min<Index>(p, spectrum.size());
    report->tail_energy = std::max(0.0, total_energy - spectrum.head(head).sum());
    const double top = spectrum.size() ? std::sqrt(std::max(0.0, spectrum(0))) : 0.0;
    const double tol = top * static_cast<double>(std::max(n_rows, width)) * std::numeric_limits<double>::epsilon();
    report->numerical_rank = (report->singular_values.array() > tol).count();
    report->rank_used = std::min(p, report->numerical_rank);
  }
  return model;
}

Matrix laes_encode(const LaesModel& model, const Matrix& seq) {
  if (seq.cols() != model.input_dim())
    throw DimensionError("laes_encode: sequence dim " + std::to_string(seq.cols()) + " != model dim " +
                         std::to_string(model.input_dim()));
  Matrix states(seq.rows(), model.hidden());
  Vector m = Vector::Zero(model.hidden());
  for (Index t = 0; t < seq.rows(); ++t) {
    const Vector x = seq.row(t).transpose() - model.mean;
    m = model.a * x + model.b * m;
    states.row(t) = m.transpose();
  }
  return states;
}

Matrix laes_final_states(const LaesModel& model, const SequenceBatch& batch) {
  const Index p = model.hidden();
  const Index d = model.input_dim();
  Matrix out = Matrix::Zero(p, batch.size());
  if (batch.empty()) return out;
  if (batch.dim() != d) throw DimensionError("laes_final_states: feature dimension mismatch");

  // Blocks of equal-length sequences, in input order.
  std::map<Index, std::vector<Index>> by_length;
  for (Index i = 0; i < batch.size(); ++i) by_length[batch.sequences[static_cast<std::size_t>(i)].rows()].push_back(i);
  std::vector<std::pair<Index, std::vector<Index>>> blocks;
  for (const auto& [len, idx] : by_length)
    for (std::size_t s = 0; s < idx.size(); s += kEncodeBlock)
      blocks.emplace_back(len, std::vector<Index>(idx.begin() + static_cast<std::ptrdiff_t>(s),
                                                  idx.begin() + static_cast<std::ptrdiff_t>(std::min(idx.size(), s + kEncodeBlock))));

#pragma omp parallel for schedule(dynamic)
  for (std::size_t bi = 0; bi < blocks.size(); ++bi) {
    const auto& [len, idx] = blocks[bi];
    const auto n = static_cast<Index>(idx.size());
    Matrix m = Matrix::Zero(p, n);
    Matrix x(d, n);
    Matrix next(p, n);
    for (Index t = 0; t < len; ++t) {
      for (Index j = 0; j < n; ++j)
        x.col(j) = batch.sequences[static_cast<std::size_t>(idx[static_cast<std::size_t>(j)])].row(t).transpose() - model.mean;
      next.noalias() = model.a * x;
      next.noalias() += model.b * m;
      m.swap(next);
    }
    for (Index j = 0; j < n; ++j) out.col(idx[static_cast<std::size_t>(j)]) = m.col(j);
  }
  return out;
}

Matrix laes_decode_unroll(const LaesModel& model, const Vector& m, Index steps) {
  if (m.size() != model.hidden()) throw DimensionError("laes_decode_unroll: state size mismatch");
  if (steps < 1) throw std::invalid_argument("laes_decode_unroll: steps must be >= 1");
  Matrix out(steps, model.input_dim());
  Vector state = m;
  for (Index k = 0; k < steps; ++k) {
    out.row(k) = (model.a.transpose() * state + model.mean).transpose();
    state = model.b.transpose() * state;
  }
  return out;
}

double stm_error(const Matrix& states, const DecodeFn& decode, const Matrix& seq) {
  const Index t = seq.rows();
  if (t == 0) return 0.0;
  if (states.rows() != t) throw DimensionError("stm_error: states and sequence lengths differ");
  const Matrix rec = decode(states.row(t - 1).transpose(), t);
  if (rec.rows() != t || rec.cols() != seq.cols()) throw DimensionError("stm_error: decoder output shape");
  double e = 0.0;
  for (Index k = 0; k < t; ++k) e += (rec.row(k) - seq.row(t - 1 - k)).squaredNorm();
  return e;
}

}  // namespace seqmem
