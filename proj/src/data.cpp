#include "seqmem/data.hpp"

#include "seqmem/rng.hpp"

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

namespace seqmem {

Index SequenceBatch::dim() const {
  if (sequences.empty()) throw DimensionError("SequenceBatch: empty batch has no dimension");
  const Index d = sequences.front().cols();
  for (const auto& s : sequences)
    if (s.cols() != d) throw DimensionError("SequenceBatch: inconsistent feature dimensions");
  return d;
}

Index SequenceBatch::max_length() const {
  Index t = 0;
  for (const auto& s : sequences) t = std::max(t, s.rows());
  return t;
}

LabeledSequences LabeledSequences::subset(std::span<const Index> indices) const {
  LabeledSequences out;
  out.batch.sequences.reserve(indices.size());
  out.labels.reserve(indices.size());
  for (Index i : indices) {
    out.batch.sequences.push_back(batch.sequences[static_cast<std::size_t>(i)]);
    out.labels.push_back(labels[static_cast<std::size_t>(i)]);
  }
  return out;
}

namespace {

std::vector<std::uint8_t> read_maybe_gzip(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw IdxError("cannot open " + path.string(), 0);
  gzFile f = gzopen(path.c_str(), "rb");
  if (!f) throw IdxError("cannot open " + path.string(), 0);
  std::vector<std::uint8_t> out;
  std::uint8_t buf[1 << 16];
  int n = 0;
  while ((n = gzread(f, buf, sizeof(buf))) > 0) out.insert(out.end(), buf, buf + n);
  const bool failed = n < 0;
  gzclose(f);
  if (failed) throw IdxError("decompression failed for " + path.string(), out.size());
  return out;
}

std::uint32_t read_be32(std::span<const std::uint8_t> buf, std::size_t offset, const char* what) {
  if (offset + 4 > buf.size()) throw IdxError(std::string("truncated ") + what + " header", buf.size());
  return (std::uint32_t{buf[offset]} << 24) | (std::uint32_t{buf[offset + 1]} << 16) |
         (std::uint32_t{buf[offset + 2]} << 8) | std::uint32_t{buf[offset + 3]};
}

}  // namespace

ImageSet parse_idx(std::span<const std::uint8_t> images, std::span<const std::uint8_t> labels) {
  constexpr std::uint32_t kImagesMagic = 0x00000803;
  constexpr std::uint32_t kLabelsMagic = 0x00000801;

  if (read_be32(images, 0, "images") != kImagesMagic) throw IdxError("bad images magic", 0);
  const std::uint32_t count = read_be32(images, 4, "images");
  const std::uint32_t rows = read_be32(images, 8, "images");
  const std::uint32_t cols = read_be32(images, 12, "images");
  const std::size_t need = 16 + std::size_t{count} * rows * cols;
  if (images.size() < need) throw IdxError("truncated images payload", images.size());

  if (read_be32(labels, 0, "labels") != kLabelsMagic) throw IdxError("bad labels magic", 0);
  const std::uint32_t label_count = read_be32(labels, 4, "labels");
  if (labels.size() < 8 + std::size_t{label_count}) throw IdxError("truncated labels payload", labels.size());
  if (label_count != count)
    throw IdxError("image/label count mismatch: " + std::to_string(count) + " images, " +
                       std::to_string(label_count) + " labels",
                   4);

  ImageSet set;
  set.count = count;
  set.rows = rows;
  set.cols = cols;
  set.pixels.assign(images.begin() + 16, images.begin() + static_cast<std::ptrdiff_t>(need));
  set.labels.assign(labels.begin() + 8, labels.begin() + 8 + label_count);
  for (std::size_t i = 0; i < set.labels.size(); ++i)
    if (set.labels[i] > 9) throw IdxError("label out of range", 8 + i);
  return set;
}

ImageSet load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path) {
  const auto images = read_maybe_gzip(images_path);
  const auto labels = read_maybe_gzip(labels_path);
  return parse_idx(images, labels);
}

namespace {

std::vector<double> pooled_unit_pixels(const ImageSet& images, Index i, Index factor) {
  if (factor < 1 || images.rows % factor != 0 || images.cols % factor != 0)
    throw DimensionError("make_sequences: downsample factor must divide the image size");
  const Index out_rows = images.rows / factor;
  const Index out_cols = images.cols / factor;
  const auto img = images.image(i);
  std::vector<double> out(static_cast<std::size_t>(out_rows * out_cols), 0.0);
  const double norm = 1.0 / (255.0 * static_cast<double>(factor * factor));
  for (Index r = 0; r < images.rows; ++r)
    for (Index c = 0; c < images.cols; ++c)
      out[static_cast<std::size_t>((r / factor) * out_cols + c / factor)] +=
          img[static_cast<std::size_t>(r * images.cols + c)];
  for (double& v : out) v *= norm;
  return out;
}

}  // namespace

ScaleStats compute_scale_stats(const ImageSet& images, Index downsample) {
  double sum = 0.0;
  double sq = 0.0;
  std::size_t n = 0;
  for (Index i = 0; i < images.count; ++i) {
    for (double v : pooled_unit_pixels(images, i, downsample)) {
      sum += v;
      sq += v * v;
      ++n;
    }
  }
  ScaleStats st;
  if (n == 0) return st;
  st.mean = sum / static_cast<double>(n);
  st.stddev = std::sqrt(std::max(1e-12, sq / static_cast<double>(n) - st.mean * st.mean));
  return st;
}

LabeledSequences make_sequences(const ImageSet& images, const std::vector<Index>* permutation,
                                ScaleMode scale, Index downsample, const ScaleStats& stats) {
  const Index steps = (images.rows / std::max<Index>(downsample, 1)) * (images.cols / std::max<Index>(downsample, 1));
  if (permutation && static_cast<Index>(permutation->size()) != steps)
    throw DimensionError("make_sequences: permutation length " + std::to_string(permutation->size()) +
                         " does not match " + std::to_string(steps) + " pixels");
  LabeledSequences out;
  out.batch.sequences.reserve(static_cast<std::size_t>(images.count));
  out.labels.reserve(static_cast<std::size_t>(images.count));
  for (Index i = 0; i < images.count; ++i) {
    const auto px = pooled_unit_pixels(images, i, downsample);
    Matrix seq(steps, 1);
    for (Index t = 0; t < steps; ++t) {
      const Index src = permutation ? (*permutation)[static_cast<std::size_t>(t)] : t;
      double v = px[static_cast<std::size_t>(src)];
      if (scale == ScaleMode::Centered) v = (v - stats.mean) / stats.stddev;
      seq(t, 0) = v;
    }
    out.batch.sequences.push_back(std::move(seq));
    out.labels.push_back(images.labels[static_cast<std::size_t>(i)]);
  }
  return out;
}

std::vector<Index> fixed_permutation(Index n, std::uint64_t seed) {
  if (n < 1) throw std::invalid_argument("fixed_permutation: n must be >= 1");
  std::vector<Index> perm(static_cast<std::size_t>(n));
  std::iota(perm.begin(), perm.end(), Index{0});
  SplitMix64 g(seed);
  for (Index i = n - 1; i > 0; --i) {
    const auto j = static_cast<Index>(g.below(static_cast<std::uint64_t>(i + 1)));
    std::swap(perm[static_cast<std::size_t>(i)], perm[static_cast<std::size_t>(j)]);
  }
  return perm;
}

std::pair<std::vector<Index>, std::vector<Index>> split_indices(std::span<const int> labels, Index val_count,
                                                               std::uint64_t seed) {
  const auto n = static_cast<Index>(labels.size());
  if (val_count < 0 || val_count >= n)
    throw std::invalid_argument("split: val_count must be < dataset size (" + std::to_string(n) + ")");

  std::map<int, std::vector<Index>> by_class;
  for (Index i = 0; i < n; ++i) by_class[labels[static_cast<std::size_t>(i)]].push_back(i);

  // Largest-remainder allocation of the validation quota per class.
  struct Quota {
    int label;
    Index take;
    double remainder;
  };
  std::vector<Quota> quotas;
  Index assigned = 0;
  for (const auto& [label, idx] : by_class) {
    const double exact = static_cast<double>(val_count) * static_cast<double>(idx.size()) / static_cast<double>(n);
    const auto take = static_cast<Index>(std::floor(exact));
    quotas.push_back({label, take, exact - static_cast<double>(take)});
    assigned += take;
  }
  std::vector<std::size_t> order(quotas.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return quotas[a].remainder > quotas[b].remainder; });
  for (std::size_t k = 0; assigned < val_count; k = (k + 1) % order.size()) {
    auto& q = quotas[order[k]];
    if (q.take < static_cast<Index>(by_class[q.label].size())) {
      ++q.take;
      ++assigned;
    }
  }

  std::vector<bool> in_val(static_cast<std::size_t>(n), false);
  for (const auto& q : quotas) {
    auto idx = by_class[q.label];
    SplitMix64 g(hash_keys(seed, static_cast<std::uint64_t>(q.label)));
    for (Index i = static_cast<Index>(idx.size()) - 1; i > 0; --i)
      std::swap(idx[static_cast<std::size_t>(i)], idx[g.below(static_cast<std::uint64_t>(i + 1))]);
    for (Index k = 0; k < q.take; ++k) in_val[static_cast<std::size_t>(idx[static_cast<std::size_t>(k)])] = true;
  }
  std::vector<Index> train_idx;
  std::vector<Index> val_idx;
  for (Index i = 0; i < n; ++i) (in_val[static_cast<std::size_t>(i)] ? val_idx : train_idx).push_back(i);
  return {std::move(train_idx), std::move(val_idx)};
}

std::pair<LabeledSequences, LabeledSequences> split(const LabeledSequences& data, Index val_count,
                                                    std::uint64_t seed) {
  if (static_cast<Index>(data.labels.size()) != data.size())
    throw DimensionError("split: label count differs from sequence count");
  const auto [train_idx, val_idx] = split_indices(data.labels, val_count, seed);
  return {data.subset(train_idx), data.subset(val_idx)};
}

ImageSet subset_images(const ImageSet& images, std::span<const Index> indices) {
  ImageSet out;
  out.rows = images.rows;
  out.cols = images.cols;
  out.count = static_cast<Index>(indices.size());
  const auto px = static_cast<std::size_t>(images.rows * images.cols);
  out.pixels.reserve(indices.size() * px);
  out.labels.reserve(indices.size());
  for (Index i : indices) {
    if (i < 0 || i >= images.count) throw std::out_of_range("subset_images: index out of range");
    const auto img = images.image(i);
    out.pixels.insert(out.pixels.end(), img.begin(), img.end());
    out.labels.push_back(images.labels[static_cast<std::size_t>(i)]);
  }
  return out;
}

LabeledSequences synthetic_copy_task(Index n, Index t, Index d, std::uint64_t seed) {
  SplitMix64 g(seed);
  LabeledSequences out;
  for (Index i = 0; i < n; ++i) {
    Matrix seq(t, d);
    for (Index r = 0; r < t; ++r)
      for (Index c = 0; c < d; ++c) seq(r, c) = g.normal();
    out.labels.push_back(seq(0, 0) >= 0.0 ? 1 : 0);
    out.batch.sequences.push_back(std::move(seq));
  }
  return out;
}

}  // namespace seqmem
