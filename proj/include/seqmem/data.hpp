#pragma once

#include "seqmem/numerics.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace seqmem {

/// Ragged batch of vector sequences. Each entry is T_i x d (one row per timestep).
struct SequenceBatch {
  std::vector<Matrix> sequences;

  Index size() const { return static_cast<Index>(sequences.size()); }
  bool empty() const { return sequences.empty(); }
  /// Shared feature dimension; throws DimensionError when sequences disagree.
  Index dim() const;
  Index max_length() const;
};

struct LabeledSequences {
  SequenceBatch batch;
  std::vector<int> labels;

  Index size() const { return batch.size(); }
  LabeledSequences subset(std::span<const Index> indices) const;
};

/// IDX parse failure. `offset()` is the byte position where parsing stopped.
class IdxError : public std::runtime_error {
public:
  IdxError(const std::string& what, std::size_t offset)
      : std::runtime_error(what + " (at byte offset " + std::to_string(offset) + ")"), offset_(offset) {}
  std::size_t offset() const { return offset_; }

private:
  std::size_t offset_;
};

struct ImageSet {
  Index count = 0;
  Index rows = 0;
  Index cols = 0;
  std::vector<std::uint8_t> pixels;  // count * rows * cols, row-major per image
  std::vector<std::uint8_t> labels;

  std::span<const std::uint8_t> image(Index i) const {
    return {pixels.data() + i * rows * cols, static_cast<std::size_t>(rows * cols)};
  }
};

/// Reads an images/labels IDX pair (plain or gzip-compressed).
ImageSet load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path);

/// Parses in-memory IDX buffers. Exposed for tests.
ImageSet parse_idx(std::span<const std::uint8_t> images, std::span<const std::uint8_t> labels);

enum class ScaleMode { Unit, Centered };

struct ScaleStats {
  double mean = 0.0;
  double stddev = 1.0;
};

ImageSet subset_images(const ImageSet& images, std::span<const Index> indices);

/// Pixel statistics of the (pooled) unit-scaled images, for centered scaling.
ScaleStats compute_scale_stats(const ImageSet& images, Index downsample);

/// Row-major pixel scan of each image into a d=1 sequence. `downsample` > 1
/// mean-pools non-overlapping factor x factor blocks first. When given,
/// `permutation[i]` is the source pixel of step i.
LabeledSequences make_sequences(const ImageSet& images, const std::vector<Index>* permutation,
                                ScaleMode scale, Index downsample,
                                const ScaleStats& stats = {});

/// Fisher-Yates shuffle of 0..n-1 driven by SplitMix64(seed).
std::vector<Index> fixed_permutation(Index n, std::uint64_t seed);

/// Seeded stratified split of sample indices into (train, validation).
/// Each class contributes its share of `val_count` (largest remainder); both
/// index lists are ascending.
std::pair<std::vector<Index>, std::vector<Index>> split_indices(std::span<const int> labels, Index val_count,
                                                               std::uint64_t seed);

/// Seeded stratified split. Both halves keep the source order.
std::pair<LabeledSequences, LabeledSequences> split(const LabeledSequences& data, Index val_count,
                                                    std::uint64_t seed);

/// n Gaussian sequences of length t and dimension d; label = (x^1[0] >= 0).
LabeledSequences synthetic_copy_task(Index n, Index t, Index d, std::uint64_t seed);

}  // namespace seqmem
