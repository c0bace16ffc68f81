#pragma once

// Binary checkpoint container:
//   "LAESCKPT" | version u32 | entry count u32 |
//   per entry: name length u16, name bytes, rows u64, cols u64, rows*cols f64 (row-major) |
//   CRC32 (u32) of every preceding byte.
// All integers and floats are little-endian.

#include "seqmem/heads.hpp"
#include "seqmem/laes.hpp"
#include "seqmem/models.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace seqmem {

inline constexpr std::uint32_t kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

struct NamedMatrix {
  std::string name;
  Matrix value;
};

using Checkpoint = std::vector<NamedMatrix>;

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& entries);
Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes);
void write_checkpoint(const std::filesystem::path& path, const Checkpoint& entries);
Checkpoint read_checkpoint(const std::filesystem::path& path);

const Matrix* find_entry(const Checkpoint& ckpt, std::string_view name);

/// Entry-name prefix per model kind ("linear_rnn", "rnn", "lmn", "lstm").
std::string_view checkpoint_prefix(ModelKind kind);

void append_params(Checkpoint& ckpt, const Params& params);
/// The recurrent model stored in `ckpt`, if any (first matching prefix in kind order).
std::optional<ModelKind> stored_model_kind(const Checkpoint& ckpt);
/// Throws CheckpointError naming the first missing or misshapen matrix.
Params params_from_checkpoint(const Checkpoint& ckpt, ModelKind kind);

void append_laes(Checkpoint& ckpt, const LaesModel& laes);
std::optional<LaesModel> laes_from_checkpoint(const Checkpoint& ckpt);

void append_linear_head(Checkpoint& ckpt, const LinearClassifier& head);
std::optional<LinearClassifier> linear_head_from_checkpoint(const Checkpoint& ckpt);

void append_ff_head(Checkpoint& ckpt, const FeedForwardHead& head);
std::optional<FeedForwardHead> ff_head_from_checkpoint(const Checkpoint& ckpt);

}  // namespace seqmem
