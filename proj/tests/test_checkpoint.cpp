#include "seqmem/checkpoint.hpp"

#include "test_util.hpp"

#include <gtest/gtest.h>
#include <zlib.h>

#include <cstring>
#include <filesystem>

using namespace seqmem;
using testutil::gaussian;

namespace {

constexpr ModelKind kKinds[] = {ModelKind::LinearRnn, ModelKind::Rnn, ModelKind::Lmn, ModelKind::Lstm};

std::uint32_t le32(const std::vector<std::uint8_t>& b, std::size_t at) {
  std::uint32_t v = 0;
  for (int i = 3; i >= 0; --i) v = (v << 8) | b[at + std::size_t(i)];
  return v;
}

}  // namespace

TEST(Checkpoint, ByteLayout) {
  Checkpoint ck{{"w", (Matrix(1, 2) << 1.0, -2.0).finished()}};
  const auto bytes = encode_checkpoint(ck);
  ASSERT_EQ(bytes.size(), 8u + 4 + 4 + 2 + 1 + 8 + 8 + 16 + 4);
  EXPECT_EQ(std::memcmp(bytes.data(), "LAESCKPT", 8), 0);
  EXPECT_EQ(le32(bytes, 8), kCheckpointVersion);
  EXPECT_EQ(le32(bytes, 12), 1u);
  EXPECT_EQ(bytes[16], 1);
  EXPECT_EQ(bytes[17], 0);
  EXPECT_EQ(bytes[18], 'w');
  EXPECT_EQ(bytes[19], 1);   // rows
  EXPECT_EQ(bytes[27], 2);   // cols
  double first = 0.0;
  std::memcpy(&first, bytes.data() + 35, 8);
  EXPECT_EQ(first, 1.0);
  const auto crc = static_cast<std::uint32_t>(crc32(0L, bytes.data(), static_cast<uInt>(bytes.size() - 4)));
  EXPECT_EQ(le32(bytes, bytes.size() - 4), crc);
}

TEST(Checkpoint, RoundTripEveryKind) {
  for (ModelKind kind : kKinds) {
    const Params p = testutil::random_params(kind, 5, 3, 4, 7);
    Checkpoint ck;
    append_params(ck, p);
    const Checkpoint back = decode_checkpoint(encode_checkpoint(ck));
    ASSERT_EQ(stored_model_kind(back), kind);
    EXPECT_EQ(testutil::max_abs_diff(params_from_checkpoint(back, kind), p), 0.0);
  }
}

TEST(Checkpoint, LaesAndHeadsRoundTrip) {
  Checkpoint ck;
  const LaesModel laes{gaussian(4, 2, 1), gaussian(4, 4, 2), gaussian(2, 1, 3)};
  append_laes(ck, laes);
  append_linear_head(ck, LinearClassifier{gaussian(3, 4, 4), gaussian(3, 1, 5)});
  append_ff_head(ck, FeedForwardHead{gaussian(6, 4, 6), gaussian(6, 1, 7), gaussian(3, 6, 8), gaussian(3, 1, 9)});
  const std::filesystem::path path = std::filesystem::temp_directory_path() / "seqmem_ckpt_roundtrip.ckpt";
  write_checkpoint(path, ck);
  const Checkpoint back = read_checkpoint(path);
  const auto l = laes_from_checkpoint(back);
  ASSERT_TRUE(l);
  EXPECT_TRUE(l->a == laes.a && l->b == laes.b && l->mean == laes.mean);
  const auto h = linear_head_from_checkpoint(back);
  ASSERT_TRUE(h);
  EXPECT_EQ(h->w.rows(), 3);
  const auto f = ff_head_from_checkpoint(back);
  ASSERT_TRUE(f);
  EXPECT_EQ(f->hidden(), 6);
  EXPECT_FALSE(stored_model_kind(back));
}

TEST(Checkpoint, DeterministicBytes) {
  const Params p = testutil::random_params(ModelKind::Lmn, 4, 1, 2, 3);
  Checkpoint a, b;
  append_params(a, p);
  append_params(b, p);
  EXPECT_EQ(encode_checkpoint(a), encode_checkpoint(b));
}

TEST(Checkpoint, CorruptionDetected) {
  Checkpoint ck{{"x", gaussian(3, 3, 1)}};
  auto bytes = encode_checkpoint(ck);
  auto flipped = bytes;
  flipped[40] ^= 0x10;
  EXPECT_THROW(decode_checkpoint(flipped), CheckpointError);
  auto magic = bytes;
  magic[0] = 'X';
  EXPECT_THROW(decode_checkpoint(magic), CheckpointError);
  bytes.resize(bytes.size() - 9);
  EXPECT_THROW(decode_checkpoint(bytes), CheckpointError);
}

TEST(Checkpoint, MissingMatrixNamed) {
  Checkpoint ck;
  append_params(ck, testutil::random_params(ModelKind::Rnn, 3, 1, 2, 1));
  ck.erase(ck.begin() + 1);  // rnn.u
  try {
    params_from_checkpoint(ck, ModelKind::Rnn);
    FAIL() << "expected CheckpointError";
  } catch (const CheckpointError& e) {
    EXPECT_NE(std::string(e.what()).find("rnn.u"), std::string::npos) << e.what();
  }
}

TEST(Checkpoint, MisshapenMatrixRejected) {
  Checkpoint ck;
  append_params(ck, testutil::random_params(ModelKind::Lmn, 3, 1, 2, 1));
  for (auto& e : ck)
    if (e.name == "lmn.w_mm") e.value = Matrix::Zero(2, 2);
  EXPECT_THROW(params_from_checkpoint(ck, ModelKind::Lmn), CheckpointError);
}

TEST(Checkpoint, MissingFile) { EXPECT_THROW(read_checkpoint("/nonexistent/model.ckpt"), CheckpointError); }
