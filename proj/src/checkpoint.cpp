#include "seqmem/checkpoint.hpp"

#include <zlib.h>

#include <cstring>
#include <fstream>
#include <iterator>

namespace seqmem {

namespace {

constexpr char kMagic[8] = {'L', 'A', 'E', 'S', 'C', 'K', 'P', 'T'};

template <class T>
void put_le(std::vector<std::uint8_t>& out, T v) {
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_double(std::vector<std::uint8_t>& out, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, sizeof bits);
  put_le(out, bits);
}

class Reader {
public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  template <class T>
  T get() {
    need(sizeof(T));
    T v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(static_cast<T>(bytes_[pos_ + i]) << (8 * i));
    pos_ += sizeof(T);
    return v;
  }

  double get_double() {
    const auto bits = get<std::uint64_t>();
    double v;
    std::memcpy(&v, &bits, sizeof v);
    return v;
  }

  std::string get_string(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }

  std::size_t pos() const { return pos_; }

private:
  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size())
      throw CheckpointError("checkpoint truncated at byte " + std::to_string(pos_));
  }

  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

std::uint32_t crc_of(std::span<const std::uint8_t> bytes) {
  uLong crc = crc32(0L, Z_NULL, 0);
  std::size_t off = 0;
  while (off < bytes.size()) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(bytes.size() - off, 1u << 30));
    crc = crc32(crc, bytes.data() + off, chunk);
    off += chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

std::string entry_name(ModelKind kind, std::string_view param) {
  return std::string(checkpoint_prefix(kind)) + "." + std::string(param);
}

void require_shape_eq(const Matrix& m, Index rows, Index cols, const std::string& name) {
  if (m.rows() != rows || m.cols() != cols)
    throw CheckpointError("checkpoint entry '" + name + "' has shape " + std::to_string(m.rows()) + "x" +
                          std::to_string(m.cols()) + ", expected " + std::to_string(rows) + "x" + std::to_string(cols));
}

void validate(const Params& params) {
  const Index p = state_size(params);
  struct {
    Index p;
    void operator()(const LinearRnnParams& w) const {
      require_shape_eq(w.a, p, w.a.cols(), "a");
      require_shape_eq(w.b, p, p, "b");
    }
    void operator()(const RnnParams& w) const {
      require_shape_eq(w.v, p, w.v.cols(), "v");
      require_shape_eq(w.u, p, p, "u");
    }
    void operator()(const LmnParams& w) const {
      const Index h = w.w_xh.rows();
      require_shape_eq(w.w_mh, h, p, "w_mh");
      require_shape_eq(w.w_hm, p, h, "w_hm");
      require_shape_eq(w.w_mm, p, p, "w_mm");
    }
    void operator()(const LstmParams& w) const {
      const Index z = w.gate_i.cols();
      for (const Matrix* g : {&w.gate_i, &w.gate_f, &w.gate_g, &w.gate_o}) require_shape_eq(*g, p, z, "gate");
      for (const Matrix* b : {&w.bias_i, &w.bias_f, &w.bias_g, &w.bias_o}) require_shape_eq(*b, p, 1, "bias");
      if (z <= p) throw CheckpointError("checkpoint LSTM gates have no input columns");
    }
  } v{p};
  std::visit(v, params);
}

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& entries) {
  std::vector<std::uint8_t> out(std::begin(kMagic), std::end(kMagic));
  put_le<std::uint32_t>(out, kCheckpointVersion);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(entries.size()));
  for (const auto& e : entries) {
    if (e.name.size() > 0xffff) throw CheckpointError("checkpoint entry name too long");
    put_le<std::uint16_t>(out, static_cast<std::uint16_t>(e.name.size()));
    out.insert(out.end(), e.name.begin(), e.name.end());
    put_le<std::uint64_t>(out, static_cast<std::uint64_t>(e.value.rows()));
    put_le<std::uint64_t>(out, static_cast<std::uint64_t>(e.value.cols()));
    for (Index r = 0; r < e.value.rows(); ++r)
      for (Index c = 0; c < e.value.cols(); ++c) put_double(out, e.value(r, c));
  }
  put_le<std::uint32_t>(out, crc_of(out));
  return out;
}

Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < sizeof kMagic + 12) throw CheckpointError("checkpoint too short");
  if (std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0) throw CheckpointError("not a checkpoint (bad magic)");
  const auto body = bytes.first(bytes.size() - 4);
  Reader tail(bytes.last(4));
  const auto stored = tail.get<std::uint32_t>();
  if (stored != crc_of(body)) throw CheckpointError("checkpoint CRC mismatch");

  Reader in(body);
  in.get_string(sizeof kMagic);
  const auto version = in.get<std::uint32_t>();
  if (version != kCheckpointVersion) throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
  const auto count = in.get<std::uint32_t>();
  Checkpoint out;
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedMatrix e;
    e.name = in.get_string(in.get<std::uint16_t>());
    const auto rows = in.get<std::uint64_t>();
    const auto cols = in.get<std::uint64_t>();
    if (cols != 0 && rows > (body.size() - in.pos()) / 8 / cols)
      throw CheckpointError("checkpoint entry '" + e.name + "' larger than the file");
    e.value.resize(static_cast<Index>(rows), static_cast<Index>(cols));
    for (Index r = 0; r < e.value.rows(); ++r)
      for (Index c = 0; c < e.value.cols(); ++c) e.value(r, c) = in.get_double();
    out.push_back(std::move(e));
  }
  if (in.pos() != body.size()) throw CheckpointError("trailing bytes after the last checkpoint entry");
  return out;
}

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& entries) {
  const auto bytes = encode_checkpoint(entries);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw CheckpointError("cannot write " + path.string());
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

const Matrix* find_entry(const Checkpoint& ckpt, std::string_view name) {
  for (const auto& e : ckpt)
    if (e.name == name) return &e.value;
  return nullptr;
}

std::string_view checkpoint_prefix(ModelKind kind) {
  switch (kind) {
    case ModelKind::LinearRnn: return "linear_rnn";
    case ModelKind::Rnn: return "rnn";
    case ModelKind::Lmn: return "lmn";
    case ModelKind::Lstm: return "lstm";
  }
  return "";
}

void append_params(Checkpoint& ckpt, const Params& params) {
  const ModelKind kind = kind_of(params);
  std::visit([&](const auto& q) {
    for_each_param(q, [&](std::string_view name, const Matrix& m) { ckpt.push_back({entry_name(kind, name), m}); });
  }, params);
}

std::optional<ModelKind> stored_model_kind(const Checkpoint& ckpt) {
  for (ModelKind k : {ModelKind::LinearRnn, ModelKind::Rnn, ModelKind::Lmn, ModelKind::Lstm})
    if (find_entry(ckpt, entry_name(k, "w_o"))) return k;
  return std::nullopt;
}

Params params_from_checkpoint(const Checkpoint& ckpt, ModelKind kind) {
  Params params;
  switch (kind) {
    case ModelKind::LinearRnn: params = LinearRnnParams{}; break;
    case ModelKind::Rnn: params = RnnParams{}; break;
    case ModelKind::Lmn: params = LmnParams{}; break;
    case ModelKind::Lstm: params = LstmParams{}; break;
  }
  std::visit([&](auto& q) {
    for_each_param(q, [&](std::string_view name, Matrix& m) {
      const std::string full = entry_name(kind, name);
      const Matrix* e = find_entry(ckpt, full);
      if (!e) throw CheckpointError("checkpoint lacks matrix '" + full + "'");
      m = *e;
    });
  }, params);
  validate(params);
  return params;
}

void append_laes(Checkpoint& ckpt, const LaesModel& laes) {
  ckpt.push_back({"laes.a", laes.a});
  ckpt.push_back({"laes.b", laes.b});
  ckpt.push_back({"laes.mean", Matrix(laes.mean)});
}

std::optional<LaesModel> laes_from_checkpoint(const Checkpoint& ckpt) {
  const Matrix* a = find_entry(ckpt, "laes.a");
  if (!a) return std::nullopt;
  const Matrix* b = find_entry(ckpt, "laes.b");
  const Matrix* mean = find_entry(ckpt, "laes.mean");
  if (!b || !mean) throw CheckpointError("checkpoint has an incomplete LAES (need laes.a, laes.b, laes.mean)");
  require_shape_eq(*b, a->rows(), a->rows(), "laes.b");
  require_shape_eq(*mean, a->cols(), 1, "laes.mean");
  return LaesModel{*a, *b, mean->col(0)};
}

void append_linear_head(Checkpoint& ckpt, const LinearClassifier& head) {
  ckpt.push_back({"head.w", head.w});
  ckpt.push_back({"head.b", Matrix(head.b)});
}

std::optional<LinearClassifier> linear_head_from_checkpoint(const Checkpoint& ckpt) {
  const Matrix* w = find_entry(ckpt, "head.w");
  if (!w) return std::nullopt;
  const Matrix* b = find_entry(ckpt, "head.b");
  if (!b) throw CheckpointError("checkpoint lacks matrix 'head.b'");
  require_shape_eq(*b, w->rows(), 1, "head.b");
  return LinearClassifier{*w, b->col(0)};
}

void append_ff_head(Checkpoint& ckpt, const FeedForwardHead& head) {
  ckpt.push_back({"ff.w1", head.w1});
  ckpt.push_back({"ff.b1", head.b1});
  ckpt.push_back({"ff.w2", head.w2});
  ckpt.push_back({"ff.b2", head.b2});
}

std::optional<FeedForwardHead> ff_head_from_checkpoint(const Checkpoint& ckpt) {
  const Matrix* w2 = find_entry(ckpt, "ff.w2");
  if (!w2) return std::nullopt;
  FeedForwardHead head;
  for (auto [name, dst] : {std::pair{"ff.w1", &head.w1}, std::pair{"ff.b1", &head.b1}, std::pair{"ff.w2", &head.w2},
                           std::pair{"ff.b2", &head.b2}}) {
    const Matrix* e = find_entry(ckpt, name);
    if (!e) throw CheckpointError(std::string("checkpoint lacks matrix '") + name + "'");
    *dst = *e;
  }
  require_shape_eq(head.b1, head.w1.rows(), 1, "ff.b1");
  require_shape_eq(head.b2, head.w2.rows(), 1, "ff.b2");
  if (head.hidden() > 0) require_shape_eq(head.w2, head.w2.rows(), head.w1.rows(), "ff.w2");
  return head;
}

}  // namespace seqmem
