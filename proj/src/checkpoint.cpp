#include "mein/checkpoint.hpp"

#include <array>
#include <cstring>
#include <fstream>
#include <iterator>
#include <vector>

namespace mein {

namespace {

constexpr std::array<char, 8> kMagic = {'M', 'E', 'I', 'N', 'C', 'K', 'P', 'T'};

class Writer {
 public:
  template <typename U>
  void uint(U v) {
    for (std::size_t i = 0; i < sizeof(U); ++i) bytes_.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
  }
  void raw(std::string_view s) { bytes_.insert(bytes_.end(), s.begin(), s.end()); }
  void f32(float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, sizeof bits);
    uint(bits);
  }
  const std::vector<char>& bytes() const { return bytes_; }

 private:
  std::vector<char> bytes_;
};

class Reader {
 public:
  Reader(const std::vector<char>& bytes, std::string path) : bytes_(bytes), path_(std::move(path)) {}

  template <typename U>
  U uint() {
    need(sizeof(U));
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) {
      v |= static_cast<U>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    }
    pos_ += sizeof(U);
    return v;
  }
  std::string raw(std::size_t n) {
    need(n);
    std::string s(bytes_.data() + pos_, n);
    pos_ += n;
    return s;
  }
  float f32() {
    const auto bits = uint<std::uint32_t>();
    float v;
    std::memcpy(&v, &bits, sizeof v);
    return v;
  }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) {
      throw CheckpointError(CheckpointErrorKind::kTruncated, path_ + ": checkpoint is truncated");
    }
  }
  const std::vector<char>& bytes_;
  std::string path_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string_view stage_name(StageTag tag) {
  switch (tag) {
    case StageTag::kExpert: return "expert";
    case StageTag::kImitators: return "imitators";
    case StageTag::kMixture: return "mixture";
  }
  return "unknown";
}

const Tensor* Checkpoint::find(std::string_view name) const {
  for (const auto& t : tensors)
    if (t.name == name) return &t.tensor;
  return nullptr;
}

void save_checkpoint(const std::filesystem::path& path, StageTag stage, const ParamList& params,
                     const std::string& config_text) {
  Writer w;
  w.raw({kMagic.data(), kMagic.size()});
  w.uint<std::uint32_t>(kCheckpointVersion);
  w.uint<std::uint32_t>(static_cast<std::uint32_t>(stage));
  w.uint<std::uint64_t>(config_text.size());
  w.raw(config_text);
  w.uint<std::uint32_t>(static_cast<std::uint32_t>(params.size()));
  std::uint64_t offset = 0;
  for (const auto& [name, t] : params) {
    w.uint<std::uint32_t>(static_cast<std::uint32_t>(name.size()));
    w.raw(name);
    w.uint<std::uint32_t>(static_cast<std::uint32_t>(t.rank()));
    for (auto d : t.shape()) w.uint<std::uint64_t>(d);
    w.uint<std::uint64_t>(offset);
    offset += t.size();
  }
  w.uint<std::uint64_t>(offset);
  for (const auto& p : params)
    for (float v : p.tensor.values()) w.f32(v);

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError(CheckpointErrorKind::kIo, "cannot write " + tmp.string());
    out.write(w.bytes().data(), static_cast<std::streamsize>(w.bytes().size()));
    if (!out) throw CheckpointError(CheckpointErrorKind::kIo, "write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError(CheckpointErrorKind::kIo, "cannot open checkpoint " + path.string());
  const std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const auto where = path.string();
  if (bytes.size() < kMagic.size() || !std::equal(kMagic.begin(), kMagic.end(), bytes.begin())) {
    throw CheckpointError(CheckpointErrorKind::kNotACheckpoint, where + ": not a checkpoint");
  }
  Reader r(bytes, where);
  r.raw(kMagic.size());
  const auto version = r.uint<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw CheckpointError(CheckpointErrorKind::kVersion,
                          where + ": unsupported checkpoint version " + std::to_string(version) +
                              " (expected " + std::to_string(kCheckpointVersion) + ")");
  }
  Checkpoint ck;
  const auto tag = r.uint<std::uint32_t>();
  if (tag < 1 || tag > 3) {
    throw CheckpointError(CheckpointErrorKind::kNotACheckpoint, where + ": unknown stage tag");
  }
  ck.stage = static_cast<StageTag>(tag);
  ck.config_text = r.raw(r.uint<std::uint64_t>());

  struct Entry {
    std::string name;
    Shape shape;
    std::uint64_t offset;
  };
  std::vector<Entry> entries(r.uint<std::uint32_t>());
  for (auto& e : entries) {
    e.name = r.raw(r.uint<std::uint32_t>());
    const auto rank = r.uint<std::uint32_t>();
    if (rank > 8) throw CheckpointError(CheckpointErrorKind::kShape, where + ": bad rank for " + e.name);
    for (std::uint32_t i = 0; i < rank; ++i) e.shape.push_back(r.uint<std::uint64_t>());
    e.offset = r.uint<std::uint64_t>();
  }
  const auto floats = r.uint<std::uint64_t>();
  if (r.remaining() < floats * 4) {
    throw CheckpointError(CheckpointErrorKind::kTruncated, where + ": checkpoint is truncated");
  }
  std::vector<float> data(floats);
  for (auto& v : data) v = r.f32();
  for (auto& e : entries) {
    std::uint64_t n = 1;
    for (auto d : e.shape) n *= d;
    if (e.offset > floats || n > floats - e.offset) {
      throw CheckpointError(CheckpointErrorKind::kTruncated, where + ": tensor " + e.name + " overruns data");
    }
    std::vector<float> values(data.begin() + static_cast<std::ptrdiff_t>(e.offset),
                              data.begin() + static_cast<std::ptrdiff_t>(e.offset + n));
    ck.tensors.push_back({e.name, Tensor::constant(e.shape, std::move(values))});
  }
  return ck;
}

Checkpoint load_checkpoint(const std::filesystem::path& path, StageTag expected) {
  auto ck = load_checkpoint(path);
  if (ck.stage != expected) {
    throw CheckpointError(CheckpointErrorKind::kStage,
                          path.string() + ": holds a '" + std::string(stage_name(ck.stage)) +
                              "' checkpoint but the '" + std::string(stage_name(expected)) +
                              "' stage is required");
  }
  return ck;
}

void restore(const Checkpoint& checkpoint, const ParamList& destination) {
  for (const auto& [name, dst] : destination) {
    const Tensor* src = checkpoint.find(name);
    if (src == nullptr) {
      throw CheckpointError(CheckpointErrorKind::kMissing, "checkpoint has no tensor '" + name + "'");
    }
    if (src->shape() != dst.shape()) {
      throw CheckpointError(CheckpointErrorKind::kShape,
                            "shape mismatch for '" + name + "': checkpoint " + shape_string(src->shape()) +
                                ", model " + shape_string(dst.shape()));
    }
    auto target = dst;
    std::copy(src->values().begin(), src->values().end(), target.mutable_values().begin());
  }
}

}  // namespace mein
