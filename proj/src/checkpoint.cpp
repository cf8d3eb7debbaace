#include "panodepth/checkpoint.hpp"

#include <bit>
#include <cstring>

#include "panodepth/image_io.hpp"

namespace panodepth {

namespace {

constexpr char kMagic[4] = {'O', 'D', 'C', 'K'};

template <typename U>
void put(std::string& out, U value) {
  for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<char>((value >> (8 * i)) & 0xFF));
}

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  template <typename U>
  U get(const char* what) {
    need(sizeof(U), what);
    U value = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) {
      value |= static_cast<U>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    }
    pos_ += sizeof(U);
    return value;
  }

  std::string_view take(std::size_t n, const char* what) {
    need(n, what);
    auto out = bytes_.substr(pos_, n);
    pos_ += n;
    return out;
  }

  std::size_t offset() const { return pos_; }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n, const char* what) {
    if (bytes_.size() - pos_ < n) throw ParseError(std::string("checkpoint truncated while reading ") + what, pos_);
  }
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string encode_checkpoint(const Model<float>& model, std::uint64_t step) {
  std::string out(kMagic, 4);
  put<std::uint32_t>(out, kCheckpointVersion);
  const std::string spec = model.spec().to_text();
  put<std::uint32_t>(out, static_cast<std::uint32_t>(spec.size()));
  out += spec;
  put<std::uint64_t>(out, step);
  const auto& params = model.parameters();
  put<std::uint32_t>(out, static_cast<std::uint32_t>(params.size()));
  for (const auto& p : params) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(p.name.size()));
    out += p.name;
    const Shape& s = p.tensor.shape();
    put<std::uint32_t>(out, 4);
    for (int d : {s.n, s.c, s.h, s.w}) put<std::uint32_t>(out, static_cast<std::uint32_t>(d));
    for (float v : p.tensor.values()) put<std::uint32_t>(out, std::bit_cast<std::uint32_t>(v));
  }
  return out;
}

Checkpoint decode_checkpoint(std::string_view bytes) {
  Reader in(bytes);
  if (in.take(4, "magic") != std::string_view(kMagic, 4)) throw ParseError("not a checkpoint (bad magic)", 0);
  const auto version_at = in.offset();
  const auto version = in.get<std::uint32_t>("version");
  if (version != kCheckpointVersion) {
    throw ParseError("unsupported checkpoint version " + std::to_string(version), version_at);
  }
  const auto spec_len = in.get<std::uint32_t>("spec length");
  const auto spec_at = in.offset();
  ModelSpec spec;
  try {
    spec = ModelSpec::from_text(in.take(spec_len, "spec"));
  } catch (const ConfigError& e) {
    throw ParseError(std::string("invalid embedded spec: ") + e.what(), spec_at);
  }
  Checkpoint ck{build_model<float>(spec), 0};
  ck.step = in.get<std::uint64_t>("step");
  auto& params = ck.model.parameters();
  const auto count_at = in.offset();
  const auto count = in.get<std::uint32_t>("tensor count");
  if (count != params.size()) {
    throw ParseError("checkpoint has " + std::to_string(count) + " tensors, spec needs " +
                         std::to_string(params.size()), count_at);
  }
  for (auto& p : params) {
    const auto name_at = in.offset();
    const auto name_len = in.get<std::uint32_t>("tensor name length");
    const auto name = in.take(name_len, "tensor name");
    if (name != p.name) {
      throw ParseError("expected tensor '" + p.name + "', found '" + std::string(name) + "'", name_at);
    }
    const auto rank_at = in.offset();
    const auto rank = in.get<std::uint32_t>("tensor rank");
    if (rank != 4) throw ParseError("tensor '" + p.name + "' has rank " + std::to_string(rank), rank_at);
    const Shape& s = p.tensor.shape();
    for (int d : {s.n, s.c, s.h, s.w}) {
      const auto dim_at = in.offset();
      const auto got = in.get<std::uint32_t>("tensor dims");
      if (got != static_cast<std::uint32_t>(d)) {
        throw ParseError("tensor '" + p.name + "' dims do not match the model spec (expected " + s.str() + ")", dim_at);
      }
    }
    for (float& v : p.tensor.mutable_values()) v = std::bit_cast<float>(in.get<std::uint32_t>("tensor payload"));
  }
  if (!in.done()) throw ParseError("trailing bytes after checkpoint", in.offset());
  return ck;
}

void save_checkpoint(const std::string& path, const Model<float>& model, std::uint64_t step) {
  write_file(path, encode_checkpoint(model, step));
}

Checkpoint load_checkpoint(const std::string& path) { return decode_checkpoint(read_file(path)); }

}  // namespace panodepth
