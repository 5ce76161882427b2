#include "gmflab/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include <fmt/format.h>

#include "gmflab/errors.hpp"

namespace gmflab {

namespace {

constexpr std::string_view kMagic{"GMFCKPT\0", 8};

template <typename T>
void put_le(std::string& out, T value) {
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    out.push_back(static_cast<char>(static_cast<unsigned char>(value >> (8 * i))));
  }
}

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  template <typename T>
  T get_le() {
    need(sizeof(T));
    T value = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) {
      value |= static_cast<T>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    }
    pos_ += sizeof(T);
    return value;
  }

  std::string_view take(std::size_t n) {
    need(n);
    auto out = bytes_.substr(pos_, n);
    pos_ += n;
    return out;
  }

  bool done() const { return pos_ == bytes_.size(); }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw FormatError("checkpoint: truncated data");
  }

  std::string_view bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string encode_checkpoint(std::span<const NamedMatrix> entries) {
  std::string out(kMagic);
  out.push_back(static_cast<char>(kCheckpointVersion));
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(entries.size()));
  for (const auto& e : entries) {
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(e.name.size()));
    out += e.name;
    put_le<std::uint64_t>(out, e.value.rows());
    put_le<std::uint64_t>(out, e.value.cols());
    for (double v : e.value.data()) put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
  }
  return out;
}

std::vector<NamedMatrix> decode_checkpoint(std::string_view bytes) {
  Reader in(bytes);
  if (in.remaining() < kMagic.size() || in.take(kMagic.size()) != kMagic) {
    throw FormatError("checkpoint: bad magic");
  }
  const auto version = in.get_le<std::uint8_t>();
  if (version != kCheckpointVersion) {
    throw FormatError(fmt::format("checkpoint: unsupported version {}", version));
  }
  const auto count = in.get_le<std::uint32_t>();
  std::vector<NamedMatrix> out;
  for (std::uint32_t k = 0; k < count; ++k) {
    const auto name_len = in.get_le<std::uint32_t>();
    std::string name(in.take(name_len));
    const auto rows = in.get_le<std::uint64_t>();
    const auto cols = in.get_le<std::uint64_t>();
    if (cols != 0 && rows > in.remaining() / 8 / cols) throw FormatError("checkpoint: truncated data");
    std::vector<double> data(rows * cols);
    for (double& v : data) v = std::bit_cast<double>(in.get_le<std::uint64_t>());
    out.push_back({std::move(name), Matrix(rows, cols, std::move(data))});
  }
  if (!in.done()) throw FormatError("checkpoint: trailing bytes after last record");
  return out;
}

void save_checkpoint(const std::filesystem::path& path, std::span<const NamedMatrix> entries) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error(fmt::format("cannot write {}", path.string()));
  const std::string bytes = encode_checkpoint(entries);
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw std::runtime_error(fmt::format("short write to {}", path.string()));
}

std::vector<NamedMatrix> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error(fmt::format("cannot read {}", path.string()));
  std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

const Matrix& find_entry(std::span<const NamedMatrix> entries, std::string_view name) {
  for (const auto& e : entries)
    if (e.name == name) return e.value;
  throw FormatError(fmt::format("checkpoint: missing entry '{}'", name));
}

}  // namespace gmflab
