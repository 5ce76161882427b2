#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "gmflab/matrix.hpp"

namespace gmflab {

/// Binary container of named float64 matrices, all integers little-endian:
///
///   magic    8 bytes  "GMFCKPT\0"
///   version  u8       kCheckpointVersion
///   count    u32
///   count records of:
///     name_len u32, name bytes (UTF-8, no terminator),
///     rows u64, cols u64, rows*cols IEEE-754 float64 values row-major
struct NamedMatrix {
  std::string name;
  Matrix value;
};

inline constexpr std::uint8_t kCheckpointVersion = 1;

std::string encode_checkpoint(std::span<const NamedMatrix> entries);
/// Throws FormatError on bad magic, unknown version, truncation or trailing bytes.
std::vector<NamedMatrix> decode_checkpoint(std::string_view bytes);

void save_checkpoint(const std::filesystem::path& path, std::span<const NamedMatrix> entries);
std::vector<NamedMatrix> load_checkpoint(const std::filesystem::path& path);

/// Finds an entry by name; throws FormatError if missing.
const Matrix& find_entry(std::span<const NamedMatrix> entries, std::string_view name);

}  // namespace gmflab
