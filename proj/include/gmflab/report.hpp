#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <variant>
#include <vector>

namespace gmflab {

using Cell = std::variant<std::string, std::int64_t, double>;

/// A column-named table. Every row must have one cell per column.
struct Table {
  std::vector<std::string> columns;
  std::vector<std::vector<Cell>> rows;

  void add_row(std::vector<Cell> row);
  std::size_t column_index(const std::string& name) const;
  double number(std::size_t row, const std::string& column) const;
};

/// Structured result of one experiment: per-(cell, seed) rows, an aggregate
/// table, scalar metrics, the seeds used and the effective configuration.
struct ExperimentReport {
  std::string name;
  Table rows;
  Table summary;
  std::map<std::string, double> metrics;
  std::map<std::string, std::string> config;
  std::vector<std::uint64_t> seeds;
  /// Free-form metadata (timestamps, versions). Excluded from CSV output.
  std::map<std::string, std::string> meta;

  double metric(const std::string& key) const;
};

/// Shortest round-trip formatting is avoided on purpose: doubles always use
/// 17 significant digits so files are byte-stable across platforms.
std::string format_double(double v);

/// RFC-4180 CSV: header row, comma separator, CRLF-free "\n" line ends,
/// quoting only where needed.
std::string to_csv(const Table& table);

/// UTF-8 JSON with lexicographically sorted keys.
std::string to_json(const ExperimentReport& report);

/// Writes through a temporary sibling file and renames it into place.
void write_file_atomic(const std::filesystem::path& path, const std::string& content);

/// Writes <dir>/<name>.csv, <dir>/<name>_summary.csv (if non-empty) and
/// <dir>/<name>.json. On failure every file written so far is removed before
/// the exception propagates. Returns the written paths.
std::vector<std::filesystem::path> write_report(const ExperimentReport& report, const std::filesystem::path& dir);

}  // namespace gmflab
