#include "gmflab/report.hpp"

#include <cmath>
#include <fstream>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "gmflab/errors.hpp"

namespace gmflab {

namespace {

std::string cell_text(const Cell& c) {
  if (const auto* s = std::get_if<std::string>(&c)) return *s;
  if (const auto* i = std::get_if<std::int64_t>(&c)) return std::to_string(*i);
  return format_double(std::get<double>(c));
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
  std::string out = "\"";
  for (char ch : s) {
    if (ch == '"') out += '"';
    out += ch;
  }
  out += '"';
  return out;
}

nlohmann::json number_json(double v) {
  // JSON has no NaN or infinity; keep them readable as strings.
  if (std::isfinite(v)) return v;
  return format_double(v);
}

nlohmann::json cell_json(const Cell& c) {
  if (const auto* s = std::get_if<std::string>(&c)) return *s;
  if (const auto* i = std::get_if<std::int64_t>(&c)) return *i;
  return number_json(std::get<double>(c));
}

nlohmann::json table_json(const Table& t) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& r : t.rows) {
    nlohmann::json obj = nlohmann::json::object();
    for (std::size_t i = 0; i < r.size(); ++i) obj[t.columns[i]] = cell_json(r[i]);
    rows.push_back(std::move(obj));
  }
  return rows;
}

}  // namespace

void Table::add_row(std::vector<Cell> row) {
  if (row.size() != columns.size())
    throw ShapeError(fmt::format("table row has {} cells, expected {}", row.size(), columns.size()));
  rows.push_back(std::move(row));
}

std::size_t Table::column_index(const std::string& name) const {
  for (std::size_t i = 0; i < columns.size(); ++i)
    if (columns[i] == name) return i;
  throw ContractError(fmt::format("no column '{}'", name));
}

double Table::number(std::size_t row, const std::string& column) const {
  const Cell& c = rows.at(row).at(column_index(column));
  if (const auto* d = std::get_if<double>(&c)) return *d;
  if (const auto* i = std::get_if<std::int64_t>(&c)) return static_cast<double>(*i);
  throw ContractError(fmt::format("column '{}' is not numeric", column));
}

double ExperimentReport::metric(const std::string& key) const {
  const auto it = metrics.find(key);
  if (it == metrics.end()) throw ContractError(fmt::format("report '{}' has no metric '{}'", name, key));
  return it->second;
}

std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  return fmt::format("{:.17g}", v);
}

std::string to_csv(const Table& table) {
  std::string out;
  for (std::size_t i = 0; i < table.columns.size(); ++i) {
    if (i) out += ',';
    out += csv_field(table.columns[i]);
  }
  out += '\n';
  for (const auto& r : table.rows) {
    for (std::size_t i = 0; i < r.size(); ++i) {
      if (i) out += ',';
      out += csv_field(cell_text(r[i]));
    }
    out += '\n';
  }
  return out;
}

std::string to_json(const ExperimentReport& report) {
  nlohmann::json j;
  j["name"] = report.name;
  j["config"] = report.config;
  j["seeds"] = report.seeds;
  nlohmann::json metrics = nlohmann::json::object();
  for (const auto& [k, v] : report.metrics) metrics[k] = number_json(v);
  j["metrics"] = std::move(metrics);
  j["rows"] = table_json(report.rows);
  j["summary"] = table_json(report.summary);
  j["meta"] = report.meta;
  return j.dump(2) + "\n";
}

void write_file_atomic(const std::filesystem::path& path, const std::string& content) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error(fmt::format("cannot open {} for writing", tmp.string()));
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    out.flush();
    if (!out) {
      std::error_code ec;
      std::filesystem::remove(tmp, ec);
      throw std::runtime_error(fmt::format("write to {} failed", tmp.string()));
    }
  }
  std::filesystem::rename(tmp, path);
}

std::vector<std::filesystem::path> write_report(const ExperimentReport& report, const std::filesystem::path& dir) {
  std::vector<std::filesystem::path> written;
  try {
    std::filesystem::create_directories(dir);
    const auto put = [&](const std::string& file, const std::string& body) {
      const auto p = dir / file;
      write_file_atomic(p, body);
      written.push_back(p);
    };
    put(report.name + ".csv", to_csv(report.rows));
    if (!report.summary.columns.empty()) put(report.name + "_summary.csv", to_csv(report.summary));
    put(report.name + ".json", to_json(report));
  } catch (...) {
    std::error_code ec;
    for (const auto& p : written) std::filesystem::remove(p, ec);
    throw;
  }
  return written;
}

}  // namespace gmflab
