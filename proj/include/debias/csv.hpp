#pragma once

// Numeric CSV ingestion and emission.

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "debias/sampling.hpp"

namespace debias::csv {

/// File could not be opened, read or written.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// File was read but its contents are unusable (missing column, bad cell, ...).
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Shortest text that parses back to exactly the same double.
inline std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  if (s.size() >= 2 && s.front() == '"' && s.back() == '"') s = s.substr(1, s.size() - 2);
  return s;
}

inline std::vector<std::string> split_line(std::string_view line) {
  std::vector<std::string> cells;
  std::size_t start = 0;
  for (;;) {
    const std::size_t comma = line.find(',', start);
    cells.emplace_back(trim(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start)));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return cells;
}

inline bool parse_double(std::string_view text, double& out) {
  if (text.empty()) return false;
  if (text.front() == '+') text.remove_prefix(1);
  const auto res = std::from_chars(text.data(), text.data() + text.size(), out);
  return res.ec == std::errc() && res.ptr == text.data() + text.size();
}

struct Dataset {
  std::vector<std::string> columns;  // features first, then the response if any
  Batch rows;
};

/// Reads the named feature columns followed by the response column (if
/// `response_column` is non-empty). An empty feature list takes every column
/// other than the response, in file order. Rows keep file order; row numbers
/// in errors are 1-based file lines.
inline Dataset ingest_csv(const std::string& path, const std::string& response_column,
                          std::vector<std::string> feature_columns = {}) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path + "'");
  std::string line;
  if (!std::getline(in, line) || trim(line).empty()) throw FormatError("'" + path + "' is empty (no header row)");
  const std::vector<std::string> header = split_line(line);

  auto find = [&](const std::string& name) {
    for (std::size_t i = 0; i < header.size(); ++i) {
      if (header[i] == name) return i;
    }
    throw FormatError("column '" + name + "' not found in '" + path + "'");
  };
  if (feature_columns.empty()) {
    for (const auto& h : header) {
      if (h != response_column) feature_columns.push_back(h);
    }
  }
  std::vector<std::size_t> picks;
  Dataset ds;
  for (const auto& f : feature_columns) {
    picks.push_back(find(f));
    ds.columns.push_back(f);
  }
  if (!response_column.empty()) {
    picks.push_back(find(response_column));
    ds.columns.push_back(response_column);
  }
  if (picks.empty()) throw FormatError("no columns selected from '" + path + "'");
  ds.rows = Batch(picks.size());

  std::size_t line_no = 1;
  std::vector<double> values(picks.size());
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto cells = split_line(line);
    if (cells.size() != header.size()) {
      throw FormatError("row " + std::to_string(line_no) + " has " + std::to_string(cells.size()) + " cells, header has " +
                        std::to_string(header.size()));
    }
    for (std::size_t k = 0; k < picks.size(); ++k) {
      const std::string& cell = cells[picks[k]];
      if (!parse_double(cell, values[k]) || !std::isfinite(values[k])) {
        throw FormatError("row " + std::to_string(line_no) + ", column '" + header[picks[k]] +
                          "': not a finite number ('" + cell + "')");
      }
    }
    ds.rows.append_row(values);
  }
  if (in.bad()) throw IoError("read error on '" + path + "'");
  if (ds.rows.empty()) throw FormatError("'" + path + "' has a header but no data rows");
  return ds;
}

inline void write_csv(const std::string& path, const std::vector<std::string>& header, const Batch& rows) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write '" + path + "'");
  for (std::size_t i = 0; i < header.size(); ++i) out << (i ? "," : "") << header[i];
  out << '\n';
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const auto row = rows.row(r);
    for (std::size_t j = 0; j < row.size(); ++j) out << (j ? "," : "") << format_double(row[j]);
    out << '\n';
  }
  if (!out) throw IoError("write error on '" + path + "'");
}

}  // namespace debias::csv
