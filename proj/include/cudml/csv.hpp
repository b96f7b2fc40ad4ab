#pragma once

#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "cudml/dataset.hpp"
#include "cudml/error.hpp"

namespace cudml {

/// Header plus numeric columns, in file order.
struct CsvTable {
  std::vector<std::string> names;
  std::vector<std::vector<double>> columns;

  std::size_t rows() const noexcept { return columns.empty() ? 0 : columns.front().size(); }

  std::ptrdiff_t find(std::string_view name) const {
    auto it = std::find(names.begin(), names.end(), name);
    return it == names.end() ? -1 : it - names.begin();
  }

  const std::vector<double>& column(std::string_view name) const {
    auto idx = find(name);
    require(idx >= 0, ErrorCode::MissingColumn, "column '" + std::string(name) + "' not found");
    return columns[static_cast<std::size_t>(idx)];
  }
};

/// Which columns play which role. Empty `covariates` means every column
/// that is not the outcome, the treatment, or listed in `exclude`.
struct CsvSchema {
  std::string outcome = "y";
  std::string treatment = "d";
  std::vector<std::string> covariates;
  std::vector<std::string> exclude;
};

namespace detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r'))
    s.remove_suffix(1);
  return s;
}

inline std::vector<std::string_view> split_line(std::string_view line) {
  std::vector<std::string_view> cells;
  std::size_t start = 0;
  while (true) {
    auto pos = line.find(',', start);
    if (pos == std::string_view::npos) {
      cells.push_back(trim(line.substr(start)));
      break;
    }
    cells.push_back(trim(line.substr(start, pos - start)));
    start = pos + 1;
  }
  return cells;
}

inline bool parse_double(std::string_view s, double& out) {
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  if (s.empty()) return false;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && ptr == s.data() + s.size();
}

}  // namespace detail

inline CsvTable parse_csv(std::string_view text) {
  CsvTable table;
  std::size_t pos = 0;
  std::size_t line_no = 0;
  bool header_seen = false;
  while (pos <= text.size()) {
    auto end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    if (detail::trim(line).empty()) {
      if (end == text.size()) break;
      continue;
    }
    if (!header_seen) {
      if (line.size() >= 3 && line.substr(0, 3) == "\xEF\xBB\xBF") line.remove_prefix(3);
      for (auto cell : detail::split_line(line)) table.names.emplace_back(cell);
      table.columns.resize(table.names.size());
      header_seen = true;
      continue;
    }
    auto cells = detail::split_line(line);
    require(cells.size() == table.names.size(), ErrorCode::ParseError,
            "row " + std::to_string(line_no) + " has " + std::to_string(cells.size()) +
                " cells, header has " + std::to_string(table.names.size()));
    for (std::size_t c = 0; c < cells.size(); ++c) {
      double v = 0.0;
      require(detail::parse_double(cells[c], v), ErrorCode::ParseError,
              "row " + std::to_string(line_no) + ", column '" + table.names[c] +
                  "': cannot parse '" + std::string(cells[c]) + "'");
      table.columns[c].push_back(v);
    }
    ++line_no;
  }
  require(header_seen, ErrorCode::ParseError, "missing header row");
  return table;
}

inline CsvTable read_csv_table(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorCode::IoError, "cannot open '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_csv(buf.str());
}

inline Dataset dataset_from_table(const CsvTable& table, const CsvSchema& schema = {}) {
  const auto& y = table.column(schema.outcome);
  const auto& d_raw = table.column(schema.treatment);

  std::vector<std::size_t> cov_cols;
  if (!schema.covariates.empty()) {
    for (const auto& name : schema.covariates) {
      auto idx = table.find(name);
      require(idx >= 0, ErrorCode::MissingColumn, "column '" + name + "' not found");
      cov_cols.push_back(static_cast<std::size_t>(idx));
    }
  } else {
    for (const auto& name : schema.exclude)
      require(table.find(name) >= 0, ErrorCode::MissingColumn, "column '" + name + "' not found");
    for (std::size_t c = 0; c < table.names.size(); ++c) {
      const auto& name = table.names[c];
      if (name == schema.outcome || name == schema.treatment) continue;
      if (std::find(schema.exclude.begin(), schema.exclude.end(), name) != schema.exclude.end())
        continue;
      cov_cols.push_back(c);
    }
  }

  const std::size_t n = table.rows();
  std::vector<int> d(n);
  for (std::size_t i = 0; i < n; ++i) {
    require(d_raw[i] == 0.0 || d_raw[i] == 1.0, ErrorCode::InvalidTreatment,
            "row " + std::to_string(i) + ": treatment value is not 0 or 1");
    d[i] = static_cast<int>(d_raw[i]);
  }
  Matrix x(n, cov_cols.size());
  for (std::size_t j = 0; j < cov_cols.size(); ++j)
    for (std::size_t i = 0; i < n; ++i) x(i, j) = table.columns[cov_cols[j]][i];
  return Dataset(std::move(x), std::move(d), y);
}

inline Dataset load_csv(const std::string& path, const CsvSchema& schema = {}) {
  return dataset_from_table(read_csv_table(path), schema);
}

/// Shortest representation that parses back to the identical double.
inline std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

inline std::string to_csv(const CsvTable& table) {
  std::string out;
  for (std::size_t c = 0; c < table.names.size(); ++c) {
    if (c) out += ',';
    out += table.names[c];
  }
  out += '\n';
  for (std::size_t r = 0; r < table.rows(); ++r) {
    for (std::size_t c = 0; c < table.columns.size(); ++c) {
      if (c) out += ',';
      out += format_double(table.columns[c][r]);
    }
    out += '\n';
  }
  return out;
}

// Columns y, d, x1..xp.
inline CsvTable to_table(const Dataset& data) {
  CsvTable t;
  t.names = {"y", "d"};
  t.columns.emplace_back(data.y().begin(), data.y().end());
  t.columns.emplace_back(data.d().begin(), data.d().end());
  for (std::size_t j = 0; j < data.dim(); ++j) {
    t.names.push_back("x" + std::to_string(j + 1));
    std::vector<double> col(data.size());
    for (std::size_t i = 0; i < data.size(); ++i) col[i] = data.x()(i, j);
    t.columns.push_back(std::move(col));
  }
  return t;
}

inline void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  require(static_cast<bool>(out), ErrorCode::IoError, "cannot write '" + path + "'");
  out << text;
  require(static_cast<bool>(out), ErrorCode::IoError, "write to '" + path + "' failed");
}

}  // namespace cudml
