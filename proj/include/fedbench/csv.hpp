#pragma once

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "fedbench/common.hpp"

namespace fedbench {

// One optional text cell per column. Absent means the field was empty in
// the file; marker tokens like "." are resolved later against the pipeline
// configuration, not here.
using Cell = std::optional<std::string>;
using Row = std::vector<Cell>;

struct RawTable {
  std::vector<std::string> column_names;
  std::vector<Row> rows;

  std::size_t column_index(std::string_view name) const {
    for (std::size_t i = 0; i < column_names.size(); ++i)
      if (column_names[i] == name) return i;
    throw DataError("column not found: " + std::string(name));
  }

  bool has_column(std::string_view name) const {
    for (const auto& c : column_names)
      if (c == name) return true;
    return false;
  }
};

namespace detail {

inline std::vector<std::string> split_line(const std::string& line,
                                           char delimiter) {
  std::vector<std::string> fields;
  std::string cur;
  for (char ch : line) {
    if (ch == delimiter) {
      fields.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(ch);
    }
  }
  fields.push_back(cur);
  return fields;
}

inline void strip_cr(std::string& line) {
  if (!line.empty() && line.back() == '\r') line.pop_back();
}

}  // namespace detail

// Locale-independent numeric parsing; the microdata uses a dot decimal
// separator regardless of the host locale.
inline std::optional<double> parse_double(std::string_view s) {
  double v = 0.0;
  const char* first = s.data();
  const char* last = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr != last) return std::nullopt;
  return v;
}

inline std::optional<std::int64_t> parse_int(std::string_view s) {
  std::int64_t v = 0;
  const char* first = s.data();
  const char* last = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr != last) return std::nullopt;
  return v;
}

// Streams a delimited file with a header row. `on_row` receives the 1-based
// data row number and the split fields; a row with the wrong field count is
// a schema violation.
inline std::vector<std::string> for_each_csv_row(
    const std::filesystem::path& path, char delimiter,
    const std::function<void(std::size_t, const std::vector<std::string>&)>&
        on_row) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open file: " + path.string());
  std::string line;
  if (!std::getline(in, line))
    throw DataError("empty file (missing header): " + path.string());
  detail::strip_cr(line);
  auto header = detail::split_line(line, delimiter);

  std::size_t row_number = 0;
  while (std::getline(in, line)) {
    detail::strip_cr(line);
    if (line.empty() && in.peek() == std::char_traits<char>::eof()) break;
    ++row_number;
    auto fields = detail::split_line(line, delimiter);
    if (fields.size() != header.size())
      throw DataError("row " + std::to_string(row_number) + " has " +
                      std::to_string(fields.size()) + " fields, expected " +
                      std::to_string(header.size()) + " (" + path.string() +
                      ")");
    on_row(row_number, fields);
  }
  return header;
}

inline std::vector<std::string> read_csv_header(
    const std::filesystem::path& path, char delimiter) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open file: " + path.string());
  std::string line;
  if (!std::getline(in, line))
    throw DataError("empty file (missing header): " + path.string());
  detail::strip_cr(line);
  return detail::split_line(line, delimiter);
}

inline RawTable read_csv(const std::filesystem::path& path,
                         char delimiter = ';') {
  RawTable table;
  table.column_names = for_each_csv_row(
      path, delimiter,
      [&table](std::size_t, const std::vector<std::string>& fields) {
        Row row;
        row.reserve(fields.size());
        for (const auto& f : fields) {
          if (f.empty())
            row.emplace_back(std::nullopt);
          else
            row.emplace_back(f);
        }
        table.rows.push_back(std::move(row));
      });
  std::set<std::string_view> seen(table.column_names.begin(),
                                  table.column_names.end());
  if (seen.size() != table.column_names.size())
    throw DataError("duplicate column names in header: " + path.string());
  return table;
}

inline void write_csv(const std::filesystem::path& path, const RawTable& table,
                      char delimiter = ';') {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write file: " + path.string());
  for (std::size_t c = 0; c < table.column_names.size(); ++c) {
    if (c) out << delimiter;
    out << table.column_names[c];
  }
  out << '\n';
  for (const auto& row : table.rows) {
    for (std::size_t c = 0; c < row.size(); ++c) {
      if (c) out << delimiter;
      if (row[c]) out << *row[c];
    }
    out << '\n';
  }
}

}  // namespace fedbench
