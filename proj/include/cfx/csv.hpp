#pragma once

// Minimal RFC-4180 reading/writing plus round-trip number formatting.

#include <charconv>
#include <istream>
#include <optional>
#include <ostream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "cfx/errors.hpp"

namespace cfx::csv {

using Row = std::vector<std::string>;

// Reads one record; quoted fields may span lines. Returns nullopt at EOF.
inline std::optional<Row> read_row(std::istream& in) {
  Row row;
  std::string field;
  bool in_quotes = false;
  bool any = false;
  char c = 0;
  while (in.get(c)) {
    any = true;
    if (in_quotes) {
      if (c == '"') {
        if (in.peek() == '"') {
          in.get(c);
          field.push_back('"');
        } else {
          in_quotes = false;
        }
      } else {
        field.push_back(c);
      }
      continue;
    }
    if (c == '"') {
      in_quotes = true;
    } else if (c == ',') {
      row.push_back(std::move(field));
      field.clear();
    } else if (c == '\r') {
      if (in.peek() == '\n') in.get(c);
      row.push_back(std::move(field));
      return row;
    } else if (c == '\n') {
      row.push_back(std::move(field));
      return row;
    } else {
      field.push_back(c);
    }
  }
  if (in_quotes) throw ParseError("csv: unterminated quoted field");
  if (!any) return std::nullopt;
  row.push_back(std::move(field));
  return row;
}

inline std::vector<Row> read_all(std::istream& in) {
  std::vector<Row> rows;
  while (auto row = read_row(in)) {
    if (row->size() == 1 && (*row)[0].empty()) continue;  // blank line
    rows.push_back(std::move(*row));
  }
  return rows;
}

inline std::string quote(std::string_view field) {
  if (field.find_first_of(",\"\r\n") == std::string_view::npos) return std::string(field);
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out.push_back('"');
    out.push_back(c);
  }
  out.push_back('"');
  return out;
}

inline void write_row(std::ostream& out, const Row& row) {
  for (std::size_t i = 0; i < row.size(); ++i) {
    if (i) out << ',';
    out << quote(row[i]);
  }
  out << '\n';
}

// Shortest decimal text that parses back to the same double.
inline std::string format_number(double v) {
  if (v == 0.0) v = 0.0;
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  if (ec != std::errc{}) throw std::runtime_error("format_number failed");
  return std::string(buf, end);
}

inline std::optional<double> parse_number(std::string_view text) {
  while (!text.empty() && (text.front() == ' ' || text.front() == '\t')) text.remove_prefix(1);
  while (!text.empty() && (text.back() == ' ' || text.back() == '\t')) text.remove_suffix(1);
  if (!text.empty() && text.front() == '+') text.remove_prefix(1);
  if (text.empty()) return std::nullopt;
  double v = 0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc{} || ptr != text.data() + text.size()) return std::nullopt;
  return v;
}

}  // namespace cfx::csv
