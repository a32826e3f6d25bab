#pragma once

#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <system_error>
#include <vector>

#include "graphvalue/errors.hpp"

namespace graphvalue::csv {

// Shortest representation that round-trips exactly, so regenerated files are
// byte-identical and re-parsing recovers the in-memory value bit for bit.
inline std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  if (ec != std::errc()) throw NumericFault("unformattable double value");
  return std::string(buf, ptr);
}

inline double parse_double(const std::string& s) {
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size())
    throw ParseError("not a numeric field: '" + s + "'");
  return v;
}

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  int column(const std::string& name) const {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return static_cast<int>(i);
    throw ParseError("missing column '" + name + "'");
  }
  bool operator==(const Table& o) const { return header == o.header && rows == o.rows; }
};

namespace detail {

inline bool needs_quoting(const std::string& field) {
  return field.find_first_of(",\"\n\r") != std::string::npos;
}

inline void write_field(std::string& out, const std::string& field) {
  if (field.find_first_of("\n\r") != std::string::npos)
    throw ContractError("csv fields cannot contain line breaks");
  if (!needs_quoting(field)) {
    out += field;
    return;
  }
  out += '"';
  for (char c : field) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
}

inline std::vector<std::string> split_line(const std::string& line, int line_no) {
  std::vector<std::string> fields;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cur += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cur += c;
      }
    } else if (c == '"' && cur.empty()) {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(std::move(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (quoted) throw ParseError("csv line " + std::to_string(line_no) + ": unterminated quote");
  fields.push_back(std::move(cur));
  return fields;
}

}  // namespace detail

inline std::string to_string(const Table& table) {
  if (table.header.empty()) throw ContractError("csv table must have a header");
  std::string out;
  auto write_row = [&](const std::vector<std::string>& row) {
    for (std::size_t i = 0; i < row.size(); ++i) {
      if (i) out += ',';
      detail::write_field(out, row[i]);
    }
    out += '\n';
  };
  write_row(table.header);
  for (const auto& row : table.rows) {
    if (row.size() != table.header.size())
      throw ContractError("csv row has " + std::to_string(row.size()) + " fields, header has " +
                          std::to_string(table.header.size()));
    write_row(row);
  }
  return out;
}

inline Table parse(const std::string& text) {
  Table table;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> fields = detail::split_line(line, line_no);
    if (line_no == 1) {
      table.header = std::move(fields);
    } else {
      if (fields.size() != table.header.size())
        throw ParseError("csv line " + std::to_string(line_no) + ": " + std::to_string(fields.size()) +
                         " fields, expected " + std::to_string(table.header.size()));
      table.rows.push_back(std::move(fields));
    }
  }
  if (table.header.empty()) throw ParseError("csv input has no header line");
  return table;
}

inline void save(const std::string& path, const Table& table) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ContractError("cannot write csv file '" + path + "'");
  out << to_string(table);
  if (!out) throw ContractError("failed writing csv file '" + path + "'");
}

inline Table load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot read csv file '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse(buf.str());
}

}  // namespace graphvalue::csv
