#include "riskprobe/csv.hpp"

#include <charconv>
#include <istream>

#include <fmt/format.h>

#include "riskprobe/errors.hpp"

namespace riskprobe::csv {

std::vector<std::string> split_line(std::string_view line) {
  std::vector<std::string> fields;
  std::string current;
  bool quoted = false;
  for (size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          current += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        current += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(std::move(current));
      current.clear();
    } else if (c != '\r') {
      current += c;
    }
  }
  if (quoted) throw ParseError("unterminated quoted CSV field");
  fields.push_back(std::move(current));
  return fields;
}

std::string escape(std::string_view field) {
  if (field.find_first_of(",\"\n") == std::string_view::npos) return std::string(field);
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}

std::string join(const std::vector<std::string>& fields) {
  std::string out;
  for (size_t i = 0; i < fields.size(); ++i) {
    if (i) out += ',';
    out += escape(fields[i]);
  }
  return out;
}

Table Table::read(std::istream& in) {
  Table t;
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    auto fields = split_line(line);
    if (t.header_.empty()) {
      t.header_ = std::move(fields);
      for (size_t i = 0; i < t.header_.size(); ++i) t.index_.emplace(t.header_[i], i);
      continue;
    }
    if (fields.size() != t.header_.size()) {
      throw ParseError(fmt::format("CSV line {}: {} fields, header has {}", line_no,
                                   fields.size(), t.header_.size()));
    }
    t.rows_.push_back(std::move(fields));
  }
  if (t.header_.empty()) throw ParseError("CSV input has no header line");
  return t;
}

std::size_t Table::column(std::string_view name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ParseError(fmt::format("CSV missing column '{}'", name));
  return it->second;
}

bool Table::has_column(std::string_view name) const { return index_.find(name) != index_.end(); }

const std::string& Table::get(std::size_t row, std::string_view name) const {
  return rows_.at(row).at(column(name));
}

int to_int(std::string_view field, std::string_view what) {
  int v = 0;
  auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), v);
  if (ec != std::errc{} || ptr != field.data() + field.size()) {
    throw ParseError(fmt::format("{}: '{}' is not an integer", what, field));
  }
  return v;
}

double to_double(std::string_view field, std::string_view what) {
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), v);
  if (ec != std::errc{} || ptr != field.data() + field.size()) {
    throw ParseError(fmt::format("{}: '{}' is not a number", what, field));
  }
  return v;
}

std::string format_double(double x) { return fmt::format("{}", x); }

}  // namespace riskprobe::csv
