#pragma once

// Minimal CSV support for the pipeline's own files: comma separated, first
// line is the header, fields may be double-quoted.

#include <iosfwd>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace riskprobe::csv {

std::vector<std::string> split_line(std::string_view line);
std::string escape(std::string_view field);
std::string join(const std::vector<std::string>& fields);

class Table {
 public:
  static Table read(std::istream& in);

  const std::vector<std::string>& header() const { return header_; }
  std::size_t size() const { return rows_.size(); }
  const std::vector<std::string>& row(std::size_t i) const { return rows_.at(i); }

  // Throws ParseError if the column is missing from the header.
  std::size_t column(std::string_view name) const;
  const std::string& get(std::size_t row, std::string_view name) const;
  bool has_column(std::string_view name) const;

 private:
  std::vector<std::string> header_;
  std::vector<std::vector<std::string>> rows_;
  std::map<std::string, std::size_t, std::less<>> index_;
};

int to_int(std::string_view field, std::string_view what);
double to_double(std::string_view field, std::string_view what);

// Shortest representation that round-trips.
std::string format_double(double x);

}  // namespace riskprobe::csv
