#pragma once

#include <filesystem>
#include <map>
#include <ostream>
#include <span>
#include <string>
#include <vector>

namespace dadam::csv {

/// Shortest representation that parses back to the same double; "nan"/"inf" for
/// non-finite values.
std::string format(double value);

double parse_double(const std::string& text);

struct Table {
  /// `# key=value` lines preceding the header.
  std::map<std::string, std::string> meta;
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  /// 1-based source line of each row.
  std::vector<std::size_t> lines;

  /// Index of a named column; throws std::out_of_range if absent.
  std::size_t column(const std::string& name) const;
  double number(std::size_t row, const std::string& name) const;
};

/// Parses comma-separated text with a header row. Errors carry the line number.
Table read(const std::filesystem::path& path);
Table parse(std::istream& in, const std::string& source = "<stream>");

void write_row(std::ostream& out, std::span<const std::string> fields);
void write_row(std::ostream& out, std::span<const double> values);

}  // namespace dadam::csv
