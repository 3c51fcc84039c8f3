#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace tsln::csv {

/// Minimal reader for comma-separated numeric tables without quoting.
struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  /// Column index by name; throws std::runtime_error if absent.
  std::size_t column(std::string_view name) const;
};

Table read(const std::filesystem::path& path);

/// Throws std::runtime_error unless the header matches exactly.
void require_header(const Table& table, const std::vector<std::string>& expected,
                    const std::filesystem::path& path);

double to_double(const std::string& field);
long to_long(const std::string& field);

/// Shortest representation that round-trips through strtod.
std::string exact(double value);
/// Fixed significant digits for report-style output.
std::string fmt(double value, int digits = 10);

}  // namespace tsln::csv
