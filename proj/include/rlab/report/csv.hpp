#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace rlab::report {

// Shortest representation that round-trips to the same double.
std::string format_number(double v);

struct CsvTable {
  std::vector<std::string> columns;
  std::vector<std::vector<std::string>> rows;

  // Throws SchemaError naming the column when absent.
  std::size_t column(std::string_view name) const;
  bool has_column(std::string_view name) const;
  const std::string& at(std::size_t row, std::string_view name) const;
  double number(std::size_t row, std::string_view name) const;
};

std::string to_csv(const CsvTable& table);
CsvTable parse_csv(std::string_view text);

void write_csv(const std::filesystem::path& path, const CsvTable& table);
CsvTable read_csv(const std::filesystem::path& path);

void write_text(const std::filesystem::path& path, std::string_view text);
std::string read_text(const std::filesystem::path& path);

}  // namespace rlab::report
