#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace antlab {

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  // Column index by name; throws RuntimeFailure if absent.
  std::size_t column(const std::string& name) const;
  double number(std::size_t row, const std::string& name) const;
};

// Writes `content` to a sibling temp file, then renames it over `path`.
void write_file_atomic(const std::filesystem::path& path, const std::string& content);
std::string read_file(const std::filesystem::path& path);

std::string to_csv(const CsvTable& table);
void write_csv(const std::filesystem::path& path, const CsvTable& table);

// Throws RuntimeFailure naming the file when it is missing or malformed
// (ragged rows, empty header).
CsvTable read_csv(const std::filesystem::path& path);

}  // namespace antlab
