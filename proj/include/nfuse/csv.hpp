#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

// Minimal RFC 4180 style CSV: comma separated, optional double quotes with ""
// escapes, no embedded newlines.
namespace nfuse::csv {

struct Row {
  std::size_t line = 0;  // 1-based line number in the file
  std::vector<std::string> fields;
};

struct Table {
  std::vector<std::string> header;
  std::vector<Row> rows;

  // Index of a header column; throws a format error naming the file when missing.
  std::size_t column(std::string_view name) const;
  std::optional<std::size_t> find_column(std::string_view name) const;
  std::string source;
};

std::vector<std::string> split_line(std::string_view line);
// Reads a file with a header row. Blank lines are skipped.
Table read(const std::filesystem::path& path);
// Quotes a field only when it holds a comma, quote or leading/trailing space.
std::string escape(std::string_view field);
std::string join(const std::vector<std::string>& fields);

}  // namespace nfuse::csv
