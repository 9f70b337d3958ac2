#pragma once

// Small CSV helpers shared by the manifest, metrics and timing readers.
// Lines beginning with '#' carry run provenance and are skipped on read.

#include <cstddef>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace pbtseg::csv {

class ParseError : public std::runtime_error {
public:
  ParseError(std::size_t line, const std::string& message)
      : std::runtime_error("line " + std::to_string(line) + ": " + message), line_(line) {}
  std::size_t line() const noexcept { return line_; }

private:
  std::size_t line_;
};

struct Row {
  std::size_t line;  // 1-based line number in the source
  std::vector<std::string> fields;
};

struct Table {
  std::vector<std::string> header;
  std::vector<Row> rows;
  std::vector<std::string> comments;  // '#' lines, without the leading '#'
};

std::vector<std::string> split_line(std::string_view line);
Table parse(std::string_view text);
Table read(const std::filesystem::path& path);

/// Throws ParseError(1, ...) unless the header matches exactly.
void require_header(const Table& table, const std::vector<std::string>& expected);

/// Quotes a field when it contains a comma, quote or newline.
std::string escape(std::string_view field);
std::string join(const std::vector<std::string>& fields);

/// Shortest decimal text that round-trips; "NA" for an absent value.
std::string format_number(double v);
std::string format_optional(const std::optional<double>& v);
/// Parses a number or "NA"/empty (-> nullopt). Throws std::invalid_argument on junk.
std::optional<double> parse_optional(std::string_view s);
double parse_number(std::string_view s);

}  // namespace pbtseg::csv
