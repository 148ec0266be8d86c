#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace retfuse::csv {

using Row = std::vector<std::string>;

/// Parses comma-separated text with RFC 4180 quoting. Blank lines are skipped,
/// a UTF-8 byte order mark on the first line is dropped. Each returned row
/// carries its 1-based line number in the source.
struct Table {
    Row header;
    std::vector<Row> rows;
    std::vector<std::size_t> line_numbers;
};

Table parse(std::string_view text);
Table read_file(const std::filesystem::path& path);

std::string escape(std::string_view field);
std::string join(const Row& fields);

std::string trim(std::string_view s);
std::string to_lower(std::string_view s);

}  // namespace retfuse::csv
