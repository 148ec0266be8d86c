#include "retfuse/csv.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>

#include "retfuse/error.hpp"

namespace retfuse::csv {

namespace {

bool blank(const Row& row) {
    return std::all_of(row.begin(), row.end(), [](const std::string& f) { return trim(f).empty(); });
}

}  // namespace

Table parse(std::string_view text) {
    if (text.size() >= 3 && text.substr(0, 3) == "\xEF\xBB\xBF") text.remove_prefix(3);

    Table table;
    Row row;
    std::string field;
    bool in_quotes = false;
    bool have_header = false;
    std::size_t line = 1;
    std::size_t row_line = 1;

    auto finish_row = [&] {
        row.push_back(std::move(field));
        field.clear();
        if (!blank(row)) {
            if (!have_header) {
                table.header = std::move(row);
                have_header = true;
            } else {
                table.rows.push_back(std::move(row));
                table.line_numbers.push_back(row_line);
            }
        }
        row.clear();
    };

    for (std::size_t i = 0; i < text.size(); ++i) {
        const char c = text[i];
        if (in_quotes) {
            if (c == '"') {
                if (i + 1 < text.size() && text[i + 1] == '"') {
                    field.push_back('"');
                    ++i;
                } else {
                    in_quotes = false;
                }
            } else {
                if (c == '\n') ++line;
                field.push_back(c);
            }
            continue;
        }
        switch (c) {
            case '"': in_quotes = true; break;
            case ',':
                row.push_back(std::move(field));
                field.clear();
                break;
            case '\r': break;
            case '\n':
                finish_row();
                ++line;
                row_line = line;
                break;
            default: field.push_back(c);
        }
    }
    if (in_quotes) throw Error("csv: unterminated quoted field starting before line " + std::to_string(line));
    if (!field.empty() || !row.empty()) finish_row();
    return table;
}

Table read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse(buf.str());
}

std::string escape(std::string_view field) {
    if (field.find_first_of(",\"\n\r") == std::string_view::npos) return std::string(field);
    std::string out = "\"";
    for (char c : field) {
        if (c == '"') out.push_back('"');
        out.push_back(c);
    }
    out.push_back('"');
    return out;
}

std::string join(const Row& fields) {
    std::string out;
    for (std::size_t i = 0; i < fields.size(); ++i) {
        if (i) out.push_back(',');
        out += escape(fields[i]);
    }
    return out;
}

std::string trim(std::string_view s) {
    auto is_space = [](unsigned char c) { return std::isspace(c) != 0; };
    while (!s.empty() && is_space(s.front())) s.remove_prefix(1);
    while (!s.empty() && is_space(s.back())) s.remove_suffix(1);
    return std::string(s);
}

std::string to_lower(std::string_view s) {
    std::string out(s);
    std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return out;
}

}  // namespace retfuse::csv
