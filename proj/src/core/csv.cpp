#include "cxrcf/core/csv.hpp"

#include <fstream>
#include <istream>
#include <iterator>
#include <ostream>
#include <sstream>

#include "cxrcf/core/errors.hpp"

namespace cxrcf::csv {

std::vector<Row> parse(std::string_view text) {
    std::vector<Row> rows;
    Row row;
    std::string field;
    bool in_quotes = false;
    bool row_has_content = false;
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
                field.push_back(c);
            }
            continue;
        }
        switch (c) {
        case '"':
            in_quotes = true;
            row_has_content = true;
            break;
        case ',':
            row.push_back(std::move(field));
            field.clear();
            row_has_content = true;
            break;
        case '\r':
            break;
        case '\n':
            if (row_has_content || !field.empty()) {
                row.push_back(std::move(field));
                rows.push_back(std::move(row));
            }
            field.clear();
            row.clear();
            row_has_content = false;
            break;
        default:
            field.push_back(c);
            row_has_content = true;
        }
    }
    if (in_quotes) throw SchemaError("unterminated quoted CSV field");
    if (row_has_content || !field.empty()) {
        row.push_back(std::move(field));
        rows.push_back(std::move(row));
    }
    return rows;
}

std::vector<Row> parse(std::istream& in, std::vector<std::size_t>* line_numbers) {
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (text.size() >= 3 && text.compare(0, 3, "\xEF\xBB\xBF") == 0) text.erase(0, 3);
    if (line_numbers) {
        // Recover starting lines by replaying the quote state.
        line_numbers->clear();
        std::size_t line = 1;
        bool in_quotes = false;
        bool at_row_start = true;
        for (char c : text) {
            if (at_row_start && c != '\n' && c != '\r') {
                line_numbers->push_back(line);
                at_row_start = false;
            }
            if (c == '"') in_quotes = !in_quotes;
            if (c == '\n') {
                ++line;
                if (!in_quotes) at_row_start = true;
            }
        }
    }
    return parse(std::string_view(text));
}

Table::Table(Row header, std::vector<Row> rows, std::vector<std::size_t> lines)
    : header_(std::move(header)), rows_(std::move(rows)), lines_(std::move(lines)) {}

Table Table::read(std::istream& in) {
    std::vector<std::size_t> lines;
    auto rows = parse(in, &lines);
    if (rows.empty()) return {};
    Row header = std::move(rows.front());
    rows.erase(rows.begin());
    if (!lines.empty()) lines.erase(lines.begin());
    for (auto& h : header) {
        while (!h.empty() && (h.back() == ' ' || h.back() == '\t')) h.pop_back();
        while (!h.empty() && (h.front() == ' ' || h.front() == '\t')) h.erase(h.begin());
    }
    return Table(std::move(header), std::move(rows), std::move(lines));
}

Table Table::read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw NotFoundError("cannot open CSV file " + path);
    return read(in);
}

std::size_t Table::line_of(std::size_t row) const { return row < lines_.size() ? lines_[row] : row + 2; }

std::optional<std::size_t> Table::column(std::string_view name) const {
    for (std::size_t i = 0; i < header_.size(); ++i)
        if (header_[i] == name) return i;
    return std::nullopt;
}

void Table::require(const std::vector<std::string>& names) const {
    std::string missing;
    for (const auto& n : names) {
        if (!column(n)) {
            if (!missing.empty()) missing += ", ";
            missing += n;
        }
    }
    if (!missing.empty()) throw SchemaError("missing required columns: " + missing);
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

void write_row(std::ostream& out, const Row& row) {
    for (std::size_t i = 0; i < row.size(); ++i) {
        if (i) out << ',';
        out << escape(row[i]);
    }
    out << '\n';
}

} // namespace cxrcf::csv
