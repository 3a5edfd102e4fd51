#pragma once

#include <cstddef>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace cxrcf::csv {

using Row = std::vector<std::string>;

/// RFC 4180 reader: quoted fields may hold commas, doubled quotes and
/// newlines. A trailing newline does not produce an empty row. `line_numbers`
/// (when given) receives the 1-based physical line each row starts on.
std::vector<Row> parse(std::istream& in, std::vector<std::size_t>* line_numbers = nullptr);
std::vector<Row> parse(std::string_view text);

/// Header plus rows, with column lookup by name.
class Table {
public:
    Table() = default;
    Table(Row header, std::vector<Row> rows, std::vector<std::size_t> lines = {});

    static Table read(std::istream& in);
    static Table read_file(const std::string& path);

    const Row& header() const { return header_; }
    const std::vector<Row>& rows() const { return rows_; }
    std::size_t line_of(std::size_t row) const;

    std::optional<std::size_t> column(std::string_view name) const;
    /// Throws SchemaError naming every missing column.
    void require(const std::vector<std::string>& names) const;

private:
    Row header_;
    std::vector<Row> rows_;
    std::vector<std::size_t> lines_;
};

std::string escape(std::string_view field);
void write_row(std::ostream& out, const Row& row);

} // namespace cxrcf::csv
