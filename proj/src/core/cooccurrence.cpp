#include "cxrcf/core/cooccurrence.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>

#include "cxrcf/core/csv.hpp"
#include "cxrcf/core/errors.hpp"

namespace cxrcf {
namespace {

std::string format_fraction(double v) {
    if (std::isnan(v)) return "";
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
}

} // namespace

std::size_t CooccurrenceMatrix::row_index(const std::string& key) const {
    auto it = std::find(row_keys.begin(), row_keys.end(), key);
    if (it == row_keys.end()) throw NotFoundError("co-occurrence matrix has no row '" + key + "'");
    return static_cast<std::size_t>(it - row_keys.begin());
}

std::size_t CooccurrenceMatrix::col_index(const std::string& key) const {
    auto it = std::find(col_keys.begin(), col_keys.end(), key);
    if (it == col_keys.end()) throw NotFoundError("co-occurrence matrix has no column '" + key + "'");
    return static_cast<std::size_t>(it - col_keys.begin());
}

double CooccurrenceMatrix::at(const std::string& row, const std::string& col) const {
    return fractions[row_index(row)][col_index(col)];
}

bool CooccurrenceMatrix::covers(const std::vector<std::string>& keys) const {
    for (const auto& k : keys) {
        if (std::find(row_keys.begin(), row_keys.end(), k) == row_keys.end()) return false;
        if (std::find(col_keys.begin(), col_keys.end(), k) == col_keys.end()) return false;
    }
    return true;
}

// Layout: header "row,count,<col...>"; one line per row key.
void CooccurrenceMatrix::write_csv(std::ostream& out) const {
    csv::Row header{"row", "count"};
    header.insert(header.end(), col_keys.begin(), col_keys.end());
    csv::write_row(out, header);
    for (std::size_t r = 0; r < row_keys.size(); ++r) {
        csv::Row row{row_keys[r], std::to_string(row_counts[r])};
        for (double v : fractions[r]) row.push_back(format_fraction(v));
        csv::write_row(out, row);
    }
}

CooccurrenceMatrix CooccurrenceMatrix::read_csv(std::istream& in) {
    const auto table = csv::Table::read(in);
    table.require({"row", "count"});
    CooccurrenceMatrix m;
    const auto& header = table.header();
    m.col_keys.assign(header.begin() + 2, header.end());
    for (const auto& row : table.rows()) {
        if (row.size() != header.size()) throw SchemaError("co-occurrence row has wrong number of fields");
        m.row_keys.push_back(row[0]);
        m.row_counts.push_back(std::stoul(row[1]));
        std::vector<double> fr;
        for (std::size_t c = 2; c < row.size(); ++c)
            fr.push_back(row[c].empty() ? std::numeric_limits<double>::quiet_NaN() : std::stod(row[c]));
        m.fractions.push_back(std::move(fr));
        m.cell_counts.emplace_back(m.col_keys.size(), m.row_counts.back());
    }
    return m;
}

} // namespace cxrcf
