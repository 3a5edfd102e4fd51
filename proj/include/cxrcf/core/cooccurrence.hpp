#pragma once

#include <cstddef>
#include <iosfwd>
#include <string>
#include <vector>

namespace cxrcf {

/// Row-conditional co-occurrence table: fractions[r][c] is the share of row
/// items (scans labelled / prompted with row_keys[r]) that also carry
/// col_keys[c]. Rows with no items hold NaN and a zero count.
struct CooccurrenceMatrix {
    std::vector<std::string> row_keys;
    std::vector<std::string> col_keys;
    std::vector<std::vector<double>> fractions;
    std::vector<std::size_t> row_counts;
    /// Per-cell denominators; equal to row_counts unless a policy excluded
    /// some items from a cell.
    std::vector<std::vector<std::size_t>> cell_counts;
    std::string note;

    std::size_t row_index(const std::string& key) const;  ///< throws NotFoundError
    std::size_t col_index(const std::string& key) const;  ///< throws NotFoundError
    double at(const std::string& row, const std::string& col) const;
    bool covers(const std::vector<std::string>& keys) const;

    void write_csv(std::ostream& out) const;
    static CooccurrenceMatrix read_csv(std::istream& in);
};

} // namespace cxrcf
