#pragma once

#include <span>
#include <vector>

namespace cxrcf::stats {

/// Linear-interpolation quantile (the common "type 7" definition), q in [0, 1].
/// Returns NaN for empty input.
double quantile(std::vector<double> values, double q);
double median(std::span<const double> values);
/// Q3 - Q1 under the same interpolation.
double iqr(std::span<const double> values);
double mean(std::span<const double> values);

} // namespace cxrcf::stats
