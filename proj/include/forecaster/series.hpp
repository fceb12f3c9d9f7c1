#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

namespace forecaster {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

// Hourly spatial signals x_t (one column per location) with aligned
// auxiliary vectors a_t (one column per feature).
struct SpatialSeries {
    std::vector<std::int64_t> timestamps;  // epoch hours, strictly +1 per row
    Matrix signals;                        // T x N
    Matrix aux;                            // T x P
    std::vector<std::string> location_ids;
    std::vector<std::string> aux_names;

    std::size_t length() const { return timestamps.size(); }
    std::size_t n_locations() const { return static_cast<std::size_t>(signals.cols()); }
    std::size_t n_aux() const { return static_cast<std::size_t>(aux.cols()); }

    // Rows [begin, end) as a new series.
    SpatialSeries slice(std::size_t begin, std::size_t end) const;

    // Throws on row-count mismatch or irregular cadence.
    void validate() const;
};

std::uint64_t fnv1a64(std::string_view bytes);
std::string hex64(std::uint64_t value);
// Shortest text that parses back to the same double.
std::string format_double(double value);

}  // namespace forecaster
