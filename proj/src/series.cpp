#include "forecaster/series.hpp"

#include <charconv>
#include <cstdio>

#include "forecaster/error.hpp"

namespace forecaster {

SpatialSeries SpatialSeries::slice(std::size_t begin, std::size_t end) const {
    if (begin > end || end > length()) {
        fail(ErrorKind::Configuration, "slice [" + std::to_string(begin) + ", " + std::to_string(end) +
                                           ") out of bounds for series of length " + std::to_string(length()));
    }
    SpatialSeries out;
    const auto rows = static_cast<Eigen::Index>(end - begin);
    out.timestamps.assign(timestamps.begin() + static_cast<std::ptrdiff_t>(begin),
                          timestamps.begin() + static_cast<std::ptrdiff_t>(end));
    out.signals = signals.middleRows(static_cast<Eigen::Index>(begin), rows);
    out.aux = aux.middleRows(static_cast<Eigen::Index>(begin), rows);
    out.location_ids = location_ids;
    out.aux_names = aux_names;
    return out;
}

void SpatialSeries::validate() const {
    const auto rows = static_cast<Eigen::Index>(timestamps.size());
    if (signals.rows() != rows || aux.rows() != rows) {
        fail(ErrorKind::Dimension, "series row counts differ: timestamps " + std::to_string(rows) + ", signals " +
                                       std::to_string(signals.rows()) + ", aux " + std::to_string(aux.rows()));
    }
    if (!location_ids.empty() && location_ids.size() != n_locations()) {
        fail(ErrorKind::Dimension, "location id count does not match signal columns");
    }
    if (!aux_names.empty() && aux_names.size() != n_aux()) {
        fail(ErrorKind::Dimension, "aux name count does not match aux columns");
    }
    for (std::size_t t = 1; t < timestamps.size(); ++t) {
        if (timestamps[t] != timestamps[t - 1] + 1) {
            fail(ErrorKind::Cadence, "timestamps not hourly-regular at row " + std::to_string(t) + " (" +
                                         std::to_string(timestamps[t - 1]) + " -> " + std::to_string(timestamps[t]) +
                                         ")");
        }
    }
}

std::uint64_t fnv1a64(std::string_view bytes) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::string hex64(std::uint64_t value) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(value));
    return buf;
}

std::string format_double(double value) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, value);
    if (ec != std::errc{}) return std::to_string(value);
    return std::string(buf, ptr);
}

}  // namespace forecaster
