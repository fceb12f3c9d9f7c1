#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "forecaster/autodiff.hpp"
#include "forecaster/gmrf.hpp"
#include "forecaster/series.hpp"

namespace forecaster::dataio {

// Signals: `timestamp,loc_<id>,...`; aux: `timestamp,<feature>,...`. Lines
// starting with '#' are comments; `# config_hash=<hex>` is recognised.
SpatialSeries load_csv(const std::string& signals_path, const std::string& aux_path,
                       std::string* config_hash = nullptr);
void save_csv(const std::string& signals_path, const std::string& aux_path, const SpatialSeries& series,
              const std::string& config_hash = {});

// Lookback offsets (hours before t) fed to the encoder:
//   recent:  0 .. recent_hours-1
//   daily:   24j - i, j = 1..daily_periods
//   weekly:  168j - i, j = 1..weekly_periods
// with i running from -window_after to window_before.
struct HistoryFilterSpec {
    std::size_t recent_hours = 6;
    std::size_t daily_periods = 6;
    std::size_t weekly_periods = 4;
    std::size_t window_before = 5;
    std::size_t window_after = 1;

    // Unique offsets, largest (oldest) first.
    std::vector<std::size_t> offsets() const;
    std::size_t max_lookback() const;
    std::size_t length() const { return offsets().size(); }
    void validate() const;

    nlohmann::json to_json() const;
    static HistoryFilterSpec from_json(const nlohmann::json& doc);
};

// Rows x_{t-o} || a_{t-o} for each offset o, oldest first.
ad::Tensor build_filtered_history(const SpatialSeries& series, std::size_t t, const HistoryFilterSpec& spec);

struct Job {
    std::size_t origin = 0;  // row index t within its segment
    std::int64_t origin_timestamp = 0;
    ad::Tensor history;         // L x (N + P)
    ad::Tensor decoder_inputs;  // T' x (N + P): row k is x_{t+k} || a_{t+k+1}
    ad::Tensor future_aux;      // T' x P: a_{t+1} .. a_{t+T'}
    ad::Tensor truths;          // T' x N: x_{t+1} .. x_{t+T'}
};

// One job per t = max_lookback, max_lookback + stride, ... with t + T' inside the series.
std::vector<Job> make_jobs(const SpatialSeries& series, const HistoryFilterSpec& spec, std::size_t horizon,
                           std::size_t stride = 1);
std::vector<Job> make_jobs(std::span<const SpatialSeries> segments, const HistoryFilterSpec& spec,
                           std::size_t horizon, std::size_t stride = 1);

struct RowRange {
    std::size_t begin = 0;
    std::size_t end = 0;  // exclusive
    std::size_t size() const { return end - begin; }
};

struct SeriesSplit {
    std::vector<SpatialSeries> train;  // one segment per training range
    SpatialSeries validation;
    SpatialSeries test;
};

SeriesSplit split(const SpatialSeries& series, std::span<const RowRange> train_ranges, RowRange val_range,
                  RowRange test_range);

// Per-location affine standardization fitted on training rows.
struct Standardizer {
    std::vector<double> mean;
    std::vector<double> scale;

    static Standardizer fit(std::span<const SpatialSeries> segments, double min_scale = 1e-8);
    std::vector<double> apply(std::span<const double> signal) const;
    std::vector<double> invert(std::span<const double> standardized) const;
};

struct SyntheticSpec {
    std::size_t n_locations = 20;
    // chain | chain_plus_chords | explicit | none
    std::string topology = "chain_plus_chords";
    // Chords for chain_plus_chords (defaults to two if empty) or the full edge list for explicit.
    std::vector<std::pair<std::size_t, std::size_t>> edges;
    double edge_strength = 0.3;  // precision off-diagonal is -edge_strength on each edge

    double ar_coefficient = 0.0;
    double ar_spread = 0.0;  // per-location AR coefficient drawn in ar_coefficient +/- spread/2

    double base_level = 0.0;
    double level_spread = 0.0;
    double daily_amplitude = 0.0;
    double weekly_amplitude = 0.0;
    // Weekend days use the daily profile shifted by this many hours and damped.
    double weekend_shift = 0.0;
    double aux_effect = 0.0;
    double noise_scale = 1.0;
    // identity: x = level; exp: x = exp(level)
    std::string link = "identity";

    std::int64_t start_timestamp = 0;  // epoch hours; 0 is a Thursday
    double holiday_rate = 0.03;
    std::uint64_t seed = 0;

    void validate() const;
    gmrf::DependencyGraph true_graph() const;
    Matrix true_precision() const;

    nlohmann::json to_json() const;
    static SyntheticSpec from_json(const nlohmann::json& doc);
};

// `count` draws from N(0, Q^{-1}) via the Cholesky factor of Q.
Matrix sample_innovations(const Matrix& Q, std::size_t count, std::uint64_t seed);

SpatialSeries synth_generate(const SyntheticSpec& spec, std::size_t length);

// Monday = 0.
int weekday_of(std::int64_t epoch_hour);
int hour_of(std::int64_t epoch_hour);

}  // namespace forecaster::dataio
