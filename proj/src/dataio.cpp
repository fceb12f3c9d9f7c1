#include "forecaster/dataio.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numbers>
#include <set>
#include <sstream>

#include "forecaster/error.hpp"
#include "forecaster/random.hpp"

namespace forecaster::dataio {

namespace {

struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::int64_t> timestamps;
    std::vector<std::vector<double>> rows;
    std::string config_hash;
};

std::vector<std::string> split_fields(const std::string& line) {
    std::vector<std::string> out;
    std::string field;
    std::istringstream in(line);
    while (std::getline(in, field, ',')) out.push_back(field);
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

std::string trim(std::string s) {
    while (!s.empty() && (s.back() == '\r' || s.back() == ' ')) s.pop_back();
    std::size_t b = 0;
    while (b < s.size() && s[b] == ' ') ++b;
    return s.substr(b);
}

CsvTable read_table(const std::string& path) {
    std::ifstream in(path);
    if (!in) fail(ErrorKind::Dependency, "missing data file " + path);
    CsvTable table;
    std::string line;
    std::size_t line_no = 0;
    bool have_header = false;
    while (std::getline(in, line)) {
        ++line_no;
        line = trim(line);
        if (line.empty()) continue;
        if (line[0] == '#') {
            const auto pos = line.find("config_hash=");
            if (pos != std::string::npos) table.config_hash = trim(line.substr(pos + 12));
            continue;
        }
        auto fields = split_fields(line);
        if (!have_header) {
            for (auto& f : fields) f = trim(f);
            if (fields.empty() || fields[0] != "timestamp") {
                fail(ErrorKind::Parse, path + ":" + std::to_string(line_no) + ": first column must be 'timestamp'");
            }
            table.header = std::move(fields);
            have_header = true;
            continue;
        }
        if (fields.size() != table.header.size()) {
            fail(ErrorKind::Parse, path + ":" + std::to_string(line_no) + ": expected " +
                                       std::to_string(table.header.size()) + " columns, found " +
                                       std::to_string(fields.size()));
        }
        const std::string ts = trim(fields[0]);
        std::int64_t stamp = 0;
        auto [tp, tec] = std::from_chars(ts.data(), ts.data() + ts.size(), stamp);
        if (tec != std::errc() || tp != ts.data() + ts.size()) {
            fail(ErrorKind::Parse, path + ":" + std::to_string(line_no) + ": bad timestamp '" + ts + "'");
        }
        std::vector<double> row(fields.size() - 1);
        for (std::size_t c = 1; c < fields.size(); ++c) {
            const std::string f = trim(fields[c]);
            auto [p, ec] = std::from_chars(f.data(), f.data() + f.size(), row[c - 1]);
            if (f.empty() || ec != std::errc() || p != f.data() + f.size()) {
                fail(ErrorKind::Parse, path + ": missing or invalid value at row " + std::to_string(line_no) +
                                           ", column '" + table.header[c] + "'");
            }
        }
        table.timestamps.push_back(stamp);
        table.rows.push_back(std::move(row));
    }
    if (!have_header) fail(ErrorKind::Parse, path + ": no header line");
    return table;
}

Matrix to_matrix(const CsvTable& t) {
    const std::size_t cols = t.header.size() - 1;
    Matrix m(static_cast<Eigen::Index>(t.rows.size()), static_cast<Eigen::Index>(cols));
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
        for (std::size_t c = 0; c < cols; ++c) m(r, c) = t.rows[r][c];
    }
    return m;
}

void write_table(const std::string& path, const std::vector<std::string>& header,
                 const std::vector<std::int64_t>& timestamps, const Matrix& values, const std::string& config_hash) {
    std::ofstream out(path);
    if (!out) fail(ErrorKind::Io, "cannot write " + path);
    if (!config_hash.empty()) out << "# config_hash=" << config_hash << '\n';
    out << "timestamp";
    for (const auto& h : header) out << ',' << h;
    out << '\n';
    for (std::size_t r = 0; r < timestamps.size(); ++r) {
        out << timestamps[r];
        for (Eigen::Index c = 0; c < values.cols(); ++c) out << ',' << format_double(values(r, c));
        out << '\n';
    }
}

std::int64_t floor_div(std::int64_t a, std::int64_t b) {
    std::int64_t q = a / b;
    if ((a % b != 0) && ((a < 0) != (b < 0))) --q;
    return q;
}

Eigen::Index idx(std::size_t v) { return static_cast<Eigen::Index>(v); }

}  // namespace

SpatialSeries load_csv(const std::string& signals_path, const std::string& aux_path, std::string* config_hash) {
    const CsvTable sig = read_table(signals_path);
    const CsvTable aux = read_table(aux_path);
    SpatialSeries s;
    s.timestamps = sig.timestamps;
    s.signals = to_matrix(sig);
    s.aux = to_matrix(aux);
    for (std::size_t c = 1; c < sig.header.size(); ++c) {
        const std::string& h = sig.header[c];
        s.location_ids.push_back(h.rfind("loc_", 0) == 0 ? h.substr(4) : h);
    }
    s.aux_names.assign(aux.header.begin() + 1, aux.header.end());
    if (aux.timestamps != sig.timestamps) {
        fail(ErrorKind::Dimension, "signal and aux files have different timestamps");
    }
    if (sig.config_hash != aux.config_hash) {
        fail(ErrorKind::Configuration, "signal and aux files carry different config hashes");
    }
    if (config_hash) *config_hash = sig.config_hash;
    s.validate();
    return s;
}

void save_csv(const std::string& signals_path, const std::string& aux_path, const SpatialSeries& series,
              const std::string& config_hash) {
    series.validate();
    std::vector<std::string> loc_header;
    for (const auto& id : series.location_ids) loc_header.push_back("loc_" + id);
    write_table(signals_path, loc_header, series.timestamps, series.signals, config_hash);
    write_table(aux_path, series.aux_names, series.timestamps, series.aux, config_hash);
}

std::vector<std::size_t> HistoryFilterSpec::offsets() const {
    std::set<std::size_t> all;
    for (std::size_t o = 0; o < recent_hours; ++o) all.insert(o);
    auto add_periodic = [&](std::size_t period, std::size_t count) {
        for (std::size_t j = 1; j <= count; ++j) {
            const std::size_t centre = period * j;
            for (std::size_t o = centre - window_before; o <= centre + window_after; ++o) all.insert(o);
        }
    };
    add_periodic(24, daily_periods);
    add_periodic(168, weekly_periods);
    return {all.rbegin(), all.rend()};
}

std::size_t HistoryFilterSpec::max_lookback() const {
    const auto o = offsets();
    return o.empty() ? 0 : o.front();
}

void HistoryFilterSpec::validate() const {
    if (window_before >= 24) fail(ErrorKind::Configuration, "history window_before must be below 24");
    if (recent_hours == 0 && daily_periods == 0 && weekly_periods == 0) {
        fail(ErrorKind::Configuration, "history filter selects no elements");
    }
}

nlohmann::json HistoryFilterSpec::to_json() const {
    return {{"recent_hours", recent_hours},   {"daily_periods", daily_periods}, {"weekly_periods", weekly_periods},
            {"window_before", window_before}, {"window_after", window_after}};
}

HistoryFilterSpec HistoryFilterSpec::from_json(const nlohmann::json& doc) {
    HistoryFilterSpec s;
    s.recent_hours = doc.value("recent_hours", s.recent_hours);
    s.daily_periods = doc.value("daily_periods", s.daily_periods);
    s.weekly_periods = doc.value("weekly_periods", s.weekly_periods);
    s.window_before = doc.value("window_before", s.window_before);
    s.window_after = doc.value("window_after", s.window_after);
    s.validate();
    return s;
}

ad::Tensor build_filtered_history(const SpatialSeries& series, std::size_t t, const HistoryFilterSpec& spec) {
    const auto offsets = spec.offsets();
    const std::size_t max_lb = offsets.empty() ? 0 : offsets.front();
    if (t < max_lb || t >= series.length()) {
        fail(ErrorKind::Window, "history at row " + std::to_string(t) + " needs lookback " + std::to_string(max_lb) +
                                    " within a series of length " + std::to_string(series.length()));
    }
    const std::size_t n = series.n_locations();
    const std::size_t p = series.n_aux();
    ad::Tensor h = ad::Tensor::zeros(offsets.size(), n + p);
    for (std::size_t r = 0; r < offsets.size(); ++r) {
        const auto row = idx(t - offsets[r]);
        for (std::size_t i = 0; i < n; ++i) h(r, i) = series.signals(row, idx(i));
        for (std::size_t k = 0; k < p; ++k) h(r, n + k) = series.aux(row, idx(k));
    }
    return h;
}

std::vector<Job> make_jobs(const SpatialSeries& series, const HistoryFilterSpec& spec, std::size_t horizon,
                           std::size_t stride) {
    if (horizon == 0) fail(ErrorKind::Configuration, "forecast horizon must be positive");
    if (stride == 0) fail(ErrorKind::Configuration, "job stride must be positive");
    const std::size_t lb = spec.max_lookback();
    const std::size_t n = series.n_locations();
    const std::size_t p = series.n_aux();
    std::vector<Job> jobs;
    for (std::size_t t = lb; t + horizon < series.length(); t += stride) {
        Job job;
        job.origin = t;
        job.origin_timestamp = series.timestamps[t];
        job.history = build_filtered_history(series, t, spec);
        job.decoder_inputs = ad::Tensor::zeros(horizon, n + p);
        job.future_aux = ad::Tensor::zeros(horizon, p);
        job.truths = ad::Tensor::zeros(horizon, n);
        for (std::size_t k = 0; k < horizon; ++k) {
            const auto prev = idx(t + k);
            const auto next = idx(t + k + 1);
            for (std::size_t i = 0; i < n; ++i) {
                job.decoder_inputs(k, i) = series.signals(prev, idx(i));
                job.truths(k, i) = series.signals(next, idx(i));
            }
            for (std::size_t a = 0; a < p; ++a) {
                job.decoder_inputs(k, n + a) = series.aux(next, idx(a));
                job.future_aux(k, a) = series.aux(next, idx(a));
            }
        }
        jobs.push_back(std::move(job));
    }
    return jobs;
}

std::vector<Job> make_jobs(std::span<const SpatialSeries> segments, const HistoryFilterSpec& spec,
                           std::size_t horizon, std::size_t stride) {
    std::vector<Job> jobs;
    for (const auto& seg : segments) {
        auto part = make_jobs(seg, spec, horizon, stride);
        std::move(part.begin(), part.end(), std::back_inserter(jobs));
    }
    return jobs;
}

SeriesSplit split(const SpatialSeries& series, std::span<const RowRange> train_ranges, RowRange val_range,
                  RowRange test_range) {
    std::vector<std::pair<RowRange, std::string>> all;
    for (const auto& r : train_ranges) all.emplace_back(r, "train");
    all.emplace_back(val_range, "validation");
    all.emplace_back(test_range, "test");
    if (train_ranges.empty()) fail(ErrorKind::Configuration, "no training range given");
    if (val_range.end <= val_range.begin) fail(ErrorKind::Configuration, "validation range is empty");
    for (const auto& [r, name] : all) {
        if (r.end < r.begin || r.end > series.length()) {
            fail(ErrorKind::Configuration, name + " range [" + std::to_string(r.begin) + ", " + std::to_string(r.end) +
                                               ") is outside the series of length " + std::to_string(series.length()));
        }
        if (name != "test" && r.end == r.begin) fail(ErrorKind::Configuration, name + " range is empty");
    }
    for (std::size_t a = 0; a < all.size(); ++a) {
        for (std::size_t b = a + 1; b < all.size(); ++b) {
            const auto& x = all[a].first;
            const auto& y = all[b].first;
            if (x.begin < y.end && y.begin < x.end) {
                fail(ErrorKind::Configuration, all[a].second + " and " + all[b].second + " ranges overlap");
            }
        }
    }
    SeriesSplit out;
    for (const auto& r : train_ranges) out.train.push_back(series.slice(r.begin, r.end));
    out.validation = series.slice(val_range.begin, val_range.end);
    out.test = series.slice(test_range.begin, test_range.end);
    return out;
}

Standardizer Standardizer::fit(std::span<const SpatialSeries> segments, double min_scale) {
    if (segments.empty()) fail(ErrorKind::InsufficientData, "no segments to standardize");
    const std::size_t n = segments.front().n_locations();
    std::vector<double> sum(n, 0.0);
    std::size_t count = 0;
    for (const auto& s : segments) {
        for (std::size_t i = 0; i < n; ++i) sum[i] += s.signals.col(idx(i)).sum();
        count += s.length();
    }
    if (count < 2) fail(ErrorKind::InsufficientData, "need at least two rows to standardize");
    Standardizer st;
    st.mean.resize(n);
    st.scale.resize(n);
    for (std::size_t i = 0; i < n; ++i) st.mean[i] = sum[i] / static_cast<double>(count);
    std::vector<double> ss(n, 0.0);
    for (const auto& s : segments) {
        for (std::size_t i = 0; i < n; ++i) {
            ss[i] += (s.signals.col(idx(i)).array() - st.mean[i]).square().sum();
        }
    }
    for (std::size_t i = 0; i < n; ++i) {
        const double sd = std::sqrt(ss[i] / static_cast<double>(count - 1));
        st.scale[i] = sd < min_scale ? 1.0 : sd;
    }
    return st;
}

std::vector<double> Standardizer::apply(std::span<const double> signal) const {
    std::vector<double> out(signal.size());
    for (std::size_t i = 0; i < signal.size(); ++i) out[i] = (signal[i] - mean[i]) / scale[i];
    return out;
}

std::vector<double> Standardizer::invert(std::span<const double> standardized) const {
    std::vector<double> out(standardized.size());
    for (std::size_t i = 0; i < standardized.size(); ++i) out[i] = standardized[i] * scale[i] + mean[i];
    return out;
}

int weekday_of(std::int64_t epoch_hour) {
    const std::int64_t day = floor_div(epoch_hour, 24);
    return static_cast<int>(((day + 3) % 7 + 7) % 7);
}

int hour_of(std::int64_t epoch_hour) { return static_cast<int>(epoch_hour - floor_div(epoch_hour, 24) * 24); }

void SyntheticSpec::validate() const {
    auto bad = [](const std::string& m) { fail(ErrorKind::Configuration, "synthetic spec: " + m); };
    if (n_locations == 0) bad("n_locations must be positive");
    if (topology != "chain" && topology != "chain_plus_chords" && topology != "explicit" && topology != "none") {
        bad("unknown topology '" + topology + "'");
    }
    if (link != "identity" && link != "exp") bad("unknown link '" + link + "'");
    if (std::abs(ar_coefficient) + ar_spread / 2.0 >= 1.0) bad("AR coefficients must lie in (-1, 1)");
    if (ar_spread < 0.0 || level_spread < 0.0) bad("spreads must be non-negative");
    if (noise_scale < 0.0) bad("noise_scale must be non-negative");
    if (holiday_rate < 0.0 || holiday_rate > 1.0) bad("holiday_rate must lie in [0, 1]");
    for (const auto& [a, b] : edges) {
        if (a >= n_locations || b >= n_locations || a == b) bad("edge endpoints out of range");
    }
    Eigen::LLT<Matrix> llt(true_precision());
    if (llt.info() != Eigen::Success) bad("precision matrix is not positive definite; lower edge_strength");
}

gmrf::DependencyGraph SyntheticSpec::true_graph() const {
    std::set<std::pair<std::size_t, std::size_t>> set;
    auto add = [&](std::size_t a, std::size_t b) {
        if (a != b) set.emplace(std::min(a, b), std::max(a, b));
    };
    if (topology == "chain" || topology == "chain_plus_chords") {
        for (std::size_t i = 0; i + 1 < n_locations; ++i) add(i, i + 1);
    }
    if (topology == "chain_plus_chords") {
        if (edges.empty()) {
            if (n_locations >= 4) {
                add(0, n_locations / 2);
                add(n_locations / 4, (3 * n_locations) / 4);
            }
        }
        for (const auto& [a, b] : edges) add(a, b);
    }
    if (topology == "explicit") {
        for (const auto& [a, b] : edges) add(a, b);
    }
    gmrf::DependencyGraph g;
    g.n_locations = n_locations;
    for (const auto& [a, b] : set) g.edges.push_back({a, b, edge_strength});
    return g;
}

Matrix SyntheticSpec::true_precision() const {
    Matrix Q = Matrix::Identity(idx(n_locations), idx(n_locations));
    for (const auto& e : true_graph().edges) {
        Q(idx(e.i), idx(e.j)) = -edge_strength;
        Q(idx(e.j), idx(e.i)) = -edge_strength;
    }
    return Q;
}

nlohmann::json SyntheticSpec::to_json() const {
    auto edge_list = nlohmann::json::array();
    for (const auto& [a, b] : edges) edge_list.push_back({a, b});
    return {{"n_locations", n_locations},
            {"topology", topology},
            {"edges", edge_list},
            {"edge_strength", edge_strength},
            {"ar_coefficient", ar_coefficient},
            {"ar_spread", ar_spread},
            {"base_level", base_level},
            {"level_spread", level_spread},
            {"daily_amplitude", daily_amplitude},
            {"weekly_amplitude", weekly_amplitude},
            {"weekend_shift", weekend_shift},
            {"aux_effect", aux_effect},
            {"noise_scale", noise_scale},
            {"link", link},
            {"start_timestamp", start_timestamp},
            {"holiday_rate", holiday_rate},
            {"seed", seed}};
}

SyntheticSpec SyntheticSpec::from_json(const nlohmann::json& doc) {
    SyntheticSpec s;
    try {
        s.n_locations = doc.value("n_locations", s.n_locations);
        s.topology = doc.value("topology", s.topology);
        if (doc.contains("edges")) {
            for (const auto& e : doc.at("edges")) s.edges.emplace_back(e.at(0).get<std::size_t>(), e.at(1).get<std::size_t>());
        }
        s.edge_strength = doc.value("edge_strength", s.edge_strength);
        s.ar_coefficient = doc.value("ar_coefficient", s.ar_coefficient);
        s.ar_spread = doc.value("ar_spread", s.ar_spread);
        s.base_level = doc.value("base_level", s.base_level);
        s.level_spread = doc.value("level_spread", s.level_spread);
        s.daily_amplitude = doc.value("daily_amplitude", s.daily_amplitude);
        s.weekly_amplitude = doc.value("weekly_amplitude", s.weekly_amplitude);
        s.weekend_shift = doc.value("weekend_shift", s.weekend_shift);
        s.aux_effect = doc.value("aux_effect", s.aux_effect);
        s.noise_scale = doc.value("noise_scale", s.noise_scale);
        s.link = doc.value("link", s.link);
        s.start_timestamp = doc.value("start_timestamp", s.start_timestamp);
        s.holiday_rate = doc.value("holiday_rate", s.holiday_rate);
        s.seed = doc.value("seed", s.seed);
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::Parse, std::string("bad synthetic spec: ") + e.what());
    }
    s.validate();
    return s;
}

Matrix sample_innovations(const Matrix& Q, std::size_t count, std::uint64_t seed) {
    Eigen::LLT<Matrix> llt(Q);
    if (llt.info() != Eigen::Success) fail(ErrorKind::InvalidPrecision, "innovation precision is not positive definite");
    const Matrix U = llt.matrixU();  // Q = U^T U, so e = U^{-1} z has covariance Q^{-1}
    Rng rng(seed);
    const auto n = Q.rows();
    Matrix z(n, idx(count));
    for (std::size_t t = 0; t < count; ++t) {
        for (Eigen::Index i = 0; i < n; ++i) z(i, idx(t)) = rng.normal();
    }
    const Matrix e = U.triangularView<Eigen::Upper>().solve(z);
    return e.transpose();
}

SpatialSeries synth_generate(const SyntheticSpec& spec, std::size_t length) {
    spec.validate();
    const std::size_t n = spec.n_locations;
    constexpr double kTwoPi = 2.0 * std::numbers::pi;

    Rng params(derive_seed(spec.seed, 1));
    std::vector<double> ar(n), level(n), amp(n), phase(n), effect(n);
    for (std::size_t i = 0; i < n; ++i) {
        ar[i] = spec.ar_coefficient + spec.ar_spread * (params.uniform() - 0.5);
        level[i] = spec.base_level + spec.level_spread * (params.uniform() - 0.5);
        amp[i] = 0.75 + 0.5 * params.uniform();
        phase[i] = params.uniform(-1.5, 1.5);
        effect[i] = 0.5 + params.uniform();
    }

    SpatialSeries s;
    s.timestamps.resize(length);
    for (std::size_t t = 0; t < length; ++t) s.timestamps[t] = spec.start_timestamp + static_cast<std::int64_t>(t);
    for (std::size_t i = 0; i < n; ++i) s.location_ids.push_back(std::to_string(i));
    s.aux_names = {"temperature", "rain"};
    for (int h = 0; h < 24; ++h) s.aux_names.push_back((h < 10 ? "hour_0" : "hour_") + std::to_string(h));
    for (int d = 0; d < 7; ++d) s.aux_names.push_back("weekday_" + std::to_string(d));
    s.aux_names.push_back("holiday");
    const std::size_t p = s.aux_names.size();
    s.aux = Matrix::Zero(idx(length), idx(p));
    s.signals = Matrix::Zero(idx(length), idx(n));

    // Auxiliary features.
    Rng weather(derive_seed(spec.seed, 2));
    double temp_noise = 0.0;
    double rain_latent = -1.0;
    std::int64_t current_day = std::numeric_limits<std::int64_t>::min();
    bool holiday = false;
    for (std::size_t t = 0; t < length; ++t) {
        const std::int64_t ts = s.timestamps[t];
        const int hour = hour_of(ts);
        const int wd = weekday_of(ts);
        const std::int64_t day = floor_div(ts, 24);
        if (day != current_day) {
            current_day = day;
            holiday = weather.uniform() < spec.holiday_rate;
        }
        temp_noise = 0.95 * temp_noise + 0.1 * weather.normal();
        rain_latent = 0.97 * rain_latent + 0.25 * weather.normal() - 0.03;
        const double yearly = std::sin(kTwoPi * static_cast<double>(day) / 365.25);
        const double temp = 0.8 * yearly + 0.4 * std::sin(kTwoPi * (hour - 9) / 24.0) + temp_noise;
        const auto r = idx(t);
        s.aux(r, 0) = temp;
        s.aux(r, 1) = std::max(0.0, rain_latent);
        s.aux(r, 2 + hour) = 1.0;
        s.aux(r, 26 + wd) = 1.0;
        s.aux(r, 33) = holiday ? 1.0 : 0.0;
    }

    const Matrix innovations = sample_innovations(spec.true_precision(), length, derive_seed(spec.seed, 3));
    std::vector<double> latent(n, 0.0);
    for (std::size_t t = 0; t < length; ++t) {
        const auto r = idx(t);
        const int hour = hour_of(s.timestamps[t]);
        const int wd = weekday_of(s.timestamps[t]);
        const bool rest_day = wd >= 5 || s.aux(r, 33) > 0.0;
        const double shift = rest_day ? spec.weekend_shift : 0.0;
        const double damp = rest_day && spec.weekend_shift != 0.0 ? 0.6 : 1.0;
        for (std::size_t i = 0; i < n; ++i) {
            latent[i] = ar[i] * latent[i] + spec.noise_scale * innovations(r, idx(i));
            const double angle = kTwoPi * (hour - shift + phase[i]) / 24.0;
            const double daily = damp * (std::sin(angle) + 0.35 * std::sin(2.0 * angle));
            const double weekly = std::cos(kTwoPi * wd / 7.0);
            const double season = spec.daily_amplitude * amp[i] * daily + spec.weekly_amplitude * weekly;
            const double aux_term = spec.aux_effect * effect[i] * (s.aux(r, 0) - 0.8 * s.aux(r, 1));
            const double value = level[i] + season + aux_term + latent[i];
            s.signals(r, idx(i)) = spec.link == "exp" ? std::exp(value) : value;
        }
    }
    s.validate();
    return s;
}

}  // namespace forecaster::dataio
