#include "forecaster/cli.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numbers>
#include <sstream>

#include <CLI11.hpp>

#include "forecaster/random.hpp"

namespace forecaster::cli {

namespace fs = std::filesystem;

namespace {

Logger or_stderr(const Logger& log) {
    if (log) return log;
    return [](const std::string& line) { std::cerr << line << '\n'; };
}

std::string format_fixed(double v, int digits = 4) {
    std::ostringstream s;
    s.setf(std::ios::fixed);
    s.precision(digits);
    s << v;
    return s.str();
}

nlohmann::json range_json(const dataio::RowRange& r) { return nlohmann::json::array({r.begin, r.end}); }

dataio::RowRange range_from(const nlohmann::json& j) {
    if (!j.is_array() || j.size() != 2) fail(ErrorKind::Parse, "row range must be [begin, end]");
    return {j.at(0).get<std::size_t>(), j.at(1).get<std::size_t>()};
}

nlohmann::json solver_json(const gmrf::SolverOptions& s) {
    return {{"rho", s.rho},
            {"abs_tol", s.abs_tol},
            {"rel_tol", s.rel_tol},
            {"max_iterations", s.max_iterations},
            {"penalize_diagonal", s.penalize_diagonal},
            {"variance_floor", s.variance_floor}};
}

gmrf::SolverOptions solver_from(const nlohmann::json& j) {
    gmrf::SolverOptions s;
    s.rho = j.value("rho", s.rho);
    s.abs_tol = j.value("abs_tol", s.abs_tol);
    s.rel_tol = j.value("rel_tol", s.rel_tol);
    s.max_iterations = j.value("max_iterations", s.max_iterations);
    s.penalize_diagonal = j.value("penalize_diagonal", s.penalize_diagonal);
    s.variance_floor = j.value("variance_floor", s.variance_floor);
    return s;
}

void check_hash(const std::string& what, const std::string& found, const std::string& expected) {
    if (!found.empty() && found != expected) {
        fail(ErrorKind::Configuration, what + " was produced under config hash " + found + " but the current config hash is " +
                                           expected + "; rerun the upstream command");
    }
}

void require_file(const std::string& path, const std::string& producer) {
    if (!fs::exists(path)) fail(ErrorKind::Dependency, "missing upstream artifact " + path + " (run `" + producer + "` first)");
}

Matrix stack_signals(std::span<const SpatialSeries> segments) {
    Eigen::Index rows = 0;
    for (const auto& s : segments) rows += s.signals.rows();
    Matrix out(rows, segments.front().signals.cols());
    Eigen::Index r = 0;
    for (const auto& s : segments) {
        out.middleRows(r, s.signals.rows()) = s.signals;
        r += s.signals.rows();
    }
    return out;
}

std::ofstream open_out(const std::string& path) {
    std::ofstream out(path);
    if (!out) fail(ErrorKind::Io, "cannot write " + path);
    return out;
}

void write_json(const std::string& path, const nlohmann::json& doc) { open_out(path) << doc.dump(2) << '\n'; }

transformer::ForecasterModel load_checkpoint(const RunConfig& config, const std::string& hash) {
    require_file(config.artifact(artifacts::kGraph), "learn-graph");
    std::string graph_hash;
    const auto graph = gmrf::read_graph(config.artifact(artifacts::kGraph), &graph_hash);
    check_hash(artifacts::kGraph, graph_hash, hash);
    require_file(config.artifact(artifacts::kCheckpoint), "train");
    std::string ckpt_hash;
    auto model = transformer::load_model(config.artifact(artifacts::kCheckpoint), &graph, &ckpt_hash);
    check_hash(artifacts::kCheckpoint, ckpt_hash, hash);
    return model;
}

std::vector<dataio::Job> test_jobs(const RunConfig& config, const LoadedData& data) {
    auto jobs = dataio::make_jobs(data.split.test, config.history, config.horizon, config.eval_stride);
    if (jobs.empty()) {
        fail(ErrorKind::EmptyEvaluation, "test range of " + std::to_string(data.split.test.length()) +
                                             " rows is too short for a history of " +
                                             std::to_string(config.history.max_lookback() + 1) + " rows plus horizon " +
                                             std::to_string(config.horizon));
    }
    return jobs;
}

}  // namespace

void SplitConfig::resolve(std::size_t length, std::vector<dataio::RowRange>& train_out, dataio::RowRange& val_out,
                          dataio::RowRange& test_out) const {
    const auto at = [&](double f) { return static_cast<std::size_t>(std::floor(f * static_cast<double>(length))); };
    const std::size_t train_end = at(train_fraction);
    const std::size_t val_end = at(train_fraction + validation_fraction);
    train_out = train.empty() ? std::vector<dataio::RowRange>{{0, train_end}} : train;
    val_out = validation.value_or(dataio::RowRange{train_end, val_end});
    test_out = test.value_or(dataio::RowRange{val_end, length});
}

void RunConfig::validate() const {
    auto bad = [](const std::string& m) { fail(ErrorKind::Configuration, m); };
    synth.validate();
    transformer::ModelConfig m = model;
    m.n_locations = std::max<std::size_t>(m.n_locations, 1);
    m.validate();
    history.validate();
    training.validate();
    loss.validate();
    if (gmrf.lambdas.empty()) bad("gmrf.lambdas must list at least one candidate");
    for (double l : gmrf.lambdas) {
        if (!(l >= 0.0)) bad("gmrf.lambdas must be non-negative");
    }
    if (!(gmrf.threshold > 0.0 && gmrf.threshold <= 1.0)) bad("gmrf.threshold must lie in (0, 1]");
    if (horizon == 0) bad("horizon must be positive");
    if (train_stride == 0 || eval_stride == 0) bad("strides must be positive");
    if (var.order == 0) bad("var.order must be positive");
    if (length < 2) bad("length must be at least 2");
    if (!(split.train_fraction > 0.0) || !(split.validation_fraction > 0.0) ||
        split.train_fraction + split.validation_fraction > 1.0) {
        bad("split fractions must be positive and sum to at most 1");
    }
}

nlohmann::json RunConfig::to_json() const {
    nlohmann::json split_doc = {{"train_fraction", split.train_fraction},
                                {"validation_fraction", split.validation_fraction}};
    if (!split.train.empty()) {
        auto arr = nlohmann::json::array();
        for (const auto& r : split.train) arr.push_back(range_json(r));
        split_doc["train"] = arr;
    }
    if (split.validation) split_doc["validation"] = range_json(*split.validation);
    if (split.test) split_doc["test"] = range_json(*split.test);
    nlohmann::json model_doc = model.to_json();
    model_doc.erase("n_locations");
    model_doc.erase("n_aux_features");
    return {{"seed", seed},
            {"synth", synth.to_json()},
            {"length", length},
            {"split", split_doc},
            {"gmrf", {{"lambdas", gmrf.lambdas}, {"threshold", gmrf.threshold}, {"top_k", gmrf.top_k}, {"solver", solver_json(gmrf.solver)}}},
            {"model", model_doc},
            {"history", history.to_json()},
            {"horizon", horizon},
            {"train_stride", train_stride},
            {"eval_stride", eval_stride},
            {"training", training.to_json()},
            {"loss", loss.to_json()},
            {"var", {{"order", var.order}, {"intercept", var.intercept}, {"ridge", var.ridge}}},
            {"external_data", !signals_path.empty()}};
}

RunConfig RunConfig::from_json(const nlohmann::json& doc) {
    RunConfig c;
    try {
        c.seed = doc.value("seed", c.seed);
        c.out_dir = doc.value("out_dir", c.out_dir);
        if (doc.contains("data")) {
            c.signals_path = doc.at("data").value("signals", std::string{});
            c.aux_path = doc.at("data").value("aux", std::string{});
        }
        if (doc.contains("synth")) c.synth = dataio::SyntheticSpec::from_json(doc.at("synth"));
        c.length = doc.value("length", c.length);
        if (doc.contains("split")) {
            const auto& s = doc.at("split");
            c.split.train_fraction = s.value("train_fraction", c.split.train_fraction);
            c.split.validation_fraction = s.value("validation_fraction", c.split.validation_fraction);
            if (s.contains("train")) {
                for (const auto& r : s.at("train")) c.split.train.push_back(range_from(r));
            }
            if (s.contains("validation")) c.split.validation = range_from(s.at("validation"));
            if (s.contains("test")) c.split.test = range_from(s.at("test"));
        }
        if (doc.contains("gmrf")) {
            const auto& g = doc.at("gmrf");
            c.gmrf.lambdas = g.value("lambdas", c.gmrf.lambdas);
            c.gmrf.threshold = g.value("threshold", c.gmrf.threshold);
            c.gmrf.top_k = g.value("top_k", c.gmrf.top_k);
            if (g.contains("solver")) c.gmrf.solver = solver_from(g.at("solver"));
        }
        if (doc.contains("model")) c.model = transformer::ModelConfig::from_json(doc.at("model"));
        if (doc.contains("history")) c.history = dataio::HistoryFilterSpec::from_json(doc.at("history"));
        c.horizon = doc.value("horizon", c.horizon);
        c.train_stride = doc.value("train_stride", c.train_stride);
        c.eval_stride = doc.value("eval_stride", c.eval_stride);
        if (doc.contains("training")) c.training = training::TrainingSchedule::from_json(doc.at("training"));
        if (doc.contains("loss")) c.loss = training::LossConfig::from_json(doc.at("loss"));
        if (doc.contains("var")) {
            const auto& v = doc.at("var");
            c.var.order = v.value("order", c.var.order);
            c.var.intercept = v.value("intercept", c.var.intercept);
            c.var.ridge = v.value("ridge", c.var.ridge);
        }
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::Parse, std::string("bad run config: ") + e.what());
    }
    return c;
}

std::string RunConfig::hash() const { return hex64(fnv1a64(to_json().dump())); }

std::string RunConfig::signals_file() const {
    return signals_path.empty() ? artifact(artifacts::kSignals) : signals_path;
}

std::string RunConfig::aux_file() const { return aux_path.empty() ? artifact(artifacts::kAux) : aux_path; }

std::string RunConfig::artifact(const std::string& name) const { return (fs::path(out_dir) / name).string(); }

RunConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) fail(ErrorKind::Dependency, "missing config file " + path);
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        fail(ErrorKind::Parse, path + ": " + e.what());
    }
    return RunConfig::from_json(doc);
}

std::uint64_t synth_seed(const RunConfig& config) { return derive_seed(config.seed, 101); }
std::uint64_t model_seed(const RunConfig& config) { return derive_seed(config.seed, 102); }
std::uint64_t training_seed(const RunConfig& config) { return derive_seed(config.seed, 103); }

LoadedData load_data(const RunConfig& config) {
    const std::string sig = config.signals_file();
    const std::string aux = config.aux_file();
    require_file(sig, "synth");
    require_file(aux, "synth");
    LoadedData d;
    std::string data_hash;
    d.series = dataio::load_csv(sig, aux, &data_hash);
    if (config.signals_path.empty()) check_hash(sig, data_hash, config.hash());
    std::vector<dataio::RowRange> train;
    dataio::RowRange val, test;
    config.split.resolve(d.series.length(), train, val, test);
    d.split = dataio::split(d.series, train, val, test);
    return d;
}

void cmd_synth(const RunConfig& config, const Logger& log_in) {
    const Logger log = or_stderr(log_in);
    config.validate();
    if (!config.signals_path.empty()) fail(ErrorKind::Configuration, "synth writes its own data; remove data paths from the config");
    fs::create_directories(config.out_dir);
    dataio::SyntheticSpec spec = config.synth;
    spec.seed = synth_seed(config);
    const auto series = dataio::synth_generate(spec, config.length);
    const std::string hash = config.hash();
    dataio::save_csv(config.artifact(artifacts::kSignals), config.artifact(artifacts::kAux), series, hash);
    gmrf::write_graph(config.artifact(artifacts::kTrueGraph), spec.true_graph(), hash);
    gmrf::write_matrix_csv(config.artifact(artifacts::kTruePrecision), spec.true_precision(), hash);
    log("synth: " + std::to_string(series.length()) + " rows, " + std::to_string(series.n_locations()) +
        " locations, " + std::to_string(series.n_aux()) + " aux features -> " + config.out_dir);
}

void cmd_learn_graph(const RunConfig& config, const Logger& log_in) {
    const Logger log = or_stderr(log_in);
    config.validate();
    const auto data = load_data(config);
    const std::string hash = config.hash();
    const Matrix train = stack_signals(data.split.train);
    const Matrix& val = data.split.validation.signals;
    const auto sel = gmrf::select_lambda(train, config.gmrf.lambdas, val, config.gmrf.solver);
    const Matrix corr = gmrf::conditional_correlation(sel.precision);
    const auto graph = gmrf::threshold_graph(corr, config.gmrf.threshold);
    const auto stats = gmrf::graph_stats(graph, config.gmrf.top_k);

    gmrf::write_graph(config.artifact(artifacts::kGraph), graph, hash);
    gmrf::write_matrix_csv(config.artifact(artifacts::kPrecision), sel.precision.Q, hash);
    gmrf::write_matrix_csv(config.artifact(artifacts::kCorrelation), corr, hash);
    {
        auto out = open_out(config.artifact(artifacts::kCorrelationTriplets));
        out << "# config_hash=" << hash << "\ni,j,value\n";
        for (Eigen::Index i = 0; i < corr.rows(); ++i) {
            for (Eigen::Index j = 0; j < corr.cols(); ++j) {
                if (i != j && corr(i, j) != 0.0) out << i << ',' << j << ',' << format_double(corr(i, j)) << '\n';
            }
        }
    }
    {
        auto out = open_out(config.artifact(artifacts::kLambdaSelection));
        out << "# config_hash=" << hash << "\nlambda,converged,validation_log_likelihood,selected\n";
        for (const auto& c : sel.candidates) {
            out << format_double(c.lambda) << ',' << (c.converged ? 1 : 0) << ','
                << format_double(c.validation_log_likelihood) << ',' << (c.lambda == sel.lambda ? 1 : 0) << '\n';
        }
    }
    {
        auto out = open_out(config.artifact(artifacts::kTopEdges));
        out << "# config_hash=" << hash << "\nrank,i,j,location_i,location_j,weight,x_i,y_i,x_j,y_j\n";
        const double n = static_cast<double>(graph.n_locations);
        auto coord = [&](std::size_t k, bool y) {
            const double a = 2.0 * std::numbers::pi * static_cast<double>(k) / n;
            return y ? std::sin(a) : std::cos(a);
        };
        for (std::size_t r = 0; r < stats.top_k_edges.size(); ++r) {
            const auto& e = stats.top_k_edges[r];
            out << r + 1 << ',' << e.i << ',' << e.j << ',' << data.series.location_ids[e.i] << ','
                << data.series.location_ids[e.j] << ',' << format_double(e.weight) << ',' << format_double(coord(e.i, false))
                << ',' << format_double(coord(e.i, true)) << ',' << format_double(coord(e.j, false)) << ','
                << format_double(coord(e.j, true)) << '\n';
        }
    }
    nlohmann::json degree = {{"n_locations", graph.n_locations},
                             {"n_edges", graph.edges.size()},
                             {"lambda", sel.lambda},
                             {"threshold", graph.threshold},
                             {"mean_degree", stats.mean_degree},
                             {"max_degree", stats.max_degree},
                             {"max_degree_node", stats.max_degree_node},
                             {"degrees", stats.degrees},
                             {"solver_iterations", sel.precision.stats.iterations},
                             {"config_hash", hash}};
    write_json(config.artifact(artifacts::kDegreeStats), degree);

    std::string msg = "learn-graph: lambda=" + format_double(sel.lambda) + ", " + std::to_string(graph.edges.size()) +
                      " edges, mean degree " + format_fixed(stats.mean_degree, 2);
    if (config.signals_path.empty() && fs::exists(config.artifact(artifacts::kTrueGraph))) {
        const auto truth = gmrf::read_graph(config.artifact(artifacts::kTrueGraph));
        const auto rec = gmrf::edge_recovery(graph, truth);
        write_json(config.artifact(artifacts::kGraphRecovery),
                   {{"true_positives", rec.true_positives},
                    {"false_positives", rec.false_positives},
                    {"false_negatives", rec.false_negatives},
                    {"precision", rec.precision},
                    {"recall", rec.recall},
                    {"f1", rec.f1},
                    {"config_hash", hash}});
        msg += ", F1 vs planted graph " + format_fixed(rec.f1, 3);
    }
    log(msg);
}

void cmd_train(const RunConfig& config, const Logger& log_in) {
    const Logger log = or_stderr(log_in);
    config.validate();
    const auto data = load_data(config);
    const std::string hash = config.hash();
    require_file(config.artifact(artifacts::kGraph), "learn-graph");
    std::string graph_hash;
    const auto graph = gmrf::read_graph(config.artifact(artifacts::kGraph), &graph_hash);
    check_hash(artifacts::kGraph, graph_hash, hash);

    transformer::ModelConfig mc = config.model;
    mc.n_locations = data.series.n_locations();
    mc.n_aux_features = data.series.n_aux();
    auto model = transformer::ForecasterModel::build(mc, graph, model_seed(config));
    const auto standardizer = dataio::Standardizer::fit(data.split.train);
    model.signal_mean = standardizer.mean;
    model.signal_scale = standardizer.scale;

    const auto train_raw = dataio::make_jobs(data.split.train, config.history, config.horizon, config.train_stride);
    const auto val_raw = dataio::make_jobs(data.split.validation, config.history, config.horizon, config.eval_stride);
    if (train_raw.empty()) fail(ErrorKind::InsufficientData, "training ranges are too short to form any job");
    const auto train_jobs = training::prepare_jobs(model, train_raw);
    const auto val_jobs = training::prepare_jobs(model, val_raw);
    log("train: " + std::to_string(model.parameter_count()) + " parameters, " + std::to_string(train_jobs.size()) +
        " training jobs, " + std::to_string(val_jobs.size()) + " validation jobs");

    training::TrainingSchedule schedule = config.training;
    schedule.seed = training_seed(config);
    const auto start = std::chrono::steady_clock::now();
    const auto result = training::train(model, train_jobs, val_jobs, schedule, config.loss, [&](const training::EpochRecord& r) {
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        log("  epoch " + std::to_string(r.epoch) + " train " + format_fixed(r.train_loss, 5) + " val " +
            format_fixed(r.val_loss, 5) + " (" + format_fixed(secs, 1) + " s)");
    });

    transformer::save_model(config.artifact(artifacts::kCheckpoint), model, hash);
    training::write_loss_curve(config.artifact(artifacts::kLossCurve), result.history, false, hash);
    training::write_loss_curve(config.artifact(artifacts::kValLossCurve), result.history, true, hash);
    auto epochs = nlohmann::json::array();
    for (const auto& e : result.history) epochs.push_back({{"epoch", e.epoch}, {"train_loss", e.train_loss}, {"val_loss", e.val_loss}});
    write_json(config.artifact(artifacts::kTrainingLog), {{"best_epoch", result.best_epoch},
                                                          {"best_val_loss", result.best_val_loss},
                                                          {"steps", result.steps},
                                                          {"parameter_count", model.parameter_count()},
                                                          {"epochs", epochs},
                                                          {"config_hash", hash}});
    log("train: best epoch " + std::to_string(result.best_epoch) + ", checkpoint " + config.artifact(artifacts::kCheckpoint));
}

void cmd_forecast(const RunConfig& config, const Logger& log_in) {
    const Logger log = or_stderr(log_in);
    config.validate();
    const std::string hash = config.hash();
    const auto model = load_checkpoint(config, hash);
    const auto data = load_data(config);
    const auto raw = test_jobs(config, data);
    const auto jobs = training::prepare_jobs(model, raw);
    const auto preds = training::forecast(model, jobs);
    auto out = open_out(config.artifact(artifacts::kPredictions));
    out << "# config_hash=" << hash << "\norigin_timestamp,step,location,prediction,truth\n";
    for (std::size_t j = 0; j < jobs.size(); ++j) {
        for (std::size_t k = 0; k < preds[j].rows(); ++k) {
            for (std::size_t i = 0; i < preds[j].cols(); ++i) {
                out << raw[j].origin_timestamp << ',' << k + 1 << ',' << data.series.location_ids[i] << ','
                    << format_double(preds[j](k, i)) << ',' << format_double(jobs[j].truths(k, i)) << '\n';
            }
        }
    }
    log("forecast: " + std::to_string(jobs.size()) + " jobs -> " + config.artifact(artifacts::kPredictions));
}

training::EvalReport cmd_evaluate(const RunConfig& config, const Logger& log_in) {
    const Logger log = or_stderr(log_in);
    config.validate();
    const std::string hash = config.hash();
    const auto model = load_checkpoint(config, hash);
    const auto data = load_data(config);
    const auto jobs = training::prepare_jobs(model, test_jobs(config, data));
    auto report = training::evaluate(model, jobs, config.loss.mape_threshold);
    report.seed = config.seed;
    report.config_hash = hash;
    training::write_report(config.artifact(artifacts::kEvalReport), report);
    std::vector<training::EvalReport> rows{report};
    if (fs::exists(config.artifact(artifacts::kVarReport))) {
        auto var = training::read_report(config.artifact(artifacts::kVarReport));
        if (var.config_hash == hash) rows.push_back(std::move(var));
    }
    training::write_step_table(config.artifact(artifacts::kEvalSteps), rows, hash);
    log("evaluate: RMSE " + format_fixed(report.rmse) + ", MAPE " + format_fixed(100.0 * report.mape) + "% over " +
        std::to_string(report.jobs) + " jobs");
    return report;
}

training::EvalReport cmd_baseline_var(const RunConfig& config, const Logger& log_in) {
    const Logger log = or_stderr(log_in);
    config.validate();
    const std::string hash = config.hash();
    const auto data = load_data(config);
    baselines::VarOptions opts = config.var;
    opts.aux_columns = baselines::independent_aux_columns(data.split.train, opts.intercept);
    const auto model = baselines::fit_var(data.split.train, opts);
    baselines::save_var(config.artifact(artifacts::kVarModel), model, hash);

    const auto jobs = test_jobs(config, data);
    const auto& test = data.split.test;
    std::vector<ad::Tensor> preds, truths;
    for (const auto& job : jobs) {
        if (job.origin + 1 < model.order) fail(ErrorKind::InsufficientHistory, "VAR history shorter than its order");
        const auto first = static_cast<Eigen::Index>(job.origin + 1 - model.order);
        const Matrix history = test.signals.middleRows(first, static_cast<Eigen::Index>(model.order));
        Matrix future(static_cast<Eigen::Index>(job.future_aux.rows()), static_cast<Eigen::Index>(job.future_aux.cols()));
        for (std::size_t r = 0; r < job.future_aux.rows(); ++r) {
            for (std::size_t c = 0; c < job.future_aux.cols(); ++c) future(r, c) = job.future_aux(r, c);
        }
        const Matrix f = baselines::forecast_var(model, history, future, config.horizon);
        ad::Tensor p = ad::Tensor::zeros(config.horizon, model.n_locations);
        for (std::size_t r = 0; r < config.horizon; ++r) {
            for (std::size_t c = 0; c < model.n_locations; ++c) p(r, c) = f(r, c);
        }
        preds.push_back(std::move(p));
        truths.emplace_back(job.truths.shape, job.truths.values);
    }
    auto report = training::evaluate_predictions(preds, truths, config.loss.mape_threshold);
    report.model = "var";
    report.seed = config.seed;
    report.config_hash = hash;
    training::write_report(config.artifact(artifacts::kVarReport), report);
    training::write_step_table(config.artifact(artifacts::kVarSteps), std::span<const training::EvalReport>(&report, 1), hash);
    log("baseline-var: order " + std::to_string(model.order) + ", " + std::to_string(opts.aux_columns.size()) + " of " +
        std::to_string(model.n_aux) + " aux columns, RMSE " + format_fixed(report.rmse) + ", MAPE " +
        format_fixed(100.0 * report.mape) + "%");
    return report;
}

int exit_code(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::Configuration:
        case ErrorKind::Parse:
            return 2;
        case ErrorKind::Dependency:
            return 3;
        case ErrorKind::Io:
            return 4;
        default:
            return 1;
    }
}

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Graph-sparsified Transformer forecasting pipeline"};
    app.require_subcommand(1);
    app.set_help_all_flag("--help-all", "Show help for every subcommand");

    std::string config_path;
    std::uint64_t seed = 0;
    std::string out_dir;
    struct Command {
        const char* name;
        const char* help;
        std::function<void(const RunConfig&)> action;
    };
    const Logger log = [&err](const std::string& line) { err << line << '\n'; };
    const std::vector<Command> commands = {
        {"synth", "Generate a synthetic dataset with a planted dependency graph", [&](const RunConfig& c) { cmd_synth(c, log); }},
        {"learn-graph", "Estimate the sparse precision matrix and threshold it into a dependency graph",
         [&](const RunConfig& c) { cmd_learn_graph(c, log); }},
        {"train", "Train the graph-sparsified Transformer", [&](const RunConfig& c) { cmd_train(c, log); }},
        {"forecast", "Write autoregressive test-set forecasts", [&](const RunConfig& c) { cmd_forecast(c, log); }},
        {"evaluate", "Compute RMSE/MAPE on the test range", [&](const RunConfig& c) { cmd_evaluate(c, log); }},
        {"baseline-var", "Fit and evaluate the vector autoregression baseline",
         [&](const RunConfig& c) { cmd_baseline_var(c, log); }},
    };
    std::vector<CLI::App*> subs;
    std::vector<CLI::Option*> seed_opts;
    for (const auto& c : commands) {
        auto* sub = app.add_subcommand(c.name, c.help);
        sub->add_option("--config", config_path, "Run configuration JSON");
        seed_opts.push_back(sub->add_option("--seed", seed, "Seed overriding the config's seed"));
        sub->add_option("--out", out_dir, "Output directory for artifacts");
        subs.push_back(sub);
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e, out, err);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e, out, err);
    } catch (const CLI::ParseError& e) {
        err << nlohmann::json{{"error", "usage"}, {"message", e.what()}}.dump() << '\n';
        return e.get_exit_code() == 0 ? 2 : e.get_exit_code();
    }

    try {
        for (std::size_t k = 0; k < subs.size(); ++k) {
            if (!subs[k]->parsed()) continue;
            RunConfig config = config_path.empty() ? RunConfig{} : load_config(config_path);
            if (seed_opts[k]->count() > 0) config.seed = seed;
            if (!out_dir.empty()) config.out_dir = out_dir;
            commands[k].action(config);
        }
    } catch (const Error& e) {
        err << nlohmann::json{{"error", std::string(to_string(e.kind()))}, {"message", e.what()}}.dump() << '\n';
        return exit_code(e.kind());
    } catch (const std::exception& e) {
        err << nlohmann::json{{"error", "internal"}, {"message", e.what()}}.dump() << '\n';
        return 1;
    }
    return 0;
}

}  // namespace forecaster::cli
