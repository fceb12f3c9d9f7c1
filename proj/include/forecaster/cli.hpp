#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "forecaster/baselines.hpp"
#include "forecaster/dataio.hpp"
#include "forecaster/error.hpp"
#include "forecaster/gmrf.hpp"
#include "forecaster/training.hpp"
#include "forecaster/transformer.hpp"

namespace forecaster::cli {

struct SplitConfig {
    // Row ranges; when empty the 80/10/10 fractions below apply.
    std::vector<dataio::RowRange> train;
    std::optional<dataio::RowRange> validation;
    std::optional<dataio::RowRange> test;
    double train_fraction = 0.8;
    double validation_fraction = 0.1;

    // Concrete ranges for a series of `length` rows.
    void resolve(std::size_t length, std::vector<dataio::RowRange>& train_out, dataio::RowRange& val_out,
                 dataio::RowRange& test_out) const;
};

struct GmrfConfig {
    std::vector<double> lambdas = {1e-3, 1e-2, 1e-1, 3e-1};
    double threshold = 0.1;
    std::size_t top_k = 10;
    gmrf::SolverOptions solver;
};

struct RunConfig {
    std::uint64_t seed = 0;
    std::string out_dir = "out";
    // External data; when empty, synth output in out_dir is used.
    std::string signals_path;
    std::string aux_path;

    dataio::SyntheticSpec synth;
    std::size_t length = 4392;
    SplitConfig split;
    GmrfConfig gmrf;
    transformer::ModelConfig model;  // n_locations and n_aux_features come from the data
    dataio::HistoryFilterSpec history;
    std::size_t horizon = 3;
    std::size_t train_stride = 1;
    std::size_t eval_stride = 1;
    training::TrainingSchedule training;
    training::LossConfig loss;
    baselines::VarOptions var;

    void validate() const;
    // Everything except filesystem paths.
    nlohmann::json to_json() const;
    static RunConfig from_json(const nlohmann::json& doc);
    std::string hash() const;

    std::string signals_file() const;
    std::string aux_file() const;
    std::string artifact(const std::string& name) const;
};

RunConfig load_config(const std::string& path);

// Seeds for the independent stages, all derived from RunConfig::seed.
std::uint64_t synth_seed(const RunConfig& config);
std::uint64_t model_seed(const RunConfig& config);
std::uint64_t training_seed(const RunConfig& config);

struct LoadedData {
    SpatialSeries series;
    dataio::SeriesSplit split;
};

LoadedData load_data(const RunConfig& config);

// Artifact file names inside out_dir.
namespace artifacts {
inline constexpr const char* kSignals = "signals.csv";
inline constexpr const char* kAux = "aux.csv";
inline constexpr const char* kTrueGraph = "true_graph.json";
inline constexpr const char* kTruePrecision = "true_precision.csv";
inline constexpr const char* kGraph = "graph.json";
inline constexpr const char* kPrecision = "precision.csv";
inline constexpr const char* kCorrelation = "correlation.csv";
inline constexpr const char* kCorrelationTriplets = "correlation_triplets.csv";
inline constexpr const char* kLambdaSelection = "lambda_selection.csv";
inline constexpr const char* kDegreeStats = "degree_stats.json";
inline constexpr const char* kTopEdges = "top_edges.csv";
inline constexpr const char* kGraphRecovery = "graph_recovery.json";
inline constexpr const char* kCheckpoint = "model.ckpt";
inline constexpr const char* kLossCurve = "loss_curve.csv";
inline constexpr const char* kValLossCurve = "val_loss_curve.csv";
inline constexpr const char* kTrainingLog = "training_log.json";
inline constexpr const char* kPredictions = "predictions.csv";
inline constexpr const char* kEvalReport = "eval_report.json";
inline constexpr const char* kEvalSteps = "eval_steps.csv";
inline constexpr const char* kVarModel = "var_model.csv";
inline constexpr const char* kVarReport = "var_report.json";
inline constexpr const char* kVarSteps = "var_steps.csv";
}  // namespace artifacts

// Log sink for progress lines; defaults to stderr.
using Logger = std::function<void(const std::string&)>;

void cmd_synth(const RunConfig& config, const Logger& log = {});
void cmd_learn_graph(const RunConfig& config, const Logger& log = {});
void cmd_train(const RunConfig& config, const Logger& log = {});
void cmd_forecast(const RunConfig& config, const Logger& log = {});
training::EvalReport cmd_evaluate(const RunConfig& config, const Logger& log = {});
training::EvalReport cmd_baseline_var(const RunConfig& config, const Logger& log = {});

// Parses argv and dispatches; returns the process exit code.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

// Exit codes by error kind; 0 is success.
int exit_code(ErrorKind kind);

}  // namespace forecaster::cli
